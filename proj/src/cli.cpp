#include "esr/cli.hpp"

#include "esr/archive.hpp"
#include "esr/image.hpp"
#include "esr/kernels.hpp"
#include "esr/metrics.hpp"
#include "esr/model_zoo.hpp"
#include "esr/parallel.hpp"
#include "esr/rewrite.hpp"
#include "esr/scoring.hpp"
#include "esr/selftest.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>
#include <sstream>

namespace esr {

namespace {

constexpr const char* kVerbs[] = {"init", "infer", "fuse", "psnr", "params", "flops",
                                  "bench", "score", "kernels", "selftest"};

// Shared execution flags.
struct RunFlags {
  std::string mode = "fused";
  int threads = 1;

  ExecOptions options() const {
    ExecOptions o;
    o.mode = mode == "unfused" ? ExecMode::Unfused : ExecMode::Fused;
    o.threads = threads == 0 ? hardware_threads() : threads;
    return o;
  }
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--mode", f.mode, "Attention execution plan")->check(CLI::IsMember({"fused", "unfused"}));
  cmd->add_option("--threads", f.threads, "Worker threads inside conv ops (0 = all cores)")->check(CLI::NonNegativeNumber);
}

std::string fixed(double v, int prec) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text)) throw Error("cannot write '" + path + "'");
}

std::vector<Tensor> probe_images(uint64_t seed, int count, int size) {
  SeededUniform rng(seed);
  std::vector<Tensor> images;
  for (int i = 0; i < count; ++i) images.push_back(rng.tensor({1, 3, size, size}, 0.0f, 1.0f));
  return images;
}

nlohmann::json discrepancy_json(const Discrepancy& d) { return {{"max_abs", d.max_abs}, {"max_rel", d.max_rel}}; }

std::string usage_text() {
  std::ostringstream os;
  os << "usage: esr <verb> [options]\n"
        "verbs:\n"
        "  init      write a seeded demo archive (--model spanv2|span, --seed, -o)\n"
        "  infer     archive + PPM in -> upscaled PPM out\n"
        "  fuse      fold adapters into plain convs, write archive + equivalence report\n"
        "  psnr      PSNR of two PPM images with border discard\n"
        "  params    parameter count of an archive or built-in model\n"
        "  flops     FLOPs (1 per MAC) at a given input size\n"
        "  bench     wall-clock runtime, warmup + repetitions\n"
        "  score     challenge scores and ranking from a JSON/CSV metrics table\n"
        "  kernels   run the auxiliary kernels on seeded data and report their properties\n"
        "  selftest  run the oracle suites\n"
        "run 'esr <verb> --help' for the options of one verb\n";
  return os.str();
}

// Treats a stored tensor as NCHW (leading extents padded with 1) for the
// wavelet and entropy kernels, and as rows = first extent for Newton-Schulz.
nlohmann::json kernel_report(uint64_t seed, int size, const std::string& archive, const std::string& name) {
  SeededUniform rng(seed);
  Tensor x;
  Matrix m;
  nlohmann::json j;
  if (!archive.empty()) {
    if (name.empty()) throw Error("kernels: --tensor is required with --archive");
    const WeightArchive a = decode_archive(read_file(archive));
    const ArchiveTensor* t = a.find(name);
    if (!t) throw Error("kernels: no tensor named '" + name + "' in " + archive);
    if (t->shape.empty() || t->shape.size() > 4) throw Error("kernels: tensor must have 1 to 4 dimensions");
    int64_t ext[4] = {1, 1, 1, 1};
    std::copy(t->shape.begin(), t->shape.end(), ext + 4 - t->shape.size());
    x = Tensor({ext[0], ext[1], ext[2], ext[3]}, t->values);
    const int rows = static_cast<int>(t->shape.front());
    m = Matrix(rows, static_cast<int>(t->values.size() / rows), t->values);
    j["tensor"] = {{"name", name}, {"shape", t->shape}};
  } else {
    if (size % 2 != 0) throw Error("kernels: --size must be even");
    x = rng.tensor({1, 4, size, size});
    m = Matrix(8, 8);
    rng.fill(m.data(), -1.0f, 1.0f);
  }

  if (x.h() % 2 == 0 && x.w() % 2 == 0) {
    const WaveletSubbands sb = haar_dwt(x);
    double ex = 0.0, es = 0.0;
    for (float v : x.data()) ex += double{v} * v;
    for (const Tensor* t : {&sb.ll, &sb.hl, &sb.lh, &sb.hh})
      for (float v : t->data()) es += double{v} * v;
    j["haar"] = {{"roundtrip_max_abs", compare(haar_idwt(sb), x).max_abs},
                 {"energy_rel_error", ex > 0 ? std::abs(es - ex) / ex : 0.0}};
  } else {
    j["haar"] = nullptr;  // odd extents
  }
  if (x.h() * x.w() >= 2) {
    const Tensor h = entropy_attention(x);
    j["entropy"] = std::vector<float>(h.data().begin(), h.data().end());
  } else {
    j["entropy"] = nullptr;
  }
  const Matrix o = newton_schulz(frobenius_normalize(m), 5);
  const Matrix oot = matmul(o, o.transposed());
  double dev = 0.0;
  for (int i = 0; i < oot.rows(); ++i) dev = std::max(dev, std::abs(oot(i, i) - 1.0));
  j["newton_schulz"] = {{"rows", m.rows()}, {"cols", m.cols()}, {"phi_of_one", newton_schulz_scalar(1.0)},
                        {"max_diag_dev_of_OOt", dev}};
  const Tensor student[] = {x};
  Tensor other = rng.tensor({x.n(), 6, x.h(), x.w()});
  const Tensor teacher[] = {other};
  j["affinity_loss"] = {{"random_teacher", affinity_loss(student, teacher)},
                        {"identical", affinity_loss(student, student)}};
  return j;
}

ModelGraph model_from(const std::string& archive, const std::string& model) {
  if (!archive.empty()) return load_archive(archive).graph;
  return build_model(default_meta(model));
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty()) {
    err << "error: no verb given\n" << usage_text();
    return 2;
  }
  const std::string& verb = args.front();
  if (verb != "--help" && verb != "-h" && std::find(std::begin(kVerbs), std::end(kVerbs), verb) == std::end(kVerbs)) {
    err << "error: unknown verb '" << verb << "'\n" << usage_text();
    return 2;
  }

  CLI::App app{"Efficient super-resolution toolkit", "esr"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // init
  std::string init_model = "spanv2", init_out;
  uint64_t init_seed = 0;
  int init_channels = 0, init_blocks = 0, init_scale = 0;
  bool init_adapters = false;
  auto* init = app.add_subcommand("init", "Write a seeded demo archive");
  init->add_option("--model", init_model)->check(CLI::IsMember({"spanv2", "span"}));
  init->add_option("--seed", init_seed, "Weight seed (recorded in the archive)");
  init->add_option("--channels", init_channels)->check(CLI::PositiveNumber);
  init->add_option("--blocks", init_blocks)->check(CLI::PositiveNumber);
  init->add_option("--scale", init_scale)->check(CLI::PositiveNumber);
  init->add_flag("--adapters", init_adapters, "Attach 1x1 branch, identity and LoRA adapters");
  init->add_option("-o,--output", init_out)->required();

  // infer
  std::string infer_archive, infer_in, infer_out;
  RunFlags infer_flags;
  auto* infer = app.add_subcommand("infer", "Upscale a PPM image");
  infer->add_option("archive", infer_archive)->required()->check(CLI::ExistingFile);
  infer->add_option("input", infer_in)->required()->check(CLI::ExistingFile);
  infer->add_option("-o,--output", infer_out)->required();
  add_run_flags(infer, infer_flags);

  // fuse
  std::string fuse_in, fuse_out, fuse_report;
  bool fuse_compose = false;
  uint64_t fuse_seed = 7;
  int fuse_probe_count = 3, fuse_probe_size = 24;
  auto* fuse = app.add_subcommand("fuse", "Apply re-parameterisation rewrites");
  fuse->add_option("archive", fuse_in)->required()->check(CLI::ExistingFile);
  fuse->add_option("-o,--output", fuse_out)->required();
  fuse->add_option("--report", fuse_report, "Write the JSON report here instead of stdout");
  fuse->add_flag("--compose", fuse_compose, "Also fold conv->conv chains (changes border pixels)");
  fuse->add_option("--seed", fuse_seed, "Probe seed");
  fuse->add_option("--probe-count", fuse_probe_count)->check(CLI::PositiveNumber);
  fuse->add_option("--probe-size", fuse_probe_size)->check(CLI::PositiveNumber);

  // psnr
  std::string psnr_a, psnr_b;
  int psnr_border = kChallengeBorder;
  auto* psnr_cmd = app.add_subcommand("psnr", "PSNR in dB between two PPM images");
  psnr_cmd->add_option("prediction", psnr_a)->required()->check(CLI::ExistingFile);
  psnr_cmd->add_option("reference", psnr_b)->required()->check(CLI::ExistingFile);
  psnr_cmd->add_option("--border", psnr_border)->check(CLI::NonNegativeNumber);

  // params / flops
  std::string count_archive, count_model = "spanv2";
  int flops_size = kFlopsInputSize;
  auto* params = app.add_subcommand("params", "Parameter count");
  params->add_option("archive", count_archive)->check(CLI::ExistingFile);
  params->add_option("--model", count_model)->check(CLI::IsMember({"spanv2", "span"}));
  auto* flops = app.add_subcommand("flops", "FLOPs at size x size input");
  flops->add_option("archive", count_archive)->check(CLI::ExistingFile);
  flops->add_option("--model", count_model)->check(CLI::IsMember({"spanv2", "span"}));
  flops->add_option("--size", flops_size)->check(CLI::PositiveNumber);

  // bench
  std::string bench_archive, bench_model = "spanv2";
  std::vector<std::string> bench_images;
  int bench_warmup = 1, bench_reps = 3, bench_size = 64, bench_count = 2;
  uint64_t bench_seed = 1;
  bool bench_paired = false;
  RunFlags bench_flags;
  auto* bench = app.add_subcommand("bench", "Wall-clock runtime");
  bench->add_option("archive", bench_archive)->check(CLI::ExistingFile);
  bench->add_option("--model", bench_model)->check(CLI::IsMember({"spanv2", "span"}));
  bench->add_option("--images", bench_images, "PPM inputs; seeded random images when omitted")
      ->check(CLI::ExistingFile);
  bench->add_option("--warmup", bench_warmup)->check(CLI::NonNegativeNumber);
  bench->add_option("--reps", bench_reps)->check(CLI::PositiveNumber);
  bench->add_option("--size", bench_size, "Side of generated images")->check(CLI::PositiveNumber);
  bench->add_option("--count", bench_count, "Number of generated images")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed);
  bench->add_flag("--paired", bench_paired, "Time fused and unfused plans back to back");
  add_run_flags(bench, bench_flags);

  // score
  std::string score_in, score_json;
  auto* score = app.add_subcommand("score", "Challenge scoring");
  score->add_option("table", score_in, "JSON or CSV metrics table")->required()->check(CLI::ExistingFile);
  score->add_option("--json", score_json, "Also write the score table as JSON ('-' prints it instead of text)");

  // kernels
  uint64_t kernels_seed = 3;
  int kernels_size = 16;
  std::string kernels_archive, kernels_tensor;
  auto* kernels = app.add_subcommand("kernels", "Auxiliary kernel report on seeded data or an archive tensor");
  kernels->add_option("--seed", kernels_seed);
  kernels->add_option("--size", kernels_size, "Even spatial side")->check(CLI::PositiveNumber);
  kernels->add_option("--archive", kernels_archive)->check(CLI::ExistingFile);
  kernels->add_option("--tensor", kernels_tensor, "Tensor name inside --archive")->needs("--archive");

  // selftest
  uint64_t selftest_seed = 20250;
  auto* selftest = app.add_subcommand("selftest", "Run the oracle suites");
  selftest->add_option("--seed", selftest_seed);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << (app.get_subcommands().empty() ? usage_text() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? usage_text() : subs.front()->help());
    return 2;
  }

  try {
    if (init->parsed()) {
      GraphMeta meta = default_meta(init_model);
      if (init_channels) meta.channels = init_channels;
      if (init_blocks) meta.blocks = init_blocks;
      if (init_scale) meta.scale = init_scale;
      ModelGraph g = build_model(meta);
      initialize(g, init_seed);
      if (init_adapters) attach_adapters(g, {}, init_seed + 1);
      save_archive(g, init_out, init_seed);
      out << "wrote " << init_out << " (" << meta.model << ", " << count_params(g) << " params, seed " << init_seed
          << ")\n";
    } else if (infer->parsed()) {
      const ModelGraph g = load_archive(infer_archive).graph;
      const Tensor x = image_to_tensor(read_ppm(infer_in));
      const Tensor y = g.run(x, infer_flags.options());
      write_ppm(tensor_to_image(y), infer_out);
      out << "wrote " << infer_out << " (" << y.w() << "x" << y.h() << ")\n";
    } else if (fuse->parsed()) {
      const LoadedModel src = load_archive(fuse_in);
      RewriteOptions opt;
      opt.compose = fuse_compose;
      opt.probe_seed = fuse_seed;
      const RewriteResult rw = apply_rewrites(src.graph, opt);

      nlohmann::json report;
      report["rewrites"] = nlohmann::json::array();
      bool layers_ok = true;
      for (const RewriteRecord& r : rw.records) {
        layers_ok = layers_ok && r.error.max_rel <= kRelTol;
        report["rewrites"].push_back({{"layer", r.layer},
                                      {"kind", r.kind},
                                      {"error", discrepancy_json(r.error)},
                                      {"interior_only", r.interior_only},
                                      {"params_before", r.params_before},
                                      {"params_after", r.params_after}});
      }
      Discrepancy worst;
      for (const Tensor& img : probe_images(fuse_seed, fuse_probe_count, fuse_probe_size)) {
        const Discrepancy d = compare(rw.graph.run(img), src.graph.run(img));
        worst.max_abs = std::max(worst.max_abs, d.max_abs);
        worst.max_rel = std::max(worst.max_rel, d.max_rel);
      }
      const bool end_ok = worst.max_rel <= kRelTol;
      report["end_to_end"] = discrepancy_json(worst);
      report["end_to_end"]["probe_images"] = fuse_probe_count;
      report["end_to_end"]["probe_size"] = fuse_probe_size;
      report["tolerance"] = {{"rel", kRelTol}, {"abs", kAbsTol}};
      report["params_before"] = count_params(src.graph);
      report["params_after"] = count_params(rw.graph);
      report["passed"] = layers_ok && end_ok;
      if (fuse_report.empty())
        out << report.dump(2) << "\n";
      else
        write_text(fuse_report, report.dump(2) + "\n");
      if (!end_ok) {
        err << "error: fused model differs from the source on the probe set (max_rel " << worst.max_rel
            << "); archive not written\n";
        return 1;
      }
      save_archive(rw.graph, fuse_out, src.seed);
    } else if (psnr_cmd->parsed()) {
      out << fixed(psnr(read_ppm(psnr_a), read_ppm(psnr_b), psnr_border), 3) << "\n";
    } else if (params->parsed()) {
      out << count_params(model_from(count_archive, count_model)) << "\n";
    } else if (flops->parsed()) {
      out << count_flops(model_from(count_archive, count_model), flops_size, flops_size) << "\n";
    } else if (bench->parsed()) {
      ModelGraph g = model_from(bench_archive, bench_model);
      if (bench_archive.empty()) initialize(g, bench_seed);
      std::vector<Tensor> images;
      for (const std::string& p : bench_images) images.push_back(image_to_tensor(read_ppm(p)));
      if (images.empty()) images = probe_images(bench_seed, bench_count, bench_size);

      MetricsReport report;
      report.params = count_params(g);
      report.flops = count_flops(g, static_cast<int>(images.front().h()), static_cast<int>(images.front().w()));
      ExecOptions opt = bench_flags.options();
      TrafficCounter traffic;
      opt.attention_traffic = &traffic;
      report.runtime = bench_runtime(g, images, bench_warmup, bench_reps, opt);
      report.traffic = traffic;
      nlohmann::json j = report.to_json();
      j.erase("psnr_db");
      j.erase("psnr_mean_db");
      j["mode"] = bench_flags.mode;
      j["threads"] = opt.threads;
      if (bench_paired) {
        ExecOptions fused = bench_flags.options(), unfused = fused;
        fused.mode = ExecMode::Fused;
        unfused.mode = ExecMode::Unfused;
        const RuntimeStats a = bench_runtime(g, images, bench_warmup, bench_reps, fused);
        const RuntimeStats b = bench_runtime(g, images, bench_warmup, bench_reps, unfused);
        j["paired"] = {{"fused_mean_ms", a.mean_ms}, {"unfused_mean_ms", b.mean_ms}};
      }
      out << j.dump(2) << "\n";
    } else if (score->parsed()) {
      const std::string text = read_text(score_in);
      const bool is_json = text.find_first_not_of(" \t\r\n") != std::string::npos &&
                           text[text.find_first_not_of(" \t\r\n")] == '{';
      ScoreInput in;
      try {
        in = is_json ? parse_score_json(nlohmann::json::parse(text)) : parse_score_csv(text);
      } catch (const nlohmann::json::exception& e) {
        throw Error("score: malformed JSON table: " + std::string(e.what()));
      }
      const ScoreTable table = rank_table(in.teams, in.baseline, in.gate);
      if (score_json == "-") {
        out << table.to_json().dump(2) << "\n";
      } else {
        out << table.to_text();
        if (!score_json.empty()) write_text(score_json, table.to_json().dump(2) + "\n");
      }
    } else if (kernels->parsed()) {
      out << kernel_report(kernels_seed, kernels_size, kernels_archive, kernels_tensor).dump(2) << "\n";
    } else if (selftest->parsed()) {
      const auto results = run_selftest(selftest_seed);
      int failed = 0;
      for (const CheckResult& r : results) {
        out << (r.passed ? "PASS " : "FAIL ") << r.name << (r.detail.empty() ? "" : "  (" + r.detail + ")") << "\n";
        failed += r.passed ? 0 : 1;
      }
      out << results.size() - failed << "/" << results.size() << " checks passed\n";
      if (failed) {
        err << "error: " << failed << " selftest check(s) failed\n";
        return 1;
      }
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace esr
