// bssl: train, evaluate and self-check boosted semi-supervised models.

#include "bssl/config.hpp"
#include "bssl/error.hpp"
#include "bssl/trainer.hpp"
#include "bssl/verify.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitDivergence = 3;

int exit_code(const bssl::Error& e) {
  return e.kind() == bssl::ErrorKind::Divergence ? kExitDivergence : kExitConfig;
}

struct Options {
  std::string config;
  std::string checkpoint;
  std::string out;
  std::size_t topk = 0;
  int threads = -1;
  std::int64_t seed = -1;
  bool dry_run = false;
  bool inject_fault = false;
};

bssl::ExperimentConfig resolved_config(const Options& opt) {
  bssl::ExperimentConfig cfg = bssl::load_experiment(opt.config);
  if (opt.seed >= 0) cfg.train.seed = std::uint64_t(opt.seed);
  if (opt.threads >= 0) cfg.train.threads = opt.threads;
  if (!opt.out.empty()) cfg.output.dir = opt.out;
  cfg.validate();
  return cfg;
}

std::string perm_string(const bssl::Permutation& p) {
  std::string s;
  for (std::size_t i = 0; i < p.perm.size(); ++i) s += (i ? " " : "") + std::to_string(p.perm[i]);
  return s;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) bssl::fail(bssl::ErrorKind::Io, "cannot write " + path.string());
}

json topk_json(const bssl::TopkCurve& curve) {
  json rows = json::array();
  for (std::size_t k = 0; k < curve.accuracy.size(); ++k) {
    rows.push_back({{"k", k + 1},
                    {"accuracy", curve.accuracy[k]},
                    {"perm_accuracy", curve.perm_accuracy[k]},
                    {"perm", curve.perms[k].perm}});
  }
  return rows;
}

void print_topk(const bssl::TopkCurve& curve) {
  std::printf("k,accuracy,perm_accuracy,perm\n");
  for (std::size_t k = 0; k < curve.accuracy.size(); ++k) {
    std::printf("%zu,%.6f,%.6f,%s\n", k + 1, curve.accuracy[k], curve.perm_accuracy[k],
                perm_string(curve.perms[k]).c_str());
  }
}

int cmd_train(const Options& opt) {
  const bssl::ExperimentConfig cfg = resolved_config(opt);
  if (opt.dry_run) {
    std::cout << bssl::to_json(cfg);
    return kExitOk;
  }
  const auto start = std::chrono::steady_clock::now();
  const bssl::Dataset data = bssl::build_dataset(cfg.dataset);
  const bssl::DatasetSplit split =
      bssl::partition(data, cfg.split.labels_per_class, cfg.split.test_frac, cfg.split.seed);
  const fs::path dir = cfg.output.dir;
  fs::create_directories(dir);
  write_text(dir / "config.json", bssl::to_json(cfg));

  bssl::TrainState state = opt.checkpoint.empty() ? bssl::init_train_state(cfg.train, data, split)
                                                  : bssl::load_train_checkpoint(opt.checkpoint, cfg.train);
  bssl::TrainHooks hooks;
  hooks.divergence_checkpoint = dir / "diverged.ckpt";
  hooks.after_iteration = [&](const bssl::TrainState& s) {
    const auto& r = s.rows.back();
    std::printf("iter %d/%d  test_cls_acc %.4f  test_clu_acc %.4f\n", s.completed_iters, cfg.train.iters,
                r.test_cls_acc, r.test_clu_acc);
    std::fflush(stdout);
    if (cfg.output.checkpoint_every > 0 && s.completed_iters % cfg.output.checkpoint_every == 0)
      bssl::save_train_checkpoint(dir / "checkpoint.ckpt", cfg.train, s);
    return true;
  };
  const bssl::RunRecord rec = bssl::train(cfg.train, data, split, state, hooks);
  for (const auto& w : rec.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());

  write_text(dir / "metrics.csv", bssl::metrics_csv(rec.rows));
  bssl::save_train_checkpoint(dir / "checkpoint.ckpt", cfg.train, state);

  json summary;
  summary["version"] = bssl::kVersion;
  summary["dataset"] = {{"kind", bssl::to_string(cfg.dataset.kind)},
                        {"shape", data.shape.describe()},
                        {"classes", data.num_classes},
                        {"samples", data.size()}};
  summary["seeds"] = {{"train", cfg.train.seed}, {"dataset", cfg.dataset.seed}, {"split", cfg.split.seed}};
  summary["split"] = {{"labeled", split.labeled_count()},
                      {"unlabeled", split.unlabeled.size()},
                      {"test", split.test.size()}};
  summary["completed_iters"] = rec.completed_iters;
  summary["warnings"] = rec.warnings;
  if (rec.final_eval) {
    const auto& e = *rec.final_eval;
    summary["classification_acc"] = e.classification_acc;
    summary["clustering_acc"] = e.clustering_acc;
    summary["best_perm"] = e.best_perm.perm;
    summary["cluster_sizes"] = e.cluster_sizes;
    std::printf("classification_acc %.4f\nclustering_acc %.4f\nbest_perm %s\n", e.classification_acc,
                e.clustering_acc, perm_string(e.best_perm).c_str());
  } else {
    std::fprintf(stderr, "warning: empty test set, no final evaluation\n");
  }
  if (opt.topk > 0 && rec.final_eval && data.shape.is_square_image()) {
    const auto lab = split.labeled();
    const auto curve = bssl::topk_permutation_accuracy(
        bssl::ema_model(state.model, state.ema), data.rows(lab), data.labels_of(lab), data.rows(split.test),
        data.labels_of(split.test), opt.topk, cfg.train.temperature, cfg.train.threads);
    summary["topk"] = topk_json(curve);
  } else if (opt.topk > 0) {
    std::fprintf(stderr, "warning: --topk needs square images and a test set; skipped\n");
  }
  summary["config"] = json::parse(bssl::to_json(cfg));
  summary["elapsed_seconds"] =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  std::printf("wrote %s\n", dir.string().c_str());
  return kExitOk;
}

int cmd_eval(const Options& opt) {
  if (opt.checkpoint.empty()) bssl::fail(bssl::ErrorKind::Config, "eval needs --checkpoint");
  const bssl::ExperimentConfig cfg = resolved_config(opt);
  const bssl::Dataset data = bssl::build_dataset(cfg.dataset);
  const bssl::DatasetSplit split =
      bssl::partition(data, cfg.split.labels_per_class, cfg.split.test_frac, cfg.split.seed);
  const bssl::ModelCheckpoint ckpt = bssl::load_eval_checkpoint(opt.checkpoint);
  if (ckpt.model.num_clusters() != data.num_classes)
    bssl::fail(bssl::ErrorKind::Config, "checkpoint has K=" + std::to_string(ckpt.model.num_clusters()) +
                                            " but the dataset has " + std::to_string(data.num_classes) + " classes");
  if (!(ckpt.model.spec().input == data.shape))
    bssl::fail(bssl::ErrorKind::Config, "checkpoint expects " + ckpt.model.spec().input.describe() +
                                            " inputs, dataset provides " + data.shape.describe());
  const bssl::Model model = bssl::ema_model(ckpt.model, ckpt.ema);
  const int threads = cfg.train.threads;
  const auto e = bssl::evaluate(model, data.rows(split.test), data.labels_of(split.test), threads);
  std::printf("classification_acc %.4f\nclustering_acc %.4f\nbest_perm %s\n", e.classification_acc,
              e.clustering_acc, perm_string(e.best_perm).c_str());
  if (opt.topk > 0) {
    const auto lab = split.labeled();
    print_topk(bssl::topk_permutation_accuracy(model, data.rows(lab), data.labels_of(lab),
                                               data.rows(split.test), data.labels_of(split.test), opt.topk,
                                               cfg.train.temperature, threads));
  }
  return kExitOk;
}

int cmd_verify(const Options& opt) {
  bssl::VerifyOptions v;
  v.seed = opt.seed >= 0 ? std::uint64_t(opt.seed) : 0;
  v.corrupt_costs = opt.inject_fault;
  bool ok = true;
  std::printf("%-34s %6s %9s %11s %9s %8s  %s\n", "check", "cases", "failures", "worst", "tol", "seconds",
              "status");
  for (const auto& r : bssl::run_verification(v)) {
    ok = ok && r.passed();
    std::printf("%-34s %6d %9d %11.3e %9.1e %8.2f  %s\n", r.name.c_str(), r.cases, r.failures, r.worst,
                r.tolerance, r.seconds, r.passed() ? "PASS" : "FAIL");
  }
  return ok ? kExitOk : kExitFailure;
}

template <class F>
double seconds_per_call(int reps, F&& f) {
  const auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() / reps;
}

int cmd_bench(const Options& opt) {
  const int threads = opt.threads >= 0 ? opt.threads : 1;
  bssl::Rng rng(opt.seed >= 0 ? std::uint64_t(opt.seed) : 0);
  std::uniform_real_distribution<double> u(0, 1);
  const auto random = [&](int r, int c) {
    bssl::Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
  };
  std::printf("%-40s %12s\n", "operation", "ms/call");
  const auto row = [](const char* name, double s) { std::printf("%-40s %12.3f\n", name, 1e3 * s); };

  const bssl::Matrix c64 = random(64, 64);
  row("hungarian 64x64", seconds_per_call(20, [&] { bssl::hungarian_solve(c64); }));
  const bssl::Matrix c10 = random(10, 10);
  row("murty 10x10 k=100", seconds_per_call(5, [&] { bssl::murty_kbest(c10, 100); }));

  bssl::ModelSpec mlp;
  mlp.input = bssl::DataShape::vector(16);
  mlp.num_clusters = 10;
  const bssl::Model m(mlp, 1);
  const bssl::Matrix x = random(448, 16);
  row("mlp forward 448x16", seconds_per_call(20, [&] { bssl::forward(m, x, threads); }));
  row("mlp forward+backward 448x16", seconds_per_call(10, [&] {
        const auto tape = bssl::forward_recorded(m, x);
        bssl::backward(m, tape, tape.outputs.cluster, bssl::Matrix());
      }));

  bssl::ModelSpec conv;
  conv.input = bssl::DataShape::image(8, 8, 1);
  conv.trunk = bssl::TrunkKind::Conv;
  conv.num_clusters = 4;
  const bssl::Model cm(conv, 1);
  const bssl::Matrix xi = random(256, 64);
  row("conv forward 256x8x8", seconds_per_call(5, [&] { bssl::forward(cm, xi, threads); }));
  row("conv forward+backward 256x8x8", seconds_per_call(3, [&] {
        const auto tape = bssl::forward_recorded(cm, xi);
        bssl::backward(cm, tape, tape.outputs.cluster, tape.outputs.rot_logits);
      }));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boosted semi-supervised learning: train, evaluate and verify"};
  app.set_version_flag("--version", bssl::kVersion);
  app.require_subcommand(1);
  Options opt;

  auto* train = app.add_subcommand("train", "Run the alternating schedule and write metrics, summary and checkpoints");
  train->add_option("--config", opt.config, "Experiment config (JSON, comments allowed)")->required();
  train->add_option("--checkpoint", opt.checkpoint, "Resume from this training checkpoint");
  train->add_option("--out", opt.out, "Output directory (overrides output.dir)");
  train->add_option("--seed", opt.seed, "Training seed (overrides train.seed)")->check(CLI::NonNegativeNumber);
  train->add_option("--threads", opt.threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  train->add_option("--topk", opt.topk, "Append the top-k permutation curve to summary.json");
  train->add_flag("--dry-run", opt.dry_run, "Validate the config, print it with defaults resolved, write nothing");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint's EMA model on the config's test split");
  eval->add_option("--config", opt.config, "Experiment config naming the dataset and split")->required();
  eval->add_option("--checkpoint", opt.checkpoint, "Checkpoint to evaluate")->required();
  eval->add_option("--topk", opt.topk, "Print the top-k permutation curve as CSV");
  eval->add_option("--threads", opt.threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);

  auto* verify = app.add_subcommand("verify", "Check solvers and gradients against brute-force oracles");
  verify->add_option("--seed", opt.seed, "Seed for the random instances")->check(CLI::NonNegativeNumber);
  verify->add_flag("--inject-fault", opt.inject_fault, "Corrupt the Hungarian inputs (the check must fail)")
      ->group("");

  auto* bench = app.add_subcommand("bench", "Time the core kernels");
  bench->add_option("--threads", opt.threads, "Worker threads, 0 = all cores")->check(CLI::NonNegativeNumber);
  bench->add_option("--seed", opt.seed, "Seed for the random inputs")->check(CLI::NonNegativeNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) return cmd_train(opt);
    if (*eval) return cmd_eval(opt);
    if (*verify) return cmd_verify(opt);
    if (*bench) return cmd_bench(opt);
  } catch (const bssl::Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", bssl::to_string(e.kind()), e.what());
    return exit_code(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
