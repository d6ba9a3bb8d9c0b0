#include "bssl/error.hpp"
#include "bssl/trainer.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

namespace bssl {
namespace {

namespace fs = std::filesystem;

TrainConfig small_config() {
  TrainConfig cfg;
  cfg.iters = 2;
  cfg.e1 = 1;
  cfg.e2 = 1;
  cfg.warmup_rot_epochs = 1;
  cfg.batch_size = 16;
  cfg.mu = 2;
  cfg.model.hidden = {16, 16};
  cfg.ema_decay = 0.9;
  cfg.seed = 3;
  return cfg;
}

struct Problem {
  Dataset data;
  DatasetSplit split;
};

Problem gmm_problem(int lpc = 4, std::uint64_t seed = 1) {
  Problem p;
  p.data = make_gaussian_mixture(3, 240, 6, 6.0, seed);
  p.split = partition(p.data, lpc, 0.25, seed);
  return p;
}

Problem shape_problem() {
  Problem p;
  p.data = make_shape_images(4, 160, 8, 5);
  p.split = partition(p.data, 2, 0.25, 5);
  return p;
}

fs::path temp_path(const std::string& name) {
  return fs::temp_directory_path() / ("bssl_trainer_" + std::to_string(::getpid()) + "_" + name);
}

std::vector<std::string> phase_sequence(const std::vector<MetricRow>& rows) {
  std::vector<std::string> out;
  for (const auto& r : rows) out.push_back(r.eval ? "eval" : to_string(r.phase));
  return out;
}

TEST(TrainConfig, DefaultsValidate) {
  TrainConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.e1, 5);
  EXPECT_EQ(cfg.e2, 1);
  EXPECT_EQ(cfg.iters, 200);
  EXPECT_DOUBLE_EQ(cfg.lr_ssl, 0.03);
  EXPECT_DOUBLE_EQ(cfg.lr_cluster, 0.01);
  EXPECT_DOUBLE_EQ(cfg.wd_ssl, 0.0005);
  EXPECT_DOUBLE_EQ(cfg.wd_cluster, 0.0001);
  EXPECT_DOUBLE_EQ(cfg.rho, 0.2);
}

TEST(TrainConfig, InvalidFieldsAreConfigErrors) {
  const auto expect_config = [](auto mutate) {
    TrainConfig cfg;
    mutate(cfg);
    try {
      cfg.validate();
      ADD_FAILURE() << "accepted an invalid config";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Config);
    }
  };
  expect_config([](TrainConfig& c) { c.e1 = -1; });
  expect_config([](TrainConfig& c) { c.e2 = -1; });
  expect_config([](TrainConfig& c) { c.lr_ssl = 0; });
  expect_config([](TrainConfig& c) { c.lr_cluster = -0.1; });
  expect_config([](TrainConfig& c) { c.ema_decay = 1; });
  expect_config([](TrainConfig& c) { c.rho = 0; });
  expect_config([](TrainConfig& c) { c.alpha = 1.5; });
  expect_config([](TrainConfig& c) { c.tau = 1.1; });
  expect_config([](TrainConfig& c) { c.mu = 0; });
  expect_config([](TrainConfig& c) { c.replicas = 0; });
  expect_config([](TrainConfig& c) { c.model.hidden.clear(); });
}

TEST(TrainConfig, BuildersCarryPhaseHyperparameters) {
  TrainConfig cfg = small_config();
  const DataShape shape = DataShape::vector(6);
  const SslHyper h = make_ssl_hyper(cfg, shape);
  EXPECT_DOUBLE_EQ(h.sgd.learning_rate, cfg.lr_ssl);
  EXPECT_DOUBLE_EQ(h.sgd.weight_decay, cfg.wd_ssl);
  EXPECT_EQ(h.unlabeled_batch(), cfg.mu * cfg.batch_size);
  const ClusterConfig c = make_cluster_config(cfg, shape);
  EXPECT_DOUBLE_EQ(c.sgd.learning_rate, cfg.lr_cluster);
  EXPECT_DOUBLE_EQ(c.sgd.weight_decay, cfg.wd_cluster);
  EXPECT_DOUBLE_EQ(c.confidence.rho, cfg.rho);
  EXPECT_EQ(c.replicas, cfg.replicas);

  cfg.strong_aug = AugmentParams{0, 0, 0, 0, 0, 0};
  EXPECT_EQ(make_augment(cfg, AugmentKind::Strong, shape).params, *cfg.strong_aug);
  EXPECT_EQ(make_augment(cfg, AugmentKind::Weak, shape).params,
            AugmentSpec::defaults(AugmentKind::Weak, shape).params);
}

TEST(Train, AlternationAccounting) {
  const Problem p = gmm_problem();
  TrainConfig cfg = small_config();
  cfg.iters = 3;
  cfg.e1 = 2;
  cfg.e2 = 1;
  TrainState state = init_train_state(cfg, p.data, p.split);
  const RunRecord rec = train(cfg, p.data, p.split, state);
  const EpochCounts counts = count_epochs(rec.rows);
  EXPECT_EQ(counts.ssl, cfg.iters * cfg.e1);
  EXPECT_EQ(counts.cluster, cfg.iters * cfg.e2);
  EXPECT_EQ(counts.eval, cfg.iters);
  EXPECT_EQ(counts.warmup, 0);  // vectors cannot be rotated
  std::vector<std::string> expected;
  for (int i = 0; i < cfg.iters; ++i) expected.insert(expected.end(), {"ssl", "ssl", "cluster", "eval"});
  EXPECT_EQ(phase_sequence(rec.rows), expected);
  for (const auto& r : rec.rows) {
    if (r.eval) EXPECT_GE(r.test_clu_acc, r.test_cls_acc);
  }
  EXPECT_EQ(rec.completed_iters, 3);
  ASSERT_EQ(rec.warnings.size(), 1u);
  EXPECT_NE(rec.warnings[0].find("rotation"), std::string::npos);
}

TEST(Train, NoClusteringEpochsLeavesPoolUntouched) {
  const Problem p = gmm_problem();
  TrainConfig cfg = small_config();
  cfg.e2 = 0;
  TrainState state = init_train_state(cfg, p.data, p.split);
  const TargetPool before = state.pool;
  int cluster_batches = 0;
  TrainHooks hooks;
  hooks.observer = [&](Phase phase, std::span<const int>) { cluster_batches += phase == Phase::Cluster; };
  const RunRecord rec = train(cfg, p.data, p.split, state, hooks);
  EXPECT_EQ(count_epochs(rec.rows).cluster, 0);
  EXPECT_EQ(cluster_batches, 0);
  EXPECT_EQ(state.pool, before);
}

TEST(Train, PureClusteringIgnoresLabels) {
  const Problem p = gmm_problem(0);
  TrainConfig cfg = small_config();
  cfg.e1 = 0;
  cfg.e2 = 2;
  TrainState state = init_train_state(cfg, p.data, p.split);
  int pool_checks = 0;
  TrainHooks hooks;
  hooks.after_cluster_epoch = [&](const TargetPool& pool, const ClusterEpochStats&) {
    pool.check_invariants();
    ++pool_checks;
  };
  hooks.observer = [](Phase phase, std::span<const int>) { EXPECT_NE(phase, Phase::Ssl); };
  const RunRecord rec = train(cfg, p.data, p.split, state, hooks);
  EXPECT_EQ(pool_checks, cfg.iters * cfg.e2);
  EXPECT_EQ(count_epochs(rec.rows).ssl, 0);
}

TEST(Train, SslEpochsNeedLabels) {
  const Problem p = gmm_problem(0);
  TrainConfig cfg = small_config();
  TrainState state = init_train_state(cfg, p.data, p.split);
  try {
    train(cfg, p.data, p.split, state);
    FAIL() << "trained without labels";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
}

TEST(Train, ZeroIterationsRecordsOnlyWarmup) {
  const Problem p = shape_problem();
  TrainConfig cfg = small_config();
  cfg.iters = 0;
  cfg.warmup_rot_epochs = 2;
  TrainState state = init_train_state(cfg, p.data, p.split);
  const RunRecord rec = train(cfg, p.data, p.split, state);
  ASSERT_EQ(rec.rows.size(), 2u);
  for (const auto& r : rec.rows) {
    EXPECT_EQ(r.phase, Phase::Warmup);
    EXPECT_TRUE(std::isfinite(r.loss_r));
  }
  EXPECT_TRUE(rec.warnings.empty());
  EXPECT_TRUE(state.warmed_up);
}

TEST(Train, WarmupPrecedesAlternationOnImages) {
  const Problem p = shape_problem();
  TrainConfig cfg = small_config();
  cfg.iters = 1;
  cfg.warmup_rot_epochs = 1;
  TrainState state = init_train_state(cfg, p.data, p.split);
  const RunRecord rec = train(cfg, p.data, p.split, state);
  EXPECT_EQ(phase_sequence(rec.rows), (std::vector<std::string>{"warmup", "ssl", "cluster", "eval"}));
  // Clustering epochs on images also run the rotation pretext.
  EXPECT_TRUE(std::isfinite(rec.rows[2].loss_r));
}

TEST(Train, TrainingNeverTouchesTestRows) {
  const Problem p = gmm_problem();
  const std::set<int> test(p.split.test.begin(), p.split.test.end());
  TrainConfig cfg = small_config();
  TrainState state = init_train_state(cfg, p.data, p.split);
  TrainHooks hooks;
  hooks.observer = [&](Phase, std::span<const int> rows) {
    for (int r : rows) EXPECT_EQ(test.count(r), 0u);
  };
  train(cfg, p.data, p.split, state, hooks);
}

TEST(Train, StopsWhenHookDeclines) {
  const Problem p = gmm_problem();
  TrainConfig cfg = small_config();
  cfg.iters = 5;
  TrainState state = init_train_state(cfg, p.data, p.split);
  TrainHooks hooks;
  hooks.after_iteration = [](const TrainState& s) { return s.completed_iters < 2; };
  const RunRecord rec = train(cfg, p.data, p.split, state, hooks);
  EXPECT_EQ(rec.completed_iters, 2);
  EXPECT_EQ(count_epochs(rec.rows).eval, 2);
}

TEST(Train, IdenticalConfigsGiveIdenticalMetrics) {
  const Problem p = gmm_problem();
  const TrainConfig cfg = small_config();
  TrainState a = init_train_state(cfg, p.data, p.split);
  TrainState b = init_train_state(cfg, p.data, p.split);
  const std::string csv_a = metrics_csv(train(cfg, p.data, p.split, a).rows);
  const std::string csv_b = metrics_csv(train(cfg, p.data, p.split, b).rows);
  EXPECT_EQ(csv_a, csv_b);
  EXPECT_EQ(a.model.parameters(), b.model.parameters());

  TrainConfig other = cfg;
  other.seed = cfg.seed + 1;
  TrainState c = init_train_state(other, p.data, p.split);
  EXPECT_NE(metrics_csv(train(other, p.data, p.split, c).rows), csv_a);
}

TEST(Train, ThreadCountDoesNotChangeMetrics) {
  const Problem p = gmm_problem();
  TrainConfig cfg = small_config();
  TrainState a = init_train_state(cfg, p.data, p.split);
  const std::string one = metrics_csv(train(cfg, p.data, p.split, a).rows);
  cfg.threads = 3;
  TrainState b = init_train_state(cfg, p.data, p.split);
  EXPECT_EQ(metrics_csv(train(cfg, p.data, p.split, b).rows), one);
}

TEST(Train, DivergenceWritesLastFiniteState) {
  const Problem p = gmm_problem();
  TrainConfig cfg = small_config();
  cfg.lr_ssl = 1e30;
  cfg.iters = 30;
  TrainState state = init_train_state(cfg, p.data, p.split);
  TrainHooks hooks;
  hooks.divergence_checkpoint = temp_path("diverged.ckpt");
  fs::remove(hooks.divergence_checkpoint);
  try {
    train(cfg, p.data, p.split, state, hooks);
    FAIL() << "no divergence reported";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Divergence);
  }
  ASSERT_TRUE(fs::exists(hooks.divergence_checkpoint));
  const TrainState saved = load_train_checkpoint(hooks.divergence_checkpoint, cfg);
  EXPECT_TRUE(saved.model.parameters().allFinite());
  EXPECT_TRUE(saved.ema.shadow.allFinite());
  EXPECT_EQ(saved.model.parameters(), state.model.parameters());
  fs::remove(hooks.divergence_checkpoint);
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const Problem p = gmm_problem();
  TrainConfig cfg = small_config();
  cfg.iters = 4;
  TrainState full = init_train_state(cfg, p.data, p.split);
  const std::string expected = metrics_csv(train(cfg, p.data, p.split, full).rows);

  TrainConfig first = cfg;
  first.iters = 2;
  TrainState half = init_train_state(first, p.data, p.split);
  train(first, p.data, p.split, half);
  const fs::path path = temp_path("resume.ckpt");
  save_train_checkpoint(path, first, half);

  TrainState resumed = load_train_checkpoint(path, cfg);
  EXPECT_EQ(resumed.completed_iters, 2);
  const RunRecord rec = train(cfg, p.data, p.split, resumed);
  EXPECT_EQ(metrics_csv(rec.rows), expected);
  EXPECT_EQ(resumed.model.parameters(), full.model.parameters());
  EXPECT_EQ(resumed.pool, full.pool);
  fs::remove(path);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const Problem p = gmm_problem();
  const TrainConfig cfg = small_config();
  TrainState state = init_train_state(cfg, p.data, p.split);
  train(cfg, p.data, p.split, state);
  const fs::path a = temp_path("a.ckpt"), b = temp_path("b.ckpt");
  save_train_checkpoint(a, cfg, state);
  save_train_checkpoint(b, cfg, load_train_checkpoint(a, cfg));
  EXPECT_EQ(read_file(a), read_file(b));
  const ModelCheckpoint eval = load_eval_checkpoint(a);
  EXPECT_EQ(eval.model.parameters(), state.model.parameters());
  EXPECT_EQ(eval.ema.shadow, state.ema.shadow);
  fs::remove(a);
  fs::remove(b);
}

TEST(Checkpoint, RefusesBadFiles) {
  const Problem p = gmm_problem();
  const TrainConfig cfg = small_config();
  TrainState state = init_train_state(cfg, p.data, p.split);
  const fs::path path = temp_path("bad.ckpt");
  save_train_checkpoint(path, cfg, state);
  const std::string bytes = read_file(path);

  const auto expect_kind = [&](const std::string& content, const TrainConfig& c, ErrorKind kind) {
    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << content;
    }
    try {
      load_train_checkpoint(path, c);
      ADD_FAILURE() << "accepted a bad checkpoint";
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), kind) << e.what();
    }
  };
  expect_kind(bytes.substr(0, bytes.size() / 2), cfg, ErrorKind::Io);
  std::string foreign = bytes;
  foreign[8] = char(foreign[8] + 1);  // version field follows the magic
  expect_kind(foreign, cfg, ErrorKind::Version);
  TrainConfig changed = cfg;
  changed.lr_cluster = 0.02;
  expect_kind(bytes, changed, ErrorKind::Config);

  TrainConfig relaxed = cfg;
  relaxed.iters = 10;
  relaxed.threads = 4;
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << bytes;
  }
  EXPECT_NO_THROW(load_train_checkpoint(path, relaxed));
  fs::remove(path);
}

TEST(PhaseLearningRates, StepNormsFollowTheConfiguredRates) {
  // Same gradient through both phase optimizers from rest: the step ratio is lr_ssl / lr_cluster.
  const TrainConfig cfg;
  const DataShape shape = DataShape::vector(6);
  const Model base(make_model_spec(small_config(), shape, 3), 1);
  std::mt19937_64 gen(4);
  const Vector grad = 1e4 * oracle::random_matrix(gen, int(base.parameter_count()), 1, -1, 1).col(0);
  const auto step_norm = [&](const SgdConfig& sgd) {
    Model m = base;
    SgdState s;
    sgd_step(m, grad, sgd, s);
    return (m.parameters() - base.parameters()).norm();
  };
  const double ssl = step_norm(make_ssl_hyper(cfg, shape).sgd);
  const double clu = step_norm(make_cluster_config(cfg, shape).sgd);
  EXPECT_NEAR(ssl / clu, 0.03 / 0.01, 1e-3);
}

Model random_model(const DataShape& shape, int K, std::uint64_t seed) {
  TrainConfig cfg = small_config();
  return Model(make_model_spec(cfg, shape, K), seed);
}

TEST(Evaluate, LabelsEqualToPredictionsScorePerfectly) {
  const Problem p = gmm_problem();
  const Model model = random_model(p.data.shape, 3, 2);
  const Matrix x = p.data.rows(p.split.test);
  const auto base = evaluate(model, x, p.data.labels_of(p.split.test));
  const EvalResult e = evaluate(model, x, base.predictions);
  EXPECT_EQ(e.classification_acc, 1.0);
  EXPECT_EQ(e.clustering_acc, 1.0);
  int used = 0;
  for (int s : e.cluster_sizes) used += s > 0;
  if (used == 3) EXPECT_EQ(e.best_perm, Permutation::identity(3));
}

TEST(Evaluate, BijectedLabelsRecoverTheBijection) {
  const Problem p = gmm_problem();
  const Model model = random_model(p.data.shape, 3, 2);
  const Matrix x = p.data.rows(p.split.test);
  const auto pred = evaluate(model, x, p.data.labels_of(p.split.test)).predictions;
  const Permutation sigma{{2, 0, 1}};
  std::vector<int> y;
  int hits = 0;
  for (int c : pred) {
    y.push_back(sigma(c));
    hits += sigma(c) == c;
  }
  const EvalResult e = evaluate(model, x, y);
  EXPECT_EQ(e.clustering_acc, 1.0);
  EXPECT_DOUBLE_EQ(e.classification_acc, double(hits) / double(y.size()));
  EXPECT_EQ(permuted_accuracy(e.predictions, y, e.best_perm), 1.0);
}

TEST(Evaluate, RandomLabelsMatchPermutationEnumeration) {
  // K=4, m=1000: the maximum over all 24 relabelings, computed by brute force.
  const Dataset data = make_gaussian_mixture(4, 1000, 5, 1.0, 9);
  const Model model = random_model(data.shape, 4, 3);
  std::mt19937_64 gen(11);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<int> y(1000);
    for (int& v : y) v = label(gen);
    const EvalResult e = evaluate(model, data.features, y);
    EXPECT_DOUBLE_EQ(e.clustering_acc, oracle::best_permutation_accuracy(e.predictions, y, 4));
    EXPECT_GE(e.clustering_acc, e.classification_acc);
    EXPECT_LE(e.clustering_acc, 1.0);
    EXPECT_GE(e.classification_acc, 0.0);
  }
}

TEST(Evaluate, EmptyTestSetIsEvalError) {
  const Model model = random_model(DataShape::vector(6), 3, 1);
  try {
    evaluate(model, Matrix(0, 6), std::vector<int>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Eval);
  }
}

TEST(TopK, NondecreasingAndExhaustiveAtKFactorial) {
  const Problem p = shape_problem();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Model model = random_model(p.data.shape, 4, seed);
    const auto lab = p.split.labeled();
    const Matrix tx = p.data.rows(p.split.test);
    const auto ty = p.data.labels_of(p.split.test);
    const TopkCurve curve = topk_permutation_accuracy(model, p.data.rows(lab), p.data.labels_of(lab), tx,
                                                      ty, 24, 0.1);
    ASSERT_EQ(curve.accuracy.size(), 24u);
    EXPECT_TRUE(std::is_sorted(curve.accuracy.begin(), curve.accuracy.end()));
    EXPECT_EQ(curve.accuracy.front(), curve.perm_accuracy.front());
    std::set<std::vector<int>> distinct;
    for (const auto& perm : curve.perms) {
      EXPECT_TRUE(perm.is_bijection());
      distinct.insert(perm.perm);
    }
    EXPECT_EQ(distinct.size(), 24u);
    EXPECT_DOUBLE_EQ(curve.accuracy.back(), evaluate(model, tx, ty).clustering_acc);
  }
}

TEST(TopK, FirstPermutationMaximizesTheScore) {
  const Problem p = shape_problem();
  const Model model = random_model(p.data.shape, 4, 7);
  const auto lab = p.split.labeled();
  const Matrix lx = p.data.rows(lab);
  const auto ly = p.data.labels_of(lab);
  const auto [rotated, rot] = rotation_batch(lx, p.data.shape);
  const Matrix probs = class_probabilities(forward(model, rotated).cluster, 0.1);
  Matrix score = Matrix::Zero(4, 4);
  for (Eigen::Index i = 0; i < lx.rows(); ++i)
    score.row(ly[std::size_t(i)]) += probs.middleRows(4 * i, 4).colwise().mean();
  const auto all = oracle::enumerate_injections(Matrix(-score));
  const TopkCurve curve = topk_permutation_accuracy(model, lx, ly, p.data.rows(p.split.test),
                                                    p.data.labels_of(p.split.test), 1, 0.1);
  const Permutation label_to_cluster = curve.perms[0].inverse();
  EXPECT_NEAR(assignment_cost(Matrix(-score), label_to_cluster.perm), all.front().first, 1e-12);
}

TEST(TopK, VectorDataIsUnsupported) {
  const Problem p = gmm_problem();
  const Model model = random_model(p.data.shape, 3, 1);
  const auto lab = p.split.labeled();
  try {
    topk_permutation_accuracy(model, p.data.rows(lab), p.data.labels_of(lab), p.data.rows(p.split.test),
                              p.data.labels_of(p.split.test), 3, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Unsupported);
  }
}

TEST(MetricsCsv, HeaderAndBlankColumns) {
  MetricRow ssl;
  ssl.iter = 1;
  ssl.phase = Phase::Ssl;
  ssl.epoch = 2;
  ssl.loss_s = 0.5;
  ssl.loss_u = 0.25;
  ssl.loss_c = ssl.loss_r = ssl.test_cls_acc = ssl.test_clu_acc = std::nan("");
  ssl.mask_rate = 0.75;
  ssl.confident = -1;
  MetricRow ev = ssl;
  ev.eval = true;
  ev.epoch = 0;
  ev.loss_s = ev.loss_u = ev.mask_rate = std::nan("");
  ev.test_cls_acc = 0.5;
  ev.test_clu_acc = 1;
  EXPECT_EQ(metrics_csv({ssl, ev}), std::string(kMetricsHeader) +
                                        "\n1,ssl,2,0.5,0.25,,,0.75,,,\n"
                                        "1,eval,0,,,,,,,0.5,1\n");
}

}  // namespace
}  // namespace bssl
