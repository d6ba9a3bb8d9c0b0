#include "bssl/trainer.hpp"

#include "bssl/assignment/assignment.hpp"
#include "bssl/error.hpp"
#include "bssl/numeric/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

namespace bssl {

void TrainConfig::validate() const {
  const auto positive = [](double v, const char* name) {
    if (!(v > 0) || !std::isfinite(v)) fail(ErrorKind::Config, std::string("train.") + name + " must be positive");
  };
  const auto nonneg = [](double v, const char* name) {
    if (!(v >= 0) || !std::isfinite(v)) fail(ErrorKind::Config, std::string("train.") + name + " must be >= 0");
  };
  const auto unit_open = [](double v, const char* name) {
    if (!(v >= 0 && v < 1)) fail(ErrorKind::Config, std::string("train.") + name + " must lie in [0, 1)");
  };
  if (iters < 0) fail(ErrorKind::Config, "train.iters must be >= 0");
  if (e1 < 0) fail(ErrorKind::Config, "train.e1 must be >= 0");
  if (e2 < 0) fail(ErrorKind::Config, "train.e2 must be >= 0");
  if (warmup_rot_epochs < 0) fail(ErrorKind::Config, "train.warmup_rot_epochs must be >= 0");
  positive(lr_ssl, "lr_ssl");
  positive(lr_cluster, "lr_cluster");
  nonneg(wd_ssl, "wd_ssl");
  nonneg(wd_cluster, "wd_cluster");
  unit_open(momentum_ssl, "momentum_ssl");
  unit_open(momentum_cluster, "momentum_cluster");
  if (!(ema_decay > 0 && ema_decay < 1)) fail(ErrorKind::Config, "train.ema_decay must lie in (0, 1)");
  if (!(rho > 0 && rho < 2)) fail(ErrorKind::Config, "train.rho must lie in (0, 2)");
  if (!(alpha > 0 && alpha <= 1)) fail(ErrorKind::Config, "train.alpha must lie in (0, 1]");
  if (!(tau >= 0 && tau <= 1)) fail(ErrorKind::Config, "train.tau must lie in [0, 1]");
  nonneg(lambda_u, "lambda_u");
  if (mu < 1) fail(ErrorKind::Config, "train.mu must be >= 1");
  if (replicas < 1) fail(ErrorKind::Config, "train.replicas must be >= 1");
  if (batch_size < 1) fail(ErrorKind::Config, "train.batch_size must be >= 1");
  positive(temperature, "temperature");
  if (threads < 0) fail(ErrorKind::Config, "train.threads must be >= 0");
  if (model.trunk == TrunkKind::Mlp && model.hidden.empty())
    fail(ErrorKind::Config, "train.model.hidden needs at least one layer");
  for (int h : model.hidden) {
    if (h < 1) fail(ErrorKind::Config, "train.model.hidden widths must be >= 1");
  }
  if (model.conv_channels.size() != 3) fail(ErrorKind::Config, "train.model.conv_channels needs 3 entries");
}

ModelSpec make_model_spec(const TrainConfig& cfg, const DataShape& shape, int K) {
  ModelSpec spec;
  spec.input = shape;
  spec.trunk = cfg.model.trunk;
  spec.hidden = cfg.model.hidden;
  spec.conv_channels = cfg.model.conv_channels;
  spec.num_clusters = K;
  spec.leaky_slope = cfg.model.leaky_slope;
  return spec;
}

AugmentSpec make_augment(const TrainConfig& cfg, AugmentKind kind, const DataShape& shape) {
  AugmentSpec spec = AugmentSpec::defaults(kind, shape);
  const auto& custom = kind == AugmentKind::Weak     ? cfg.weak_aug
                       : kind == AugmentKind::Strong ? cfg.strong_aug
                                                     : cfg.cluster_aug;
  if (custom) spec.params = *custom;
  return spec;
}

namespace {

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  return std::max(1, int(std::thread::hardware_concurrency()));
}

}  // namespace

SslHyper make_ssl_hyper(const TrainConfig& cfg, const DataShape& shape) {
  SslHyper h;
  h.tau = cfg.tau;
  h.lambda_u = cfg.lambda_u;
  h.mu = cfg.mu;
  h.batch_size = cfg.batch_size;
  h.temperature = cfg.temperature;
  h.sgd = {cfg.lr_ssl, cfg.wd_ssl, cfg.momentum_ssl};
  h.weak = make_augment(cfg, AugmentKind::Weak, shape);
  h.strong = make_augment(cfg, AugmentKind::Strong, shape);
  h.threads = resolve_threads(cfg.threads);
  return h;
}

ClusterConfig make_cluster_config(const TrainConfig& cfg, const DataShape& shape) {
  ClusterConfig c;
  c.batch_size = cfg.batch_size;
  c.replicas = cfg.replicas;
  c.confidence.rho = cfg.rho;
  c.sgd = {cfg.lr_cluster, cfg.wd_cluster, cfg.momentum_cluster};
  c.rotnet = cfg.rotnet;
  c.shuffle = cfg.shuffle;
  c.augment = make_augment(cfg, AugmentKind::Cluster, shape);
  c.threads = resolve_threads(cfg.threads);
  return c;
}

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

constexpr double kNa = std::numeric_limits<double>::quiet_NaN();

MetricRow blank_row(int iter, Phase phase, int epoch) {
  MetricRow r;
  r.iter = iter;
  r.phase = phase;
  r.epoch = epoch;
  r.loss_s = r.loss_u = r.loss_c = r.loss_r = r.mask_rate = kNa;
  r.test_cls_acc = r.test_clu_acc = kNa;
  r.confident = -1;
  return r;
}

}  // namespace

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows) {
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << r.iter << ',' << (r.eval ? "eval" : to_string(r.phase)) << ',' << r.epoch << ','
       << num(r.loss_s) << ',' << num(r.loss_u) << ',' << num(r.loss_c) << ',' << num(r.loss_r)
       << ',' << num(r.mask_rate) << ',' << (r.confident < 0 ? std::string() : std::to_string(r.confident))
       << ',' << num(r.test_cls_acc) << ',' << num(r.test_clu_acc) << '\n';
  }
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  write_metrics_csv(os, rows);
  return os.str();
}

EvalResult evaluate(const Model& model, const Matrix& x, std::span<const int> y, int threads) {
  if (x.rows() == 0) fail(ErrorKind::Eval, "evaluation needs a non-empty test set");
  if (Eigen::Index(y.size()) != x.rows()) fail(ErrorKind::Shape, "one label per test row required");
  const auto pred = argmax_rows(forward(model, x, threads).cluster);
  EvalResult out;
  out.predictions.assign(pred.data(), pred.data() + pred.size());
  out.cluster_sizes.assign(std::size_t(model.num_clusters()), 0);
  for (int p : out.predictions) ++out.cluster_sizes[std::size_t(p)];
  out.classification_acc = classification_accuracy(out.predictions, y);
  const ClusteringScore score = clustering_accuracy(out.predictions, y, model.num_clusters());
  out.clustering_acc = score.accuracy;
  out.best_perm = score.best_perm;
  return out;
}

TopkCurve topk_permutation_accuracy(const Model& model, const Matrix& labeled_x,
                                    std::span<const int> labeled_y, const Matrix& test_x,
                                    std::span<const int> test_y, std::size_t k, double temperature,
                                    int threads) {
  if (k == 0) fail(ErrorKind::Argument, "top-k needs k >= 1");
  if (!model.spec().input.is_square_image())
    fail(ErrorKind::Unsupported, "top-k permutations need rotatable images, data is " +
                                     model.spec().input.describe());
  if (test_x.rows() == 0) fail(ErrorKind::Eval, "top-k needs a non-empty test set");
  const int K = model.num_clusters();
  const auto [rotated, rot] = rotation_batch(labeled_x, model.spec().input);
  const Matrix probs = class_probabilities(forward(model, rotated, threads).cluster, temperature);
  Matrix score = Matrix::Zero(K, K);
  for (Eigen::Index i = 0; i < labeled_x.rows(); ++i) {
    const RowVector mean = probs.middleRows(4 * i, 4).colwise().mean();
    score.row(labeled_y[std::size_t(i)]) += mean;
  }
  const auto ranked = murty_kbest(Matrix(-score), k);

  const auto pred_v = argmax_rows(forward(model, test_x, threads).cluster);
  const std::vector<int> pred(pred_v.data(), pred_v.data() + pred_v.size());
  TopkCurve curve;
  double best = 0;
  for (const auto& a : ranked) {
    Permutation label_to_cluster{a.map};
    Permutation cluster_to_label = label_to_cluster.inverse();
    const double acc = permuted_accuracy(pred, test_y, cluster_to_label);
    best = std::max(best, acc);
    curve.perms.push_back(std::move(cluster_to_label));
    curve.perm_accuracy.push_back(acc);
    curve.accuracy.push_back(best);
  }
  return curve;
}

namespace {

constexpr std::uint64_t kStreamSalt = 0x9E3779B97F4A7C15ULL;

}  // namespace

TrainState init_train_state(const TrainConfig& cfg, const Dataset& data, const DatasetSplit& split) {
  cfg.validate();
  data.validate();
  TrainState s;
  s.model = Model(make_model_spec(cfg, data.shape, data.num_classes), cfg.seed);
  s.ema = EmaState(s.model.parameters(), cfg.ema_decay);
  s.rng = Rng(cfg.seed ^ kStreamSalt);
  s.pool = TargetPool::create(int(split.train_pool().size()), data.num_classes, cfg.alpha, s.rng);
  return s;
}

namespace {

struct Snapshot {
  Model model;
  EmaState ema;
  SgdState sgd_ssl, sgd_cluster;
  TargetPool pool;
  Rng rng;
};

Snapshot snapshot(const TrainState& s) {
  return {s.model, s.ema, s.sgd_ssl, s.sgd_cluster, s.pool, s.rng};
}

void restore(TrainState& s, Snapshot snap) {
  s.model = std::move(snap.model);
  s.ema = std::move(snap.ema);
  s.sgd_ssl = std::move(snap.sgd_ssl);
  s.sgd_cluster = std::move(snap.sgd_cluster);
  s.pool = std::move(snap.pool);
  s.rng = snap.rng;
}

MetricRow eval_row(int iter, const Model& ema_model, const Dataset& data, const DatasetSplit& split,
                   int threads) {
  MetricRow r = blank_row(iter, Phase::Cluster, 0);
  r.eval = true;
  if (!split.test.empty()) {
    const EvalResult e = evaluate(ema_model, data.rows(split.test), data.labels_of(split.test), threads);
    r.test_cls_acc = e.classification_acc;
    r.test_clu_acc = e.clustering_acc;
  }
  return r;
}

}  // namespace

RunRecord train(const TrainConfig& cfg, const Dataset& data, const DatasetSplit& split,
                TrainState& state, const TrainHooks& hooks) {
  cfg.validate();
  const auto labeled = split.labeled();
  const auto pool_indices = split.train_pool();
  if (int(pool_indices.size()) != state.pool.num_images())
    fail(ErrorKind::State, "target pool does not match the training split");
  if (cfg.e1 > 0 && labeled.empty())
    fail(ErrorKind::Config, "train.e1 > 0 needs labeled data (labels_per_class >= 1)");
  const SslHyper hyper = make_ssl_hyper(cfg, data.shape);
  const ClusterConfig ccfg = make_cluster_config(cfg, data.shape);
  hyper.validate();
  ccfg.validate();
  FixMatchPhase ssl(hyper);
  const bool rotatable = data.shape.is_square_image();

  RunRecord record;
  if (cfg.rotnet && !rotatable) {
    record.warnings.push_back("rotation pretext disabled: data is " + data.shape.describe() +
                              ", rotations need square images");
  }

  const auto ema_eval = [&]() { return ema_model(state.model, state.ema); };
  const auto guarded = [&](auto&& body) {
    Snapshot last_good = snapshot(state);
    try {
      body();
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Divergence) throw;
      restore(state, std::move(last_good));
      if (!hooks.divergence_checkpoint.empty()) save_train_checkpoint(hooks.divergence_checkpoint, cfg, state);
      throw;
    }
  };

  PhaseState cluster_phase{state.model, state.sgd_cluster, &state.ema, state.rng};
  if (!state.warmed_up) {
    if (cfg.rotnet && rotatable) {
      for (int e = 1; e <= cfg.warmup_rot_epochs; ++e) {
        guarded([&] {
          MetricRow r = blank_row(0, Phase::Warmup, e);
          r.loss_r = rotnet_epoch(cluster_phase, data, pool_indices, ccfg, hooks.observer);
          state.rows.push_back(r);
        });
      }
    }
    state.warmed_up = true;
  }

  for (int it = state.completed_iters + 1; it <= cfg.iters; ++it) {
    for (int e = 1; e <= cfg.e1; ++e) {
      guarded([&] {
        const SslEpochStats s = ssl.run_epoch({state.model, state.sgd_ssl, &state.ema, state.rng}, data,
                                              labeled, split.unlabeled, hooks.observer);
        MetricRow r = blank_row(it, Phase::Ssl, e);
        r.loss_s = s.loss_s;
        r.loss_u = s.loss_u;
        r.mask_rate = s.mask_rate;
        state.rows.push_back(r);
      });
    }
    for (int e = 1; e <= cfg.e2; ++e) {
      guarded([&] {
        const ClusterEpochStats s =
            clustering_epoch(state.pool, cluster_phase, data, pool_indices, ccfg, hooks.observer);
        MetricRow r = blank_row(it, Phase::Cluster, e);
        r.loss_c = s.loss_c;
        if (!s.rotnet_disabled) r.loss_r = s.loss_r;
        r.confident = s.confident;
        state.rows.push_back(r);
        if (hooks.after_cluster_epoch) hooks.after_cluster_epoch(state.pool, s);
      });
    }
    state.rows.push_back(eval_row(it, ema_eval(), data, split, ccfg.threads));
    state.completed_iters = it;
    if (hooks.after_iteration && !hooks.after_iteration(state)) break;
  }

  record.rows = state.rows;
  record.completed_iters = state.completed_iters;
  if (!split.test.empty()) {
    record.final_eval = evaluate(ema_eval(), data.rows(split.test), data.labels_of(split.test), ccfg.threads);
  }
  return record;
}

EpochCounts count_epochs(const std::vector<MetricRow>& rows) {
  EpochCounts c;
  for (const auto& r : rows) {
    if (r.eval) {
      ++c.eval;
    } else if (r.phase == Phase::Warmup) {
      ++c.warmup;
    } else if (r.phase == Phase::Ssl) {
      ++c.ssl;
    } else {
      ++c.cluster;
    }
  }
  return c;
}

namespace {

void write_aug(ByteWriter& w, const std::optional<AugmentParams>& p) {
  w.u8(p ? 1 : 0);
  if (!p) return;
  w.f64(p->flip_prob);
  w.f64(p->max_translate_frac);
  w.f64(p->jitter_strength);
  w.f64(p->cutout_frac);
  w.f64(p->noise_sigma);
  w.i64(p->strong_ops);
}

// Every field that shapes the trajectory; iters and threads may change across a resume.
std::string config_fingerprint(const TrainConfig& c) {
  ByteWriter w;
  for (int v : {c.e1, c.e2, c.warmup_rot_epochs, c.mu, c.replicas, c.batch_size}) w.i64(v);
  for (double v : {c.lr_ssl, c.wd_ssl, c.momentum_ssl, c.lr_cluster, c.wd_cluster, c.momentum_cluster,
                   c.ema_decay, c.rho, c.alpha, c.tau, c.lambda_u, c.temperature, c.model.leaky_slope})
    w.f64(v);
  w.u8(c.rotnet);
  w.u8(c.shuffle);
  w.u8(std::uint8_t(c.model.trunk));
  w.ints(c.model.hidden);
  w.ints(c.model.conv_channels);
  write_aug(w, c.weak_aug);
  write_aug(w, c.strong_aug);
  write_aug(w, c.cluster_aug);
  w.u64(c.seed);
  return w.take();
}

std::string encode_rows(const std::vector<MetricRow>& rows) {
  ByteWriter w;
  w.u64(rows.size());
  for (const auto& r : rows) {
    w.i64(r.iter);
    w.u8(std::uint8_t(r.phase));
    w.u8(r.eval);
    w.i64(r.epoch);
    for (double v : {r.loss_s, r.loss_u, r.loss_c, r.loss_r, r.mask_rate, r.test_cls_acc, r.test_clu_acc})
      w.f64(v);
    w.i64(r.confident);
  }
  return w.take();
}

std::vector<MetricRow> decode_rows(std::string_view bytes) {
  ByteReader r(bytes);
  std::vector<MetricRow> rows(r.u64());
  for (auto& row : rows) {
    row.iter = int(r.i64());
    const auto phase = r.u8();
    if (phase > 2) fail(ErrorKind::Io, "unknown phase in stored metrics");
    row.phase = Phase(phase);
    row.eval = r.u8() != 0;
    row.epoch = int(r.i64());
    for (double* v : {&row.loss_s, &row.loss_u, &row.loss_c, &row.loss_r, &row.mask_rate,
                      &row.test_cls_acc, &row.test_clu_acc})
      *v = r.f64();
    row.confident = int(r.i64());
  }
  r.expect_done();
  return rows;
}

std::string encode_velocity(const SgdState& s) {
  ByteWriter w;
  w.vec(s.velocity);
  return w.take();
}

SgdState decode_velocity(std::string_view bytes) {
  ByteReader r(bytes);
  SgdState s{r.vec()};
  r.expect_done();
  return s;
}

}  // namespace

void save_train_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                           const TrainState& state) {
  Container c;
  store(c, ModelCheckpoint{state.model, state.ema, rng_state(state.rng)});
  c.put("train.config", config_fingerprint(cfg));
  c.put("train.sgd_ssl", encode_velocity(state.sgd_ssl));
  c.put("train.sgd_cluster", encode_velocity(state.sgd_cluster));
  ByteWriter pool;
  pool.i64(state.pool.num_clusters());
  pool.f64(state.pool.alpha());
  pool.ints(state.pool.image_targets());
  c.put("train.pool", pool.take());
  ByteWriter progress;
  progress.u8(state.warmed_up);
  progress.i64(state.completed_iters);
  c.put("train.progress", progress.take());
  c.put("train.rows", encode_rows(state.rows));
  write_file(path, encode(c));
}

TrainState load_train_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg) {
  const Container c = decode(read_file(path));
  if (c.get("train.config") != config_fingerprint(cfg))
    fail(ErrorKind::Config, path.string() + " was written under a different training config");
  ModelCheckpoint m = load_model_checkpoint(c);
  TrainState s;
  s.model = std::move(m.model);
  s.ema = std::move(m.ema);
  s.rng = rng_from_state(m.rng);
  s.sgd_ssl = decode_velocity(c.get("train.sgd_ssl"));
  s.sgd_cluster = decode_velocity(c.get("train.sgd_cluster"));
  ByteReader pool(c.get("train.pool"));
  const int K = int(pool.i64());
  const double alpha = pool.f64();
  s.pool = TargetPool::restore(K, alpha, pool.ints());
  pool.expect_done();
  ByteReader progress(c.get("train.progress"));
  s.warmed_up = progress.u8() != 0;
  s.completed_iters = int(progress.i64());
  progress.expect_done();
  s.rows = decode_rows(c.get("train.rows"));
  return s;
}

ModelCheckpoint load_eval_checkpoint(const std::filesystem::path& path) {
  return load_model_checkpoint(path);
}

}  // namespace bssl
