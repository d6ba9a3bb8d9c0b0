#include "bssl/clustering.hpp"

#include "bssl/error.hpp"
#include "bssl/numeric/loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace bssl {

TargetPool TargetPool::create(int n, int K, double alpha, Rng& rng) {
  if (K < 2) fail(ErrorKind::Config, "target pool needs K >= 2");
  if (!(alpha > 0 && alpha <= 1)) fail(ErrorKind::Config, "alpha must lie in (0, 1]");
  if (n < K) fail(ErrorKind::Config, "target pool needs n >= K");
  const int per = int(std::floor(alpha * n / K));
  if (per == 0)
    fail(ErrorKind::Config, "floor(alpha*n/K) is zero for n=" + std::to_string(n) +
                                ", K=" + std::to_string(K) + ", alpha=" + std::to_string(alpha));
  TargetPool pool;
  pool.k_ = K;
  pool.per_cluster_ = per;
  pool.alpha_ = alpha;
  pool.image_target_.assign(std::size_t(n), kUnassigned);
  pool.target_image_.resize(std::size_t(K) * std::size_t(per));
  std::vector<int> images(static_cast<std::size_t>(n));
  std::iota(images.begin(), images.end(), 0);
  std::shuffle(images.begin(), images.end(), rng);
  for (std::size_t t = 0; t < pool.target_image_.size(); ++t) {
    pool.target_image_[t] = images[t];
    pool.image_target_[std::size_t(images[t])] = int(t);
  }
  return pool;
}

TargetPool TargetPool::restore(int K, double alpha, std::vector<int> image_target) {
  TargetPool pool;
  pool.k_ = K;
  pool.alpha_ = alpha;
  const int n = int(image_target.size());
  pool.per_cluster_ = K > 0 ? int(std::floor(alpha * n / K)) : 0;
  if (K < 2 || pool.per_cluster_ < 1) fail(ErrorKind::Input, "stored target pool has invalid sizes");
  pool.target_image_.assign(std::size_t(K) * std::size_t(pool.per_cluster_), kUnassigned);
  for (int i = 0; i < n; ++i) {
    const int t = image_target[std::size_t(i)];
    if (t == kUnassigned) continue;
    if (t < 0 || t >= pool.num_targets() || pool.target_image_[std::size_t(t)] != kUnassigned)
      fail(ErrorKind::Input, "stored target pool map is not injective");
    pool.target_image_[std::size_t(t)] = i;
  }
  pool.image_target_ = std::move(image_target);
  pool.check_invariants();
  return pool;
}

std::vector<int> TargetPool::image_clusters() const {
  std::vector<int> out(image_target_.size(), kUnassigned);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (image_target_[i] != kUnassigned) out[i] = cluster_of_target(image_target_[i]);
  }
  return out;
}

std::vector<int> TargetPool::held_per_cluster() const {
  std::vector<int> counts(std::size_t(k_), 0);
  for (int t = 0; t < num_targets(); ++t) {
    if (target_image_[std::size_t(t)] != kUnassigned) ++counts[std::size_t(cluster_of_target(t))];
  }
  return counts;
}

int TargetPool::reassign(std::span<const int> batch, std::span<const int> images,
                         std::span<const int> targets) {
  if (images.size() != targets.size()) fail(ErrorKind::Shape, "reassign: images and targets differ in length");
  const auto in_batch = [&](int img) { return std::find(batch.begin(), batch.end(), img) != batch.end(); };
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (!in_batch(holder_of(targets[i])))
      fail(ErrorKind::State, "reassign: target " + std::to_string(targets[i]) + " is held outside the batch");
    if (!in_batch(images[i])) fail(ErrorKind::State, "reassign: image outside the batch");
  }
  std::vector<int> previous;
  previous.reserve(batch.size());
  for (int img : batch) previous.push_back(image_target_[std::size_t(img)]);
  for (int t : targets) image_target_[std::size_t(holder_of(t))] = kUnassigned;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (image_target_[std::size_t(images[i])] != kUnassigned)
      fail(ErrorKind::State, "reassign: image receives two targets");
    image_target_[std::size_t(images[i])] = targets[i];
    target_image_[std::size_t(targets[i])] = images[i];
  }
  int changed = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) changed += previous[i] != image_target_[std::size_t(batch[i])];
  return changed;
}

void TargetPool::check_invariants() const {
  std::vector<int> counts(std::size_t(k_), 0);
  for (int t = 0; t < num_targets(); ++t) {
    const int img = target_image_[std::size_t(t)];
    if (img < 0 || img >= num_images() || image_target_[std::size_t(img)] != t)
      fail(ErrorKind::State, "target " + std::to_string(t) + " has no consistent holder");
    ++counts[std::size_t(cluster_of_target(t))];
  }
  int assigned = 0;
  for (int i = 0; i < num_images(); ++i) {
    const int t = image_target_[std::size_t(i)];
    if (t == kUnassigned) continue;
    ++assigned;
    if (t < 0 || t >= num_targets() || target_image_[std::size_t(t)] != i)
      fail(ErrorKind::State, "image " + std::to_string(i) + " holds an inconsistent target");
  }
  if (assigned != num_targets()) fail(ErrorKind::State, "assignment map is not injective");
  for (int c : counts) {
    if (c != per_cluster_) fail(ErrorKind::State, "per-cluster target counts changed");
  }
}

ClusterBatchPlan ClusterBatchPlan::gather(const TargetPool& pool, std::vector<int> images) {
  ClusterBatchPlan plan;
  for (int img : images) {
    if (pool.is_assigned(img)) plan.targets.push_back(pool.target_of(img));
  }
  std::sort(plan.targets.begin(), plan.targets.end());
  plan.images = std::move(images);
  return plan;
}

Matrix assignment_costs(const TargetPool& pool, const ClusterBatchPlan& plan, const Matrix& outputs) {
  if (outputs.rows() != Eigen::Index(plan.images.size()) || outputs.cols() != pool.num_clusters())
    fail(ErrorKind::Shape, "assignment outputs do not match the batch");
  const Eigen::Index c = Eigen::Index(plan.targets.size());
  if (c > outputs.rows()) fail(ErrorKind::Shape, "more targets than images in batch");
  const Vector sq = outputs.rowwise().squaredNorm();
  Matrix cost(c, outputs.rows());
  for (Eigen::Index i = 0; i < c; ++i) {
    const int k = pool.cluster_of_target(plan.targets[std::size_t(i)]);
    for (Eigen::Index j = 0; j < outputs.rows(); ++j) cost(i, j) = sq[j] - 2 * outputs(j, k) + 1;
  }
  return cost;
}

BatchAssignment assign_batch(TargetPool& pool, const ClusterBatchPlan& plan, const Matrix& outputs) {
  BatchAssignment out;
  const Matrix cost = assignment_costs(pool, plan, outputs);
  if (cost.rows() == 0) return out;
  out.solution = hungarian_solve(cost);
  std::vector<int> images;
  images.reserve(plan.targets.size());
  for (int col : out.solution.map) images.push_back(plan.images[std::size_t(col)]);
  out.reassigned = pool.reassign(plan.images, images, plan.targets);
  return out;
}

void ConfidenceRule::validate() const {
  if (!(rho > 0 && rho < 2)) fail(ErrorKind::Config, "rho must lie in (0, 2)");
}

std::vector<PseudoTarget> confident_pseudo(const Matrix& outputs, const std::vector<bool>& unassigned,
                                           const ConfidenceRule& rule) {
  if (Eigen::Index(unassigned.size()) != outputs.rows())
    fail(ErrorKind::Shape, "confidence mask does not match outputs");
  std::vector<PseudoTarget> out;
  for (Eigen::Index i = 0; i < outputs.rows(); ++i) {
    if (!unassigned[std::size_t(i)]) continue;
    Eigen::Index k = 0;
    const double top = outputs.row(i).maxCoeff(&k);
    if (2 - 2 * top < rule.rho) out.push_back({int(i), int(k)});
  }
  return out;
}

std::optional<LossAndGradient> clustering_loss(const Model& model, const Matrix& images,
                                               std::span<const int> clusters,
                                               const AugmentSpec& g, int replicas, Rng& rng) {
  if (Eigen::Index(clusters.size()) != images.rows())
    fail(ErrorKind::Shape, "clustering loss: one target per image required");
  if (replicas < 1) fail(ErrorKind::Argument, "clustering loss needs r >= 1");
  if (images.rows() == 0) return std::nullopt;
  const Eigen::Index s = images.rows();
  Matrix stacked(s * replicas, images.cols());
  for (int j = 0; j < replicas; ++j) stacked.middleRows(j * s, s) = augment_batch(g, images, rng);
  const Tape tape = forward_recorded(model, stacked);
  Matrix diff = tape.outputs.cluster;
  for (int j = 0; j < replicas; ++j)
    for (Eigen::Index i = 0; i < s; ++i) diff(j * s + i, clusters[std::size_t(i)]) -= 1;
  const double scale = 1.0 / double(s * replicas);
  LossAndGradient out;
  out.loss = diff.squaredNorm() * scale;
  out.gradient = backward(model, tape, diff * (2 * scale), Matrix());
  return out;
}

std::pair<Matrix, std::vector<int>> rotation_batch(const Matrix& images, const DataShape& shape) {
  if (!shape.is_square_image())
    fail(ErrorKind::Unsupported, "rotation pretext needs square images, data is " + shape.describe());
  if (images.cols() != shape.size()) fail(ErrorKind::Shape, "rotation batch does not match " + shape.describe());
  Matrix out(images.rows() * 4, images.cols());
  std::vector<int> labels(std::size_t(out.rows()));
  for (Eigen::Index i = 0; i < images.rows(); ++i) {
    const Vector x = images.row(i).transpose();
    for (int d = 0; d < 4; ++d) {
      out.row(4 * i + d) = rotate90(as_span(x), shape, d).transpose();
      labels[std::size_t(4 * i + d)] = d;
    }
  }
  return {std::move(out), std::move(labels)};
}

LossAndGradient rotnet_pass(const Model& model, const Matrix& images) {
  auto [rotated, labels] = rotation_batch(images, model.spec().input);
  const Tape tape = forward_recorded(model, rotated);
  const CrossEntropy ce = softmax_cross_entropy(tape.outputs.rot_logits, labels);
  return {ce.loss, backward(model, tape, Matrix(), ce.d_logits)};
}

double rotation_accuracy(const Model& model, const Matrix& images, int threads) {
  auto [rotated, labels] = rotation_batch(images, model.spec().input);
  if (rotated.rows() == 0) fail(ErrorKind::Eval, "rotation accuracy on an empty set");
  const auto pred = argmax_rows(forward(model, rotated, threads).rot_logits);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[Eigen::Index(i)] == labels[i];
  return double(hits) / double(labels.size());
}

const char* to_string(Phase phase) {
  switch (phase) {
    case Phase::Warmup: return "warmup";
    case Phase::Ssl: return "ssl";
    case Phase::Cluster: return "cluster";
  }
  return "?";
}

void ClusterConfig::validate() const {
  if (batch_size < 1) fail(ErrorKind::Config, "cluster.batch_size must be >= 1");
  if (replicas < 1) fail(ErrorKind::Config, "cluster.replicas must be >= 1");
  confidence.validate();
  bssl::validate(sgd);
  augment.validate();
}

std::vector<std::vector<int>> make_batches(int n, int batch_size, bool shuffle, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size) {
    const int stop = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + stop);
  }
  return batches;
}

namespace {

void guard(double loss, const char* what) {
  if (!std::isfinite(loss) || loss > kDivergenceLimit)
    fail(ErrorKind::Divergence, std::string(what) + " diverged (" + std::to_string(loss) + ")");
}

void apply_step(PhaseState& state, const Vector& grad, const SgdConfig& sgd) {
  sgd_step(state.model, grad, sgd, state.sgd);
  if (state.ema) ema_update(*state.ema, state.model.parameters());
}

std::vector<int> to_dataset(std::span<const int> positions, std::span<const int> pool_indices) {
  std::vector<int> out;
  out.reserve(positions.size());
  for (int p : positions) out.push_back(pool_indices[std::size_t(p)]);
  return out;
}

double rotation_steps(PhaseState& state, const Dataset& data, std::span<const int> indices,
                      const ClusterConfig& cfg, Phase phase, const BatchObserver& observer,
                      int& steps) {
  double total = 0;
  for (const auto& batch : make_batches(int(indices.size()), cfg.batch_size, cfg.shuffle, state.rng)) {
    const auto rows = to_dataset(batch, indices);
    if (observer) observer(phase, rows);
    const LossAndGradient lg = rotnet_pass(state.model, data.rows(rows));
    guard(lg.loss, "rotation loss");
    apply_step(state, lg.gradient, cfg.sgd);
    total += lg.loss;
    ++steps;
  }
  return steps ? total / steps : 0.0;
}

}  // namespace

ClusterEpochStats clustering_epoch(TargetPool& pool, PhaseState state, const Dataset& data,
                                   std::span<const int> pool_indices, const ClusterConfig& cfg,
                                   const BatchObserver& observer) {
  if (int(pool_indices.size()) != pool.num_images())
    fail(ErrorKind::Shape, "pool has " + std::to_string(pool.num_images()) + " images, got " +
                               std::to_string(pool_indices.size()) + " indices");
  if (pool.num_clusters() != state.model.num_clusters())
    fail(ErrorKind::Config, "pool and model disagree on K");
  ClusterEpochStats stats;
  double loss_sum = 0;
  for (auto& batch : make_batches(pool.num_images(), cfg.batch_size, cfg.shuffle, state.rng)) {
    const auto rows = to_dataset(batch, pool_indices);
    if (observer) observer(Phase::Cluster, rows);
    const Matrix x = data.rows(rows);
    const Matrix outputs = forward(state.model, x, cfg.threads).cluster;
    if (!all_finite(outputs)) fail(ErrorKind::Divergence, "cluster head produced non-finite outputs");

    const ClusterBatchPlan plan = ClusterBatchPlan::gather(pool, batch);
    const BatchAssignment assigned = assign_batch(pool, plan, outputs);
    stats.reassigned += assigned.reassigned;

    std::vector<bool> unassigned(batch.size(), true);
    std::vector<int> members, clusters;
    for (std::size_t i = 0; i < assigned.solution.map.size(); ++i) {
      const int col = assigned.solution.map[i];
      unassigned[std::size_t(col)] = false;
      members.push_back(col);
      clusters.push_back(pool.cluster_of_target(plan.targets[i]));
    }
    const auto confident = confident_pseudo(outputs, unassigned, cfg.confidence);
    stats.confident += int(confident.size());
    for (const auto& p : confident) {
      members.push_back(p.row);
      clusters.push_back(p.cluster);
    }

    Matrix s(Eigen::Index(members.size()), x.cols());
    for (std::size_t i = 0; i < members.size(); ++i) s.row(Eigen::Index(i)) = x.row(members[i]);
    const auto lg = clustering_loss(state.model, s, clusters, cfg.augment, cfg.replicas, state.rng);
    if (!lg) {
      ++stats.skipped;
      continue;
    }
    guard(lg->loss, "clustering loss");
    apply_step(state, lg->gradient, cfg.sgd);
    loss_sum += lg->loss;
    ++stats.steps;
  }
  stats.loss_c = stats.steps ? loss_sum / stats.steps : 0.0;

  if (cfg.rotnet && data.shape.is_square_image()) {
    stats.loss_r = rotation_steps(state, data, pool_indices, cfg, Phase::Cluster, observer, stats.rot_steps);
  } else {
    stats.rotnet_disabled = true;
  }
  return stats;
}

double rotnet_epoch(PhaseState state, const Dataset& data, std::span<const int> indices,
                    const ClusterConfig& cfg, const BatchObserver& observer) {
  if (!data.shape.is_square_image())
    fail(ErrorKind::Unsupported, "rotation pretext needs square images, data is " + data.shape.describe());
  int steps = 0;
  return rotation_steps(state, data, indices, cfg, Phase::Warmup, observer, steps);
}

void write_cluster_stats_header(std::ostream& os) {
  os << "iteration,phase,L_c,L_r,confident_count,reassigned_count\n";
}

void write_cluster_stats_row(std::ostream& os, int iteration, const ClusterEpochStats& stats) {
  os << iteration << ",cluster," << stats.loss_c << ',' << stats.loss_r << ',' << stats.confident
     << ',' << stats.reassigned << '\n';
}

}  // namespace bssl
