#pragma once

#include "bssl/assignment/assignment.hpp"
#include "bssl/augment.hpp"
#include "bssl/data.hpp"
#include "bssl/numeric/model.hpp"
#include "bssl/numeric/optim.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <span>
#include <vector>

namespace bssl {

/// Fixed multiset of one-hot targets, floor(alpha*n/K) per cluster, and the injective map
/// between images (positions 0..n-1 of the training pool) and targets.
///
/// Target t belongs to cluster t / per_cluster. Every target is held by exactly one image
/// at all times; the remaining n - K*per_cluster images are unassigned.
class TargetPool {
 public:
  static constexpr int kUnassigned = -1;

  TargetPool() = default;

  /// Throws Config unless K >= 2, 0 < alpha <= 1, n >= K and floor(alpha*n/K) >= 1.
  static TargetPool create(int n, int K, double alpha, Rng& rng);

  int num_images() const { return int(image_target_.size()); }
  int num_clusters() const { return k_; }
  int num_targets() const { return int(target_image_.size()); }
  int per_cluster() const { return per_cluster_; }
  double alpha() const { return alpha_; }

  int target_of(int image) const { return image_target_[std::size_t(image)]; }
  int holder_of(int target) const { return target_image_[std::size_t(target)]; }
  int cluster_of_target(int target) const { return target / per_cluster_; }
  bool is_assigned(int image) const { return target_of(image) != kUnassigned; }

  /// Cluster each image is pulled toward, or kUnassigned.
  std::vector<int> image_clusters() const;

  /// Number of targets of each cluster currently held by some image.
  std::vector<int> held_per_cluster() const;

  /// Gives target `targets[i]` to image `images[i]`. Targets must currently be held inside
  /// `batch` and the receiving images must belong to it, so a batch only permutes targets
  /// among its members. Returns how many batch images changed target.
  int reassign(std::span<const int> batch, std::span<const int> images, std::span<const int> targets);

  /// Throws State if conservation or injectivity is broken.
  void check_invariants() const;

  const std::vector<int>& image_targets() const { return image_target_; }

  /// Rebuilds a pool from a stored image->target map (checkpoint restore).
  static TargetPool restore(int K, double alpha, std::vector<int> image_target);

  friend bool operator==(const TargetPool&, const TargetPool&) = default;

 private:
  int k_ = 0;
  int per_cluster_ = 0;
  double alpha_ = 1;
  std::vector<int> image_target_;
  std::vector<int> target_image_;
};

/// A sampled batch: b pool positions plus the c targets they currently hold, targets in
/// ascending index order.
struct ClusterBatchPlan {
  std::vector<int> images;
  std::vector<int> targets;

  static ClusterBatchPlan gather(const TargetPool& pool, std::vector<int> images);
};

struct BatchAssignment {
  Assignment solution;  // target row i -> batch column solution.map[i]
  int reassigned = 0;
};

/// cost[i][j] = ||outputs_j - e_{cluster(t_i)}||^2 over the plan's targets and images.
Matrix assignment_costs(const TargetPool& pool, const ClusterBatchPlan& plan, const Matrix& outputs);

/// Solves the batch assignment and moves the plan's targets accordingly.
BatchAssignment assign_batch(TargetPool& pool, const ClusterBatchPlan& plan, const Matrix& outputs);

struct ConfidenceRule {
  double rho = 0.2;

  void validate() const;  // 0 < rho < 2
};

struct PseudoTarget {
  int row = 0;      // row of `outputs`
  int cluster = 0;  // argmax of that row
};

/// Unassigned rows whose distance to the nearest one-hot target, 2 - 2*max_k f_k, is
/// below rho. unassigned[i] marks rows without a pool target.
std::vector<PseudoTarget> confident_pseudo(const Matrix& outputs, const std::vector<bool>& unassigned,
                                           const ConfidenceRule& rule);

struct LossAndGradient {
  double loss = 0;
  Vector gradient;
};

/// Mean over |S| images and r replicas of ||f(g(x_i)) - e_{y_i}||^2. Returns nullopt when S
/// is empty, meaning the step must be skipped.
std::optional<LossAndGradient> clustering_loss(const Model& model, const Matrix& images,
                                               std::span<const int> clusters,
                                               const AugmentSpec& g, int replicas, Rng& rng);

/// Stacks every image with its 0/90/180/270 degree rotations (image-major).
/// Throws Unsupported unless the shape is a square image.
std::pair<Matrix, std::vector<int>> rotation_batch(const Matrix& images, const DataShape& shape);

/// Mean cross-entropy of the rotation head over the 4b rotated copies.
LossAndGradient rotnet_pass(const Model& model, const Matrix& images);

/// Fraction of the 4b rotated copies whose rotation the head predicts correctly.
double rotation_accuracy(const Model& model, const Matrix& images, int threads = 1);

/// Shared by both phases: which split indices a training batch contains.
enum class Phase { Warmup, Ssl, Cluster };
const char* to_string(Phase phase);
using BatchObserver = std::function<void(Phase, std::span<const int> dataset_indices)>;

struct ClusterConfig {
  int batch_size = 64;
  int replicas = 2;
  ConfidenceRule confidence;
  SgdConfig sgd{0.01, 0.0001, 0.9};
  bool rotnet = true;   // ignored on data without a square image shape
  bool shuffle = true;  // reshuffle the pool each pass; off gives a fixed batch order
  AugmentSpec augment;  // g
  int threads = 1;

  void validate() const;
};

struct ClusterEpochStats {
  double loss_c = 0;  // mean over non-skipped assignment steps
  double loss_r = 0;  // mean over rotation steps
  int confident = 0;
  int reassigned = 0;
  int steps = 0;
  int skipped = 0;
  int rot_steps = 0;
  bool rotnet_disabled = false;
};

/// Mutable training state a phase works on.
struct PhaseState {
  Model& model;
  SgdState& sgd;
  EmaState* ema = nullptr;  // updated after every step when present
  Rng& rng;
};

/// Losses above this, or non-finite ones, abort training.
inline constexpr double kDivergenceLimit = 1e6;

/// One pass of assignment + clustering-loss steps over the pool, then (image data only) one
/// pass of rotation steps. `pool_indices[p]` is the dataset row of pool position p.
ClusterEpochStats clustering_epoch(TargetPool& pool, PhaseState state, const Dataset& data,
                                   std::span<const int> pool_indices, const ClusterConfig& cfg,
                                   const BatchObserver& observer = {});

/// One pass of rotation steps only (RotNet warmup). Returns the mean loss.
double rotnet_epoch(PhaseState state, const Dataset& data, std::span<const int> indices,
                    const ClusterConfig& cfg, const BatchObserver& observer = {});

/// iteration,phase,L_c,L_r,confident_count,reassigned_count
void write_cluster_stats_header(std::ostream& os);
void write_cluster_stats_row(std::ostream& os, int iteration, const ClusterEpochStats& stats);

/// Shuffled (or identity) order sliced into ceil(n/b) batches.
std::vector<std::vector<int>> make_batches(int n, int batch_size, bool shuffle, Rng& rng);

}  // namespace bssl
