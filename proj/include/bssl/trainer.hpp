#pragma once

#include "bssl/assignment/accuracy.hpp"
#include "bssl/clustering.hpp"
#include "bssl/data.hpp"
#include "bssl/numeric/serialize.hpp"
#include "bssl/ssl.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace bssl {

struct ModelOptions {
  TrunkKind trunk = TrunkKind::Mlp;
  std::vector<int> hidden = {128, 128};
  std::vector<int> conv_channels = {8, 16, 16};
  double leaky_slope = 0.1;

  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

/// Every hyper-parameter of the alternating schedule.
struct TrainConfig {
  int iters = 200;
  int e1 = 5;                 // semi-supervised epochs per iteration
  int e2 = 1;                 // clustering epochs per iteration
  int warmup_rot_epochs = 5;  // rotation-only epochs before the first iteration
  double lr_ssl = 0.03;
  double wd_ssl = 0.0005;
  double momentum_ssl = 0.9;
  double lr_cluster = 0.01;
  double wd_cluster = 0.0001;
  double momentum_cluster = 0.9;
  double ema_decay = 0.999;
  double rho = 0.2;
  double alpha = 1.0;
  double tau = 0.95;
  double lambda_u = 1.0;
  int mu = 7;
  int replicas = 2;  // r
  int batch_size = 64;
  double temperature = 0.1;
  bool rotnet = true;
  bool shuffle = true;
  ModelOptions model;
  std::optional<AugmentParams> weak_aug;
  std::optional<AugmentParams> strong_aug;
  std::optional<AugmentParams> cluster_aug;
  std::uint64_t seed = 0;
  int threads = 1;

  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

ModelSpec make_model_spec(const TrainConfig& cfg, const DataShape& shape, int K);
AugmentSpec make_augment(const TrainConfig& cfg, AugmentKind kind, const DataShape& shape);
SslHyper make_ssl_hyper(const TrainConfig& cfg, const DataShape& shape);
ClusterConfig make_cluster_config(const TrainConfig& cfg, const DataShape& shape);

/// One metrics.csv row. NaN marks a column that does not apply to the row's phase.
struct MetricRow {
  int iter = 0;
  Phase phase = Phase::Warmup;
  bool eval = false;  // evaluation row (phase column reads "eval")
  int epoch = 0;
  double loss_s = 0, loss_u = 0, loss_c = 0, loss_r = 0;
  double mask_rate = 0;
  int confident = 0;
  double test_cls_acc = 0, test_clu_acc = 0;

  friend bool operator==(const MetricRow&, const MetricRow&) = default;
};

inline constexpr const char* kMetricsHeader =
    "iter,phase,epoch,L_s,L_u,L_c,L_r,mask_rate,confident_count,test_cls_acc,test_clu_acc";

void write_metrics_csv(std::ostream& os, const std::vector<MetricRow>& rows);
std::string metrics_csv(const std::vector<MetricRow>& rows);

struct EvalResult {
  double classification_acc = 0;
  double clustering_acc = 0;
  Permutation best_perm;          // cluster -> label
  std::vector<int> predictions;   // cluster id per test point
  std::vector<int> cluster_sizes;  // prediction histogram
};

/// Scores argmax cluster predictions against the labels. Throws Eval on an empty set.
EvalResult evaluate(const Model& model, const Matrix& x, std::span<const int> y, int threads = 1);

struct TopkCurve {
  std::vector<double> accuracy;       // best test accuracy among the first k permutations
  std::vector<Permutation> perms;     // cluster -> label, Murty order
  std::vector<double> perm_accuracy;  // test accuracy of each permutation
};

/// Scores S[label][cluster] from rotation-averaged class distributions on the labeled
/// images, ranks label->cluster maps by Murty's method on -S, and reports for each prefix
/// the best test accuracy. Throws Unsupported on non-image data.
TopkCurve topk_permutation_accuracy(const Model& model, const Matrix& labeled_x,
                                    std::span<const int> labeled_y, const Matrix& test_x,
                                    std::span<const int> test_y, std::size_t k, double temperature,
                                    int threads = 1);

/// Everything that evolves during training; checkpoints store exactly this.
struct TrainState {
  Model model;
  EmaState ema;
  SgdState sgd_ssl;
  SgdState sgd_cluster;
  TargetPool pool;
  Rng rng;
  bool warmed_up = false;
  int completed_iters = 0;
  std::vector<MetricRow> rows;
};

TrainState init_train_state(const TrainConfig& cfg, const Dataset& data, const DatasetSplit& split);

struct TrainHooks {
  BatchObserver observer;
  /// Called after every clustering epoch with the pool it left behind.
  std::function<void(const TargetPool&, const ClusterEpochStats&)> after_cluster_epoch;
  /// Called after every completed iteration; return false to stop early.
  std::function<bool(const TrainState&)> after_iteration;
  /// Where the last finite state is written when training diverges (empty: nowhere).
  std::filesystem::path divergence_checkpoint;
};

struct RunRecord {
  std::vector<MetricRow> rows;
  std::optional<EvalResult> final_eval;  // EMA model on the test set
  std::vector<std::string> warnings;
  int completed_iters = 0;
};

/// Rotation warmup, then iterations of e1 semi-supervised and e2 clustering epochs with an
/// EMA evaluation after each. Resumes from whatever `state` holds. Throws Divergence (after
/// writing hooks.divergence_checkpoint) when a loss explodes.
RunRecord train(const TrainConfig& cfg, const Dataset& data, const DatasetSplit& split,
                TrainState& state, const TrainHooks& hooks = {});

void save_train_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg,
                           const TrainState& state);
/// Refuses foreign versions, corrupt files and checkpoints written under a different config
/// (only `iters` and `threads` may differ).
TrainState load_train_checkpoint(const std::filesystem::path& path, const TrainConfig& cfg);
/// Reads only the model and EMA (for evaluation).
ModelCheckpoint load_eval_checkpoint(const std::filesystem::path& path);

/// Count of each phase's epochs among the rows.
struct EpochCounts {
  int warmup = 0, ssl = 0, cluster = 0, eval = 0;
};
EpochCounts count_epochs(const std::vector<MetricRow>& rows);

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bssl
