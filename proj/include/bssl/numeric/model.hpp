#pragma once

#include "bssl/numeric/dense.hpp"
#include "bssl/shape.hpp"

#include <cstdint>
#include <random>
#include <variant>
#include <vector>

namespace bssl {

enum class TrunkKind { Mlp, Conv };

/// Architecture description. Everything needed to rebuild a Model's layout.
struct ModelSpec {
  DataShape input = DataShape::vector(2);
  TrunkKind trunk = TrunkKind::Mlp;
  std::vector<int> hidden = {128, 128};      // MLP trunk widths
  std::vector<int> conv_channels = {8, 16, 16};  // conv trunk: 3x3 kernels, strides 1,2,2
  int num_clusters = 10;
  double leaky_slope = 0.1;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

struct DenseLayer {
  int in = 0;
  int out = 0;
  std::size_t offset = 0;  // weights (out x in, row-major) followed by bias (out)
  bool activate = true;

  std::size_t parameter_count() const { return std::size_t(out) * in + out; }
};

struct ConvLayer {
  int in_ch = 0, in_h = 0, in_w = 0;
  int out_ch = 0, out_h = 0, out_w = 0;
  int stride = 1;  // 3x3 kernel, zero padding 1
  std::size_t offset = 0;  // weights (out_ch x in_ch*9) followed by bias (out_ch)

  int in_size() const { return in_ch * in_h * in_w; }
  int out_size() const { return out_ch * out_h * out_w; }
  std::size_t parameter_count() const { return std::size_t(out_ch) * in_ch * 9 + out_ch; }
};

using TrunkLayer = std::variant<DenseLayer, ConvLayer>;

/// Shared trunk with an L2-normalized K-way cluster head and a 4-way rotation head.
/// All parameters live in one flat vector; layers address it by offset.
class Model {
 public:
  Model() = default;
  Model(const ModelSpec& spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  int input_size() const { return spec_.input.size(); }
  int num_clusters() const { return spec_.num_clusters; }
  int feature_size() const;  // width of the penultimate layer

  const std::vector<TrunkLayer>& trunk() const { return trunk_; }
  const DenseLayer& cluster_head() const { return cluster_head_; }
  const DenseLayer& rot_head() const { return rot_head_; }

  const Vector& parameters() const { return theta_; }
  Vector& parameters() { return theta_; }
  std::size_t parameter_count() const { return std::size_t(theta_.size()); }

  /// Replaces parameters; throws on size mismatch.
  void set_parameters(const Vector& theta);

 private:
  void build_layout();

  ModelSpec spec_;
  std::vector<TrunkLayer> trunk_;
  DenseLayer cluster_head_;
  DenseLayer rot_head_;
  Vector theta_;
};

struct ModelOutputs {
  Matrix cluster;     // batch x K, unit-norm rows
  Matrix rot_logits;  // batch x 4
};

/// Activations recorded by a forward pass, consumed by backward().
struct Tape {
  std::vector<Matrix> layer_inputs;  // input to each trunk layer
  std::vector<Matrix> pre_acts;      // pre-activation of each trunk layer
  Matrix features;                   // penultimate activations
  Matrix cluster_pre;                // cluster head pre-normalization
  ModelOutputs outputs;
  std::size_t parameter_count = 0;

  bool empty() const { return parameter_count == 0; }
  Eigen::Index batch() const { return features.rows(); }
};

/// Rows per forward chunk; chunk boundaries do not depend on the thread count.
inline constexpr Eigen::Index kForwardChunk = 64;

/// Pure forward pass over fixed row chunks, spread across `threads` workers.
ModelOutputs forward(const Model& model, const Matrix& x, int threads = 1);

/// Forward pass that records activations for backward().
Tape forward_recorded(const Model& model, const Matrix& x);

/// Gradient of sum_ij(d_cluster .* cluster_out) + sum_ij(d_rot .* rot_logits) w.r.t. the
/// parameters. An empty (0-row) upstream matrix stands for zero.
Vector backward(const Model& model, const Tape& tape, const Matrix& d_cluster,
                const Matrix& d_rot);

}  // namespace bssl
