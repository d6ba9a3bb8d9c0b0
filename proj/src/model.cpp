#include "bssl/numeric/model.hpp"

#include "bssl/error.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace bssl {

namespace {

using ConstMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;

ConstMap dense_weights(const Vector& theta, const DenseLayer& l) {
  return ConstMap(theta.data() + l.offset, l.out, l.in);
}
ConstVecMap dense_bias(const Vector& theta, const DenseLayer& l) {
  return ConstVecMap(theta.data() + l.offset + std::size_t(l.out) * l.in, l.out);
}
ConstMap conv_weights(const Vector& theta, const ConvLayer& l) {
  return ConstMap(theta.data() + l.offset, l.out_ch, l.in_ch * 9);
}
ConstVecMap conv_bias(const Vector& theta, const ConvLayer& l) {
  return ConstVecMap(theta.data() + l.offset + std::size_t(l.out_ch) * l.in_ch * 9, l.out_ch);
}

Matrix affine(const Matrix& x, const ConstMap& w, const ConstVecMap& b) {
  Matrix z = x * w.transpose();
  z.rowwise() += b.transpose();
  return z;
}

// One sample (CHW) -> (out_h*out_w) x (in_ch*9) patch matrix.
Matrix im2col(const double* x, const ConvLayer& l) {
  Matrix cols = Matrix::Zero(l.out_h * l.out_w, l.in_ch * 9);
  for (int oy = 0; oy < l.out_h; ++oy) {
    for (int ox = 0; ox < l.out_w; ++ox) {
      const int row = oy * l.out_w + ox;
      for (int c = 0; c < l.in_ch; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * l.stride + ky - 1;
          if (iy < 0 || iy >= l.in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * l.stride + kx - 1;
            if (ix < 0 || ix >= l.in_w) continue;
            cols(row, c * 9 + ky * 3 + kx) = x[(c * l.in_h + iy) * l.in_w + ix];
          }
        }
      }
    }
  }
  return cols;
}

void col2im_add(const Matrix& dcols, const ConvLayer& l, double* dx) {
  for (int oy = 0; oy < l.out_h; ++oy) {
    for (int ox = 0; ox < l.out_w; ++ox) {
      const int row = oy * l.out_w + ox;
      for (int c = 0; c < l.in_ch; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * l.stride + ky - 1;
          if (iy < 0 || iy >= l.in_h) continue;
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ox * l.stride + kx - 1;
            if (ix < 0 || ix >= l.in_w) continue;
            dx[(c * l.in_h + iy) * l.in_w + ix] += dcols(row, c * 9 + ky * 3 + kx);
          }
        }
      }
    }
  }
}

Matrix conv_forward(const Matrix& x, const Vector& theta, const ConvLayer& l) {
  const auto w = conv_weights(theta, l);
  const auto b = conv_bias(theta, l);
  const int hw = l.out_h * l.out_w;
  Matrix out(x.rows(), l.out_size());
  for (Eigen::Index s = 0; s < x.rows(); ++s) {
    const Matrix cols = im2col(x.row(s).data(), l);
    Matrix y = cols * w.transpose();  // hw x out_ch
    y.rowwise() += b.transpose();
    for (int c = 0; c < l.out_ch; ++c) {
      for (int p = 0; p < hw; ++p) out(s, c * hw + p) = y(p, c);
    }
  }
  return out;
}

Matrix leaky(const Matrix& z, double slope) {
  return z.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
}

Matrix leaky_backward(const Matrix& z, const Matrix& g, double slope) {
  return g.binaryExpr(z, [slope](double gv, double zv) { return zv > 0 ? gv : slope * gv; });
}

void check_input(const Model& model, const Matrix& x) {
  if (x.cols() != model.input_size()) {
    fail(ErrorKind::Shape, "input has " + std::to_string(x.cols()) + " columns, model expects " +
                               std::to_string(model.input_size()));
  }
}

void check_upstream(const Matrix& g, Eigen::Index rows, Eigen::Index cols, const char* name) {
  if (g.rows() == 0) return;
  if (g.rows() != rows || g.cols() != cols) {
    fail(ErrorKind::Shape, std::string("upstream gradient for ") + name + " has wrong shape");
  }
}

}  // namespace

Model::Model(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
  if (spec_.num_clusters < 2) fail(ErrorKind::Config, "model needs at least 2 clusters");
  if (spec_.input.size() <= 0) fail(ErrorKind::Config, "model input size must be positive");
  if (spec_.trunk == TrunkKind::Conv && !spec_.input.is_image()) {
    fail(ErrorKind::Config, "conv trunk requires image-shaped input");
  }
  build_layout();

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  theta_.setZero();
  const double a = spec_.leaky_slope;
  auto fill = [&](std::size_t offset, std::size_t count, double stddev) {
    for (std::size_t i = 0; i < count; ++i) theta_[Eigen::Index(offset + i)] = stddev * normal(rng);
  };
  for (const auto& layer : trunk_) {
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, DenseLayer>) {
            fill(l.offset, std::size_t(l.out) * l.in, std::sqrt(2.0 / ((1 + a * a) * l.in)));
          } else {
            fill(l.offset, std::size_t(l.out_ch) * l.in_ch * 9,
                 std::sqrt(2.0 / ((1 + a * a) * l.in_ch * 9)));
          }
        },
        layer);
  }
  fill(cluster_head_.offset, std::size_t(cluster_head_.out) * cluster_head_.in,
       1.0 / std::sqrt(double(cluster_head_.in)));
  fill(rot_head_.offset, std::size_t(rot_head_.out) * rot_head_.in,
       1.0 / std::sqrt(double(rot_head_.in)));
}

void Model::build_layout() {
  trunk_.clear();
  std::size_t offset = 0;
  int width = spec_.input.size();
  if (spec_.trunk == TrunkKind::Mlp) {
    for (int h : spec_.hidden) {
      if (h <= 0) fail(ErrorKind::Config, "hidden layer widths must be positive");
      DenseLayer l{width, h, offset, true};
      offset += l.parameter_count();
      trunk_.emplace_back(l);
      width = h;
    }
  } else {
    int ch = spec_.input.channels, hh = spec_.input.height, ww = spec_.input.width;
    for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
      ConvLayer l;
      l.in_ch = ch;
      l.in_h = hh;
      l.in_w = ww;
      l.out_ch = spec_.conv_channels[i];
      if (l.out_ch <= 0) fail(ErrorKind::Config, "conv channel counts must be positive");
      l.stride = i == 0 ? 1 : 2;
      l.out_h = (hh - 1) / l.stride + 1;
      l.out_w = (ww - 1) / l.stride + 1;
      l.offset = offset;
      offset += l.parameter_count();
      trunk_.emplace_back(l);
      ch = l.out_ch;
      hh = l.out_h;
      ww = l.out_w;
    }
    width = ch * hh * ww;
  }
  cluster_head_ = DenseLayer{width, spec_.num_clusters, offset, false};
  offset += cluster_head_.parameter_count();
  rot_head_ = DenseLayer{width, 4, offset, false};
  offset += rot_head_.parameter_count();
  theta_ = Vector::Zero(Eigen::Index(offset));
}

int Model::feature_size() const { return cluster_head_.in; }

void Model::set_parameters(const Vector& theta) {
  if (theta.size() != theta_.size()) {
    fail(ErrorKind::Shape, "parameter vector has " + std::to_string(theta.size()) +
                               " entries, model has " + std::to_string(theta_.size()));
  }
  theta_ = theta;
}

Tape forward_recorded(const Model& model, const Matrix& x) {
  check_input(model, x);
  const Vector& theta = model.parameters();
  const double slope = model.spec().leaky_slope;
  Tape tape;
  Matrix h = x;
  for (const auto& layer : model.trunk()) {
    tape.layer_inputs.push_back(h);
    Matrix z = std::visit(
        [&](const auto& l) -> Matrix {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, DenseLayer>) {
            return affine(h, dense_weights(theta, l), dense_bias(theta, l));
          } else {
            return conv_forward(h, theta, l);
          }
        },
        layer);
    h = leaky(z, slope);
    tape.pre_acts.push_back(std::move(z));
  }
  tape.features = h;
  const auto& ch = model.cluster_head();
  const auto& rh = model.rot_head();
  tape.cluster_pre = affine(h, dense_weights(theta, ch), dense_bias(theta, ch));
  tape.outputs.cluster = normalize_rows(tape.cluster_pre);
  tape.outputs.rot_logits = affine(h, dense_weights(theta, rh), dense_bias(theta, rh));
  tape.parameter_count = model.parameter_count();
  return tape;
}

ModelOutputs forward(const Model& model, const Matrix& x, int threads) {
  check_input(model, x);
  const Eigen::Index n = x.rows();
  // Fixed chunk boundaries keep results bit-identical for any thread count.
  const Eigen::Index chunks = (n + kForwardChunk - 1) / kForwardChunk;
  ModelOutputs out{Matrix(n, model.num_clusters()), Matrix(n, 4)};
  auto run_chunk = [&](Eigen::Index chunk) {
    const Eigen::Index start = chunk * kForwardChunk;
    const Eigen::Index len = std::min(kForwardChunk, n - start);
    ModelOutputs part = forward_recorded(model, x.middleRows(start, len)).outputs;
    out.cluster.middleRows(start, len) = part.cluster;
    out.rot_logits.middleRows(start, len) = part.rot_logits;
  };
  const int workers_wanted = int(std::min<Eigen::Index>(std::max(threads, 1), chunks));
  if (workers_wanted <= 1) {
    for (Eigen::Index c = 0; c < chunks; ++c) run_chunk(c);
    return out;
  }
  std::vector<std::jthread> workers;
  for (int w = 0; w < workers_wanted; ++w) {
    workers.emplace_back([&, w] {
      for (Eigen::Index c = w; c < chunks; c += workers_wanted) run_chunk(c);
    });
  }
  workers.clear();
  return out;
}

Vector backward(const Model& model, const Tape& tape, const Matrix& d_cluster,
                const Matrix& d_rot) {
  if (tape.empty()) fail(ErrorKind::State, "backward called without a recorded forward pass");
  if (tape.parameter_count != model.parameter_count()) {
    fail(ErrorKind::State, "tape was recorded on a model with a different layout");
  }
  const Eigen::Index n = tape.batch();
  check_upstream(d_cluster, n, model.num_clusters(), "cluster head");
  check_upstream(d_rot, n, 4, "rotation head");

  const Vector& theta = model.parameters();
  const double slope = model.spec().leaky_slope;
  Vector grad = Vector::Zero(theta.size());
  Matrix d_features = Matrix::Zero(n, model.feature_size());

  auto head_backward = [&](const DenseLayer& l, const Matrix& dz) {
    Eigen::Map<Matrix> gw(grad.data() + l.offset, l.out, l.in);
    Eigen::Map<Vector> gb(grad.data() + l.offset + std::size_t(l.out) * l.in, l.out);
    gw += dz.transpose() * tape.features;
    gb += dz.colwise().sum().transpose();
    d_features += dz * dense_weights(theta, l);
  };

  if (d_cluster.rows() > 0) {
    head_backward(model.cluster_head(), normalize_rows_backward(tape.cluster_pre, d_cluster));
  }
  if (d_rot.rows() > 0) head_backward(model.rot_head(), d_rot);

  Matrix g = std::move(d_features);
  for (std::size_t idx = model.trunk().size(); idx-- > 0;) {
    const Matrix dz = leaky_backward(tape.pre_acts[idx], g, slope);
    const Matrix& input = tape.layer_inputs[idx];
    g = std::visit(
        [&](const auto& l) -> Matrix {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, DenseLayer>) {
            Eigen::Map<Matrix> gw(grad.data() + l.offset, l.out, l.in);
            Eigen::Map<Vector> gb(grad.data() + l.offset + std::size_t(l.out) * l.in, l.out);
            gw += dz.transpose() * input;
            gb += dz.colwise().sum().transpose();
            return dz * dense_weights(theta, l);
          } else {
            Eigen::Map<Matrix> gw(grad.data() + l.offset, l.out_ch, l.in_ch * 9);
            Eigen::Map<Vector> gb(grad.data() + l.offset + std::size_t(l.out_ch) * l.in_ch * 9,
                                  l.out_ch);
            const auto w = conv_weights(theta, l);
            const int hw = l.out_h * l.out_w;
            Matrix dx = Matrix::Zero(n, l.in_size());
            for (Eigen::Index s = 0; s < n; ++s) {
              Matrix dy(hw, l.out_ch);
              for (int c = 0; c < l.out_ch; ++c) {
                for (int p = 0; p < hw; ++p) dy(p, c) = dz(s, c * hw + p);
              }
              const Matrix cols = im2col(input.row(s).data(), l);
              gw += dy.transpose() * cols;
              gb += dy.colwise().sum().transpose();
              const Matrix dcols = dy * w;
              col2im_add(dcols, l, dx.row(s).data());
            }
            return dx;
          }
        },
        model.trunk()[idx]);
  }
  return grad;
}

}  // namespace bssl
