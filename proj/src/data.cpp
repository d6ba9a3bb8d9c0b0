#include "bssl/data.hpp"

#include "bssl/error.hpp"
#include "bssl/numeric/serialize.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace bssl {

Matrix Dataset::rows(std::span<const int> indices) const {
  Matrix out(Eigen::Index(indices.size()), features.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) out.row(Eigen::Index(i)) = features.row(indices[i]);
  return out;
}

std::vector<int> Dataset::labels_of(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(labels[std::size_t(i)]);
  return out;
}

void Dataset::validate() const {
  if (num_classes < 1) fail(ErrorKind::Input, "dataset has no classes");
  if (features.rows() != Eigen::Index(labels.size()))
    fail(ErrorKind::Input, "dataset has " + std::to_string(features.rows()) + " rows but " +
                               std::to_string(labels.size()) + " labels");
  if (features.cols() != shape.size())
    fail(ErrorKind::Input, "dataset features do not match " + shape.describe());
  for (int y : labels) {
    if (y < 0 || y >= num_classes) fail(ErrorKind::Input, "label " + std::to_string(y) + " out of range");
  }
  if (!all_finite(features)) fail(ErrorKind::Input, "dataset features are not finite");
}

namespace {

std::vector<int> balanced_labels(int K, int n, Rng& rng) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[std::size_t(i)] = i % K;
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

void check_counts(int K, int n) {
  if (K < 1 || n < 1) fail(ErrorKind::Config, "dataset needs K >= 1 and n >= 1");
}

// 5x5 glyphs, none invariant under a quarter or half turn.
constexpr std::array<const char*, kShapeClasses> kGlyphs = {
    "#####..#....#....#....#..",  // T
    "#....#....#....#....#####",  // L
    "####.#...#####.#....#....",  // P
    "#..#.#..#.#####...#....#.",  // 4
    "#####...#...#...#...#....",  // 7
    "######....####.#....#....",  // F
    "..###...#....#.#..#..##..",  // J
    "#...#.#.#...#....#....#..",  // Y
    "######....####.#....#####",  // E
    ".#####....#.####...#.###.",  // G
};

}  // namespace

Dataset make_gaussian_mixture(int K, int n, int d, double separation, std::uint64_t seed) {
  check_counts(K, n);
  if (d < 1) fail(ErrorKind::Config, "gaussian mixture needs d >= 1");
  Rng rng(seed);
  std::normal_distribution<double> normal(0, 1);

  Matrix gauss(d, std::max(d, K));
  for (Eigen::Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = normal(rng);
  Matrix directions(d, K);
  if (d >= K) {
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(gauss.leftCols(d)).householderQ();
    directions = q.leftCols(K);
  } else {
    directions = gauss.leftCols(K);
    for (int k = 0; k < K; ++k) directions.col(k).normalize();
  }
  const Matrix means = directions.transpose() * (separation / std::sqrt(2.0));

  Dataset ds;
  ds.num_classes = K;
  ds.shape = DataShape::vector(d);
  ds.labels = balanced_labels(K, n, rng);
  ds.features.resize(n, d);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) ds.features(i, j) = means(ds.labels[std::size_t(i)], j) + normal(rng);
  }
  return ds;
}

Dataset make_shape_images(int K, int n, int size, std::uint64_t seed, int channels) {
  check_counts(K, n);
  if (K > kShapeClasses) fail(ErrorKind::Config, "shape images support at most " + std::to_string(kShapeClasses) + " classes");
  if (size < 8 || size > 32) fail(ErrorKind::Config, "shape image size must lie in [8, 32]");
  if (channels != 1 && channels != 3) fail(ErrorKind::Config, "shape images have 1 or 3 channels");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0, 1);
  std::normal_distribution<double> noise(0, 0.05);

  Dataset ds;
  ds.num_classes = K;
  ds.shape = DataShape::image(size, size, channels);
  ds.labels.resize(std::size_t(n));
  ds.features.resize(n, ds.shape.size());
  const int min_box = std::max(5, int(std::ceil(0.6 * size)));
  for (int i = 0; i < n; ++i) {
    const int k = i % K;
    ds.labels[std::size_t(i)] = k;
    const int box = std::uniform_int_distribution<int>(min_box, size - 1)(rng);
    const int top = std::uniform_int_distribution<int>(0, size - box)(rng);
    const int left = std::uniform_int_distribution<int>(0, size - box)(rng);
    std::array<double, 3> ink{};
    for (int c = 0; c < channels; ++c) ink[std::size_t(c)] = 0.7 + 0.3 * unit(rng);
    const char* glyph = kGlyphs[std::size_t(k)];
    for (int c = 0; c < channels; ++c) {
      for (int y = 0; y < size; ++y) {
        const double background = 0.1 + 0.15 * (1.0 - double(y) / (size - 1));
        for (int x = 0; x < size; ++x) {
          double v = background;
          const int gy = y - top, gx = x - left;
          if (gy >= 0 && gy < box && gx >= 0 && gx < box && glyph[(gy * 5 / box) * 5 + gx * 5 / box] == '#')
            v = ink[std::size_t(c)];
          ds.features(i, (c * size + y) * size + x) = std::clamp(v + noise(rng), 0.0, 1.0);
        }
      }
    }
  }
  return ds;
}

std::vector<int> DatasetSplit::labeled() const {
  std::vector<int> out;
  for (const auto& cls : labeled_by_class) out.insert(out.end(), cls.begin(), cls.end());
  return out;
}

std::vector<int> DatasetSplit::train_pool() const {
  std::vector<int> out = labeled();
  out.insert(out.end(), unlabeled.begin(), unlabeled.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t DatasetSplit::labeled_count() const {
  std::size_t total = 0;
  for (const auto& cls : labeled_by_class) total += cls.size();
  return total;
}

DatasetSplit partition(const Dataset& ds, int labels_per_class, double test_frac,
                       std::uint64_t seed) {
  if (!(test_frac >= 0 && test_frac < 1)) fail(ErrorKind::Config, "test_frac must lie in [0, 1)");
  if (labels_per_class < 0) fail(ErrorKind::Config, "labels_per_class must be >= 0");
  const int n = int(ds.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  split.seed = seed;
  const auto n_test = std::size_t(std::lround(test_frac * n));
  split.test.assign(order.begin(), order.begin() + std::ptrdiff_t(n_test));
  std::sort(split.test.begin(), split.test.end());

  split.labeled_by_class.assign(std::size_t(ds.num_classes), {});
  for (auto it = order.begin() + std::ptrdiff_t(n_test); it != order.end(); ++it) {
    auto& cls = split.labeled_by_class[std::size_t(ds.labels[std::size_t(*it)])];
    if (int(cls.size()) < labels_per_class) {
      cls.push_back(*it);
    } else {
      split.unlabeled.push_back(*it);
    }
  }
  for (int k = 0; k < ds.num_classes; ++k) {
    const auto have = split.labeled_by_class[std::size_t(k)].size();
    if (int(have) < labels_per_class)
      fail(ErrorKind::Config, "class " + std::to_string(k) + " has only " + std::to_string(have) +
                                  " training points, " + std::to_string(labels_per_class) +
                                  " labels requested");
  }
  std::sort(split.unlabeled.begin(), split.unlabeled.end());
  return split;
}

namespace {

constexpr char kRecordMagic[4] = {'B', 'S', 'R', 'F'};

}  // namespace

void write_record_file(const std::filesystem::path& path, const Dataset& ds, RecordDtype dtype) {
  ds.validate();
  ByteWriter w;
  for (char c : kRecordMagic) w.u8(std::uint8_t(c));
  w.u8(std::uint8_t(dtype));
  const bool image = ds.shape.is_image();
  w.u8(image ? 4 : 2);
  w.u8(0);
  w.u8(0);
  w.u32(std::uint32_t(ds.num_classes));
  w.u32(std::uint32_t(ds.size()));
  if (image) {
    w.u32(std::uint32_t(ds.shape.channels));
    w.u32(std::uint32_t(ds.shape.height));
    w.u32(std::uint32_t(ds.shape.width));
  } else {
    w.u32(std::uint32_t(ds.shape.length));
  }
  for (Eigen::Index i = 0; i < ds.features.size(); ++i) {
    const double v = ds.features.data()[i];
    if (dtype == RecordDtype::U8) {
      w.u8(std::uint8_t(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    } else {
      w.f64(v);
    }
  }
  for (int y : ds.labels) w.u32(std::uint32_t(y));
  write_file(path, w.bytes());
}

Dataset read_record_file(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes);
  for (char c : kRecordMagic) {
    if (r.u8() != std::uint8_t(c)) fail(ErrorKind::Io, path.string() + " is not a record file");
  }
  const auto dtype = RecordDtype(r.u8());
  if (dtype != RecordDtype::U8 && dtype != RecordDtype::F64)
    fail(ErrorKind::Io, path.string() + ": unknown dtype code");
  const int rank = r.u8();
  r.u8();
  r.u8();
  if (rank != 2 && rank != 4) fail(ErrorKind::Io, path.string() + ": rank must be 2 or 4");

  Dataset ds;
  ds.num_classes = int(r.u32());
  const auto n = r.u32();
  if (rank == 4) {
    const int ch = int(r.u32());
    const int h = int(r.u32());
    const int w = int(r.u32());
    ds.shape = DataShape::image(h, w, ch);
  } else {
    ds.shape = DataShape::vector(int(r.u32()));
  }
  ds.features.resize(Eigen::Index(n), ds.shape.size());
  for (Eigen::Index i = 0; i < ds.features.size(); ++i)
    ds.features.data()[i] = dtype == RecordDtype::U8 ? r.u8() / 255.0 : r.f64();
  ds.labels.resize(n);
  for (auto& y : ds.labels) y = int(r.u32());
  r.expect_done();
  ds.validate();
  return ds;
}

}  // namespace bssl
