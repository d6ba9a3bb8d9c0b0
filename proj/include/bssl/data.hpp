#pragma once

#include "bssl/numeric/dense.hpp"
#include "bssl/shape.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace bssl {

/// Samples stored one per row; images flattened CHW.
struct Dataset {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;
  DataShape shape;

  std::size_t size() const { return labels.size(); }

  /// Rows selected by `indices`, in order.
  Matrix rows(std::span<const int> indices) const;
  std::vector<int> labels_of(std::span<const int> indices) const;

  /// Throws Input if labels fall outside [K), features are non-finite, or sizes disagree.
  void validate() const;
};

/// n points from K unit-variance spherical Gaussians in R^d whose means are pairwise
/// `separation` apart. When d >= K the means are separation/sqrt(2) times K orthonormal
/// directions (all pairwise distances exact); when d < K they are random directions of
/// the same radius, so only the average spacing matches. Labels are balanced to within one.
Dataset make_gaussian_mixture(int K, int n, int d, double separation, std::uint64_t seed);

/// Number of procedural glyph classes available to make_shape_images.
inline constexpr int kShapeClasses = 10;

/// size x size images (values in [0,1]) of K rotation-asymmetric glyphs with jittered
/// position, scale and intensity, additive noise, and a top-lit background gradient.
/// Classes are assigned round-robin so n = K gives one image per class.
Dataset make_shape_images(int K, int n, int size, std::uint64_t seed, int channels = 1);

struct DatasetSplit {
  std::vector<std::vector<int>> labeled_by_class;
  std::vector<int> unlabeled;  // train pool minus the labeled picks
  std::vector<int> test;
  std::uint64_t seed = 0;

  std::vector<int> labeled() const;     // class-major concatenation of labeled_by_class
  std::vector<int> train_pool() const;  // labeled + unlabeled, ascending
  std::size_t labeled_count() const;
};

/// Shuffles with `seed`, takes round(test_frac * n) indices as the test set, then picks
/// `labels_per_class` labeled indices per class from the remaining train pool.
/// Throws Config when a class cannot supply enough labeled points.
DatasetSplit partition(const Dataset& ds, int labels_per_class, double test_frac,
                       std::uint64_t seed);

/// Record file (layout in docs/record_format.md).
enum class RecordDtype : std::uint8_t { U8 = 0x08, F64 = 0x0D };

void write_record_file(const std::filesystem::path& path, const Dataset& ds,
                       RecordDtype dtype = RecordDtype::F64);
Dataset read_record_file(const std::filesystem::path& path);

}  // namespace bssl
