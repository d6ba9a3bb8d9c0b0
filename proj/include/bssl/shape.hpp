#pragma once

#include <cstddef>
#include <string>

namespace bssl {

/// Layout of one sample. Images are stored flattened channel-major (CHW).
struct DataShape {
  enum class Kind { Vector, Image };

  Kind kind = Kind::Vector;
  int channels = 1;
  int height = 1;
  int width = 1;
  int length = 0;  // vector length; unused for images

  static DataShape vector(int d) { return {Kind::Vector, 1, 1, 1, d}; }
  static DataShape image(int h, int w, int ch) { return {Kind::Image, ch, h, w, 0}; }

  bool is_image() const { return kind == Kind::Image; }
  bool is_square_image() const { return is_image() && height == width; }
  int size() const { return is_image() ? channels * height * width : length; }

  std::string describe() const {
    if (is_image()) {
      return "image(" + std::to_string(height) + "x" + std::to_string(width) + "x" +
             std::to_string(channels) + ")";
    }
    return "vector(" + std::to_string(length) + ")";
  }

  friend bool operator==(const DataShape&, const DataShape&) = default;
};

}  // namespace bssl
