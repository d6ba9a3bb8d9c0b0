#pragma once

#include "bssl/numeric/dense.hpp"
#include "bssl/numeric/model.hpp"
#include "bssl/numeric/optim.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace bssl {

/// Little-endian byte sink.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(char(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void i64(std::int64_t v) { u64(std::uint64_t(v)); }
  void f64(double v);
  void str(std::string_view s);
  void vec(const Vector& v);
  void ints(const std::vector<int>& v);

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

/// Bounds-checked reader over a byte buffer; throws ErrorKind::Io when truncated.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  std::int64_t i64() { return std::int64_t(u64()); }
  double f64();
  std::string str();
  Vector vec();
  std::vector<int> ints();

  bool done() const { return pos_ == data_.size(); }
  void expect_done() const;

 private:
  std::string_view take(std::size_t n);

  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Versioned container of named binary sections, closed by an FNV-1a checksum.
///
///   "BSSLCKPT" | u32 version | u32 count | { u32 len, name, u64 len, payload }* | u64 fnv1a
struct Container {
  static constexpr std::uint32_t kVersion = 1;

  std::uint32_t version = kVersion;
  std::vector<std::pair<std::string, std::string>> sections;

  void put(std::string name, std::string payload);
  const std::string& get(std::string_view name) const;
  std::optional<std::string_view> find(std::string_view name) const;
};

std::string encode(const Container& c);
/// Refuses foreign magic, other versions, truncation and checksum mismatch.
Container decode(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary file and renames, so readers never see partial files.
void write_file(const std::filesystem::path& path, std::string_view bytes);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

void write_model_spec(ByteWriter& w, const ModelSpec& spec);
ModelSpec read_model_spec(ByteReader& r);

/// Model checkpoint: layer layout, parameters, EMA shadow and RNG state.
struct ModelCheckpoint {
  Model model;
  EmaState ema;
  std::string rng;
};

void store(Container& c, const ModelCheckpoint& ckpt);
ModelCheckpoint load_model_checkpoint(const Container& c);

void save_model_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt);
ModelCheckpoint load_model_checkpoint(const std::filesystem::path& path);

}  // namespace bssl
