#include "bssl/numeric/serialize.hpp"

#include "bssl/error.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace bssl {

namespace {

constexpr std::string_view kMagic = "BSSLCKPT";

std::uint64_t fnv1a(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
}

void ByteWriter::u64(std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf_.push_back(char((v >> (8 * i)) & 0xff));
}

void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::str(std::string_view s) {
  u64(s.size());
  buf_.append(s);
}

void ByteWriter::vec(const Vector& v) {
  u64(std::uint64_t(v.size()));
  for (double x : v) f64(x);
}

void ByteWriter::ints(const std::vector<int>& v) {
  u64(v.size());
  for (int x : v) i64(x);
}

std::string_view ByteReader::take(std::size_t n) {
  if (n > data_.size() - pos_) fail(ErrorKind::Io, "truncated data");
  auto out = data_.substr(pos_, n);
  pos_ += n;
  return out;
}

std::uint8_t ByteReader::u8() { return std::uint8_t(take(1)[0]); }

std::uint32_t ByteReader::u32() {
  auto b = take(4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= std::uint32_t(std::uint8_t(b[i])) << (8 * i);
  return v;
}

std::uint64_t ByteReader::u64() {
  auto b = take(8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t(std::uint8_t(b[i])) << (8 * i);
  return v;
}

double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::string ByteReader::str() {
  const auto n = u64();
  return std::string(take(n));
}

Vector ByteReader::vec() {
  const auto n = u64();
  if (n > (data_.size() - pos_) / 8) fail(ErrorKind::Io, "truncated vector");
  Vector v = Vector::Zero(Eigen::Index(n));
  for (auto& x : v) x = f64();
  return v;
}

std::vector<int> ByteReader::ints() {
  const auto n = u64();
  if (n > (data_.size() - pos_) / 8) fail(ErrorKind::Io, "truncated integer array");
  std::vector<int> v(n);
  for (auto& x : v) x = int(i64());
  return v;
}

void ByteReader::expect_done() const {
  if (!done()) fail(ErrorKind::Io, "trailing bytes in section");
}

void Container::put(std::string name, std::string payload) {
  for (auto& [n, p] : sections) {
    if (n == name) {
      p = std::move(payload);
      return;
    }
  }
  sections.emplace_back(std::move(name), std::move(payload));
}

std::optional<std::string_view> Container::find(std::string_view name) const {
  for (const auto& [n, p] : sections) {
    if (n == name) return std::string_view(p);
  }
  return std::nullopt;
}

const std::string& Container::get(std::string_view name) const {
  for (const auto& [n, p] : sections) {
    if (n == name) return p;
  }
  fail(ErrorKind::Io, "checkpoint is missing section '" + std::string(name) + "'");
}

std::string encode(const Container& c) {
  ByteWriter w;
  for (char ch : kMagic) w.u8(std::uint8_t(ch));
  w.u32(c.version);
  w.u32(std::uint32_t(c.sections.size()));
  for (const auto& [name, payload] : c.sections) {
    w.u32(std::uint32_t(name.size()));
    for (char ch : name) w.u8(std::uint8_t(ch));
    w.str(payload);
  }
  std::string out = w.take();
  ByteWriter tail;
  tail.u64(fnv1a(out));
  out += tail.bytes();
  return out;
}

Container decode(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 16 || bytes.substr(0, kMagic.size()) != kMagic) {
    fail(ErrorKind::Io, "not a checkpoint file (bad magic or truncated)");
  }
  const auto body = bytes.substr(0, bytes.size() - 8);
  ByteReader tail(bytes.substr(bytes.size() - 8));
  ByteReader r(body.substr(kMagic.size()));
  Container c;
  c.version = r.u32();
  if (c.version != Container::kVersion) {
    fail(ErrorKind::Version, "checkpoint version " + std::to_string(c.version) +
                                 " is not supported (expected " +
                                 std::to_string(Container::kVersion) + ")");
  }
  if (tail.u64() != fnv1a(body)) fail(ErrorKind::Io, "checkpoint checksum mismatch (corrupt or truncated)");
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.u32();
    std::string name;
    for (std::uint32_t k = 0; k < len; ++k) name.push_back(char(r.u8()));
    c.sections.emplace_back(std::move(name), r.str());
  }
  r.expect_done();
  return c;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot write " + tmp.string());
    out.write(bytes.data(), std::streamsize(bytes.size()));
    if (!out) fail(ErrorKind::Io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string rng_state(const Rng& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream ss(state);
  ss >> rng;
  if (!ss) fail(ErrorKind::Io, "corrupt RNG state");
  return rng;
}

void write_model_spec(ByteWriter& w, const ModelSpec& spec) {
  w.u8(spec.input.is_image() ? 1 : 0);
  w.i64(spec.input.channels);
  w.i64(spec.input.height);
  w.i64(spec.input.width);
  w.i64(spec.input.length);
  w.u8(spec.trunk == TrunkKind::Conv ? 1 : 0);
  w.ints(spec.hidden);
  w.ints(spec.conv_channels);
  w.i64(spec.num_clusters);
  w.f64(spec.leaky_slope);
}

ModelSpec read_model_spec(ByteReader& r) {
  ModelSpec spec;
  spec.input.kind = r.u8() ? DataShape::Kind::Image : DataShape::Kind::Vector;
  spec.input.channels = int(r.i64());
  spec.input.height = int(r.i64());
  spec.input.width = int(r.i64());
  spec.input.length = int(r.i64());
  spec.trunk = r.u8() ? TrunkKind::Conv : TrunkKind::Mlp;
  spec.hidden = r.ints();
  spec.conv_channels = r.ints();
  spec.num_clusters = int(r.i64());
  spec.leaky_slope = r.f64();
  return spec;
}

void store(Container& c, const ModelCheckpoint& ckpt) {
  ByteWriter spec;
  write_model_spec(spec, ckpt.model.spec());
  c.put("model.spec", spec.take());
  ByteWriter theta;
  theta.vec(ckpt.model.parameters());
  c.put("model.theta", theta.take());
  ByteWriter ema;
  ema.f64(ckpt.ema.decay);
  ema.vec(ckpt.ema.shadow);
  c.put("model.ema", ema.take());
  c.put("rng", ckpt.rng);
}

ModelCheckpoint load_model_checkpoint(const Container& c) {
  ByteReader spec_r(c.get("model.spec"));
  const ModelSpec spec = read_model_spec(spec_r);
  spec_r.expect_done();
  Model model(spec, 0);
  ByteReader theta_r(c.get("model.theta"));
  model.set_parameters(theta_r.vec());
  theta_r.expect_done();
  ByteReader ema_r(c.get("model.ema"));
  EmaState ema;
  ema.decay = ema_r.f64();
  ema.shadow = ema_r.vec();
  ema_r.expect_done();
  if (ema.shadow.size() != model.parameters().size()) {
    fail(ErrorKind::Io, "EMA shadow size does not match the model");
  }
  return {std::move(model), std::move(ema), c.get("rng")};
}

void save_model_checkpoint(const std::filesystem::path& path, const ModelCheckpoint& ckpt) {
  Container c;
  store(c, ckpt);
  write_file(path, encode(c));
}

ModelCheckpoint load_model_checkpoint(const std::filesystem::path& path) {
  return load_model_checkpoint(decode(read_file(path)));
}

}  // namespace bssl
