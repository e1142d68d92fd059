#include "kp/nn/checkpoint.hpp"

#include "kp/binary_io.hpp"
#include "kp/util.hpp"

namespace kp::nn {

namespace {
constexpr std::string_view kMagic = "KPCK";
constexpr std::uint32_t kVersion = 1;
}  // namespace

const Tensor& Checkpoint::at(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return e.tensor;
  }
  throw InvalidInput("checkpoint has no entry '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) return true;
  }
  return false;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.str(ckpt.manifest);
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (auto d : e.tensor.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data()) w.f32(static_cast<float>(v));
  }
  const auto& body = w.data();
  w.u32(crc32(std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size())));
  return w.take();
}

Checkpoint decode_checkpoint(const std::string& bytes, const std::filesystem::path& origin) {
  if (bytes.size() < 4 + 4 + 4) throw IntegrityError(origin, "truncated checkpoint");
  const std::size_t body_len = bytes.size() - 4;
  ByteReader tail(std::string_view(bytes).substr(body_len), origin);
  const std::uint32_t stored_crc = tail.u32();
  if (crc32(std::span(reinterpret_cast<const std::uint8_t*>(bytes.data()), body_len)) != stored_crc) {
    throw IntegrityError(origin, "checkpoint checksum mismatch");
  }
  ByteReader r(std::string_view(bytes).substr(0, body_len), origin);
  if (r.raw(4) != kMagic) throw IntegrityError(origin, "bad checkpoint magic");
  if (r.u32() != kVersion) throw IntegrityError(origin, "unsupported checkpoint version");
  Checkpoint ckpt;
  ckpt.manifest = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw IntegrityError(origin, "bad tensor rank for " + e.name);
    Shape shape(rank);
    std::size_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw IntegrityError(origin, "zero extent for " + e.name);
      n *= d;
    }
    if (n * 4 > r.remaining()) throw IntegrityError(origin, "truncated checkpoint");
    std::vector<double> data(n);
    for (auto& v : data) v = r.f32();
    e.tensor = Tensor(std::move(shape), std::move(data));
    ckpt.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw IntegrityError(origin, "trailing bytes in checkpoint");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path);
}

}  // namespace kp::nn
