#include "kp/semantics.hpp"

#include <cmath>

#include "kp/binary_io.hpp"
#include "kp/error.hpp"

namespace kp {

namespace {
constexpr std::string_view kMagic = "KPSC";
constexpr std::uint32_t kVersion = 1;

std::span<const std::uint8_t> as_bytes(std::string_view s) {
  return {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()};
}
}  // namespace

std::string encode_semantics(const SemanticsMatrix& mat) {
  if (mat.data.size() != mat.rows * mat.cols) throw ShapeError("semantics matrix size mismatch");
  ByteWriter w;
  w.raw(kMagic);
  w.u32(kVersion);
  w.bytes(mat.kb_hash);
  w.str(mat.encoder_id);
  w.u64(mat.sampling_seed);
  w.u32(static_cast<std::uint32_t>(mat.rows));
  w.u32(static_cast<std::uint32_t>(mat.cols));
  for (float v : mat.data) w.f32(v);
  w.u32(crc32(as_bytes(w.data())));
  return w.take();
}

SemanticsMatrix decode_semantics(std::string_view bytes, const std::filesystem::path& origin) {
  if (bytes.size() < 4) throw IntegrityError(origin, "truncated file");
  ByteReader r(bytes.substr(0, bytes.size() - 4), origin);
  if (r.raw(4) != kMagic) throw IntegrityError(origin, "bad magic");
  if (r.u32() != kVersion) throw IntegrityError(origin, "unsupported version");
  SemanticsMatrix mat;
  auto hash = r.raw(32);
  std::copy(hash.begin(), hash.end(), mat.kb_hash.begin());
  mat.encoder_id = r.str();
  mat.sampling_seed = r.u64();
  mat.rows = r.u32();
  mat.cols = r.u32();
  const std::size_t count = mat.rows * mat.cols;
  if (r.remaining() != count * 4) throw IntegrityError(origin, "truncated file");
  ByteReader tail(bytes.substr(bytes.size() - 4), origin);
  if (crc32(as_bytes(bytes.substr(0, bytes.size() - 4))) != tail.u32()) {
    throw IntegrityError(origin, "checksum mismatch");
  }
  mat.data.resize(count);
  for (auto& v : mat.data) {
    v = r.f32();
    if (!std::isfinite(v)) throw IntegrityError(origin, "non-finite score");
  }
  return mat;
}

SemanticsCache::SemanticsCache(std::filesystem::path root) : root_(std::move(root)) {}

std::filesystem::path SemanticsCache::path_for(const CacheKey& key) const {
  if (key.video_id.empty() || key.encoder_id.empty()) {
    throw InvalidInput("cache key needs a video id and an encoder id");
  }
  std::string material = key.video_id;
  material.push_back('\0');
  material += to_hex(key.kb_hash);
  material.push_back('\0');
  material += key.encoder_id;
  material.push_back('\0');
  material += std::to_string(key.sampling_seed);
  const std::string h = to_hex(sha256(material));
  return root_ / h.substr(0, 2) / (h + ".kpsc");
}

void SemanticsCache::put(const CacheKey& key, const SemanticsMatrix& mat) const {
  if (mat.kb_hash != key.kb_hash || mat.encoder_id != key.encoder_id ||
      mat.sampling_seed != key.sampling_seed) {
    throw InvalidInput("semantics metadata does not match cache key for video '" + key.video_id + "'");
  }
  write_file_atomic(path_for(key), encode_semantics(mat));
}

std::optional<SemanticsMatrix> SemanticsCache::get(const CacheKey& key) const {
  const auto path = path_for(key);
  if (!std::filesystem::exists(path)) return std::nullopt;
  std::string bytes;
  try {
    bytes = read_file(path);
  } catch (const InvalidInput&) {
    throw IntegrityError(path, "unreadable cache file");
  }
  SemanticsMatrix mat = decode_semantics(bytes, path);
  if (mat.kb_hash != key.kb_hash || mat.encoder_id != key.encoder_id ||
      mat.sampling_seed != key.sampling_seed) {
    throw IntegrityError(path, "stored metadata does not match the requested key");
  }
  return mat;
}

const Digest& raw_features_digest() {
  static const Digest d = sha256(std::string_view("raw-frame-embeddings"));
  return d;
}

SemanticsExtractor::SemanticsExtractor(const DualEncoder& encoder, KnowledgeBase kb, MatchConfig cfg)
    : encoder_(encoder), kb_(std::move(kb)), cfg_(cfg) {
  if (kb_.proposals.empty()) throw InvalidInput("knowledge base is empty");
}

const std::vector<Embedding>& SemanticsExtractor::text_embeddings() const {
  std::call_once(once_, [this] {
    auto texts = kb_.texts();
    text_embs_ = encoder_.embed_text(texts);
    ++text_calls_;
  });
  return text_embs_;
}

SemanticsMatrix SemanticsExtractor::extract(std::span<const FrameContent> frames,
                                            std::uint64_t sampling_seed) const {
  if (frames.empty()) throw InvalidInput("cannot extract semantics from zero frames");
  const auto& texts = text_embeddings();
  auto frame_embs = encoder_.embed_frame(frames);
  SemanticsMatrix mat = match(frame_embs, texts, cfg_);
  mat.kb_hash = kb_.content_hash;
  mat.encoder_id = encoder_.id();
  mat.sampling_seed = sampling_seed;
  return mat;
}

SemanticsMatrix extract_semantics(std::span<const FrameContent> frames, const KnowledgeBase& kb,
                                  const DualEncoder& encoder, const MatchConfig& cfg,
                                  std::uint64_t sampling_seed) {
  return SemanticsExtractor(encoder, kb, cfg).extract(frames, sampling_seed);
}

SemanticsMatrix raw_frame_features(std::span<const FrameContent> frames, const DualEncoder& encoder,
                                   std::uint64_t sampling_seed) {
  if (frames.empty()) throw InvalidInput("cannot extract features from zero frames");
  auto embs = encoder.embed_frame(frames);
  SemanticsMatrix mat;
  mat.rows = embs.size();
  mat.cols = encoder.dim();
  mat.data.reserve(mat.rows * mat.cols);
  for (const auto& e : embs) {
    if (e.values.size() != mat.cols) throw ShapeError("frame embedding has unexpected dimension");
    for (double v : e.values) mat.data.push_back(static_cast<float>(v));
  }
  mat.kb_hash = raw_features_digest();
  mat.encoder_id = encoder.id();
  mat.sampling_seed = sampling_seed;
  return mat;
}

}  // namespace kp
