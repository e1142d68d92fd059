#pragma once

#include <cstddef>
#include <memory>
#include <string>

#include "kp/encoder.hpp"
#include "kp/knowledge_base.hpp"

namespace kp {

struct HttpOptions {
  std::size_t batch_size = 32;
  std::size_t max_in_flight = 4;
  std::size_t retries = 3;  // attempts after the first failure
  int timeout_seconds = 30;
};

// Client for the encoder sidecar:
//   POST /v1/embed_text  {"texts":[...]}               -> {"dim":D,"embeddings":[[...],...]}
//   POST /v1/embed_image {"images":["<base64>",...]}   -> same shape
//   GET  /v1/info                                      -> {"model_id":...,"dim":...}
// Requests are split into batches; at most max_in_flight batches are outstanding
// and each is retried independently. Results keep request order.
class HttpEncoder final : public DualEncoder {
 public:
  explicit HttpEncoder(std::string endpoint, HttpOptions options = {});
  ~HttpEncoder() override;

  std::string id() const override;
  std::size_t dim() const override;
  std::vector<Embedding> embed_text(std::span<const std::string> texts) const override;
  std::vector<Embedding> embed_frame(std::span<const FrameContent> frames) const override;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Remote masked-token scorer:
//   POST /v1/masked_token_prob {"masked":"...[MASK]...","target":"..."} -> {"probability":p}
class HttpMaskedTokenScorer final : public MaskedTokenScorer {
 public:
  explicit HttpMaskedTokenScorer(std::string endpoint, HttpOptions options = {});
  double probability(std::string_view masked_text, std::string_view target) const override;
  std::string id() const override { return "http:" + endpoint_; }

 private:
  std::string endpoint_;
  HttpOptions options_;
};

}  // namespace kp
