#include "kp/http_client.hpp"

#include <chrono>
#include <cmath>
#include <future>
#include <mutex>
#include <optional>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "kp/error.hpp"

namespace kp {

using nlohmann::json;

namespace {

constexpr double kUnitNormTolerance = 1e-5;

httplib::Client make_client(const std::string& endpoint, const HttpOptions& options) {
  httplib::Client cli(endpoint);
  cli.set_connection_timeout(options.timeout_seconds, 0);
  cli.set_read_timeout(options.timeout_seconds, 0);
  cli.set_write_timeout(options.timeout_seconds, 0);
  return cli;
}

// POSTs `body` and parses the JSON reply, retrying transport and 5xx failures.
json post_json(const std::string& endpoint, const HttpOptions& options, const std::string& path,
               const json& body, std::size_t batch_index) {
  std::string last_error;
  for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
    if (attempt) std::this_thread::sleep_for(std::chrono::milliseconds(20 * attempt));
    auto cli = make_client(endpoint, options);
    auto res = cli.Post(path, body.dump(), "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(path + " rejected batch " + std::to_string(batch_index) + ": HTTP " +
                  std::to_string(res->status) + " " + res->body);
    }
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      last_error = std::string("malformed response: ") + e.what();
    }
  }
  throw TransportError(batch_index, path + ": " + last_error);
}

std::vector<Embedding> parse_embeddings(const json& reply, std::size_t expected_count,
                                        std::size_t expected_dim, std::size_t batch_index) {
  try {
    const std::size_t dim = reply.at("dim").get<std::size_t>();
    const auto& rows = reply.at("embeddings");
    if (dim != expected_dim || rows.size() != expected_count) {
      throw Error("sidecar returned " + std::to_string(rows.size()) + "x" + std::to_string(dim) +
                  ", expected " + std::to_string(expected_count) + "x" +
                  std::to_string(expected_dim) + " in batch " + std::to_string(batch_index));
    }
    std::vector<Embedding> out;
    out.reserve(rows.size());
    for (const auto& row : rows) {
      Embedding e{row.get<std::vector<double>>()};
      if (e.values.size() != dim) throw Error("sidecar embedding has wrong length");
      if (!e.is_zero() && std::abs(e.norm() - 1.0) > kUnitNormTolerance) {
        throw Error("sidecar embedding is not unit-normalized in batch " +
                    std::to_string(batch_index));
      }
      out.push_back(std::move(e));
    }
    return out;
  } catch (const json::exception& e) {
    throw Error("malformed sidecar response in batch " + std::to_string(batch_index) + ": " +
                e.what());
  }
}

}  // namespace

struct HttpEncoder::Impl {
  std::string endpoint;
  HttpOptions options;
  mutable std::once_flag info_once;
  mutable std::string model_id;
  mutable std::size_t dim = 0;

  void load_info() const {
    std::call_once(info_once, [this] {
      std::string last_error;
      for (std::size_t attempt = 0; attempt <= options.retries; ++attempt) {
        auto cli = make_client(endpoint, options);
        auto res = cli.Get("/v1/info");
        if (res && res->status == 200) {
          try {
            json j = json::parse(res->body);
            model_id = j.at("model_id").get<std::string>();
            dim = j.at("dim").get<std::size_t>();
            if (dim == 0 || model_id.empty()) throw Error("sidecar /v1/info is incomplete");
            return;
          } catch (const json::exception& e) {
            throw Error(std::string("malformed /v1/info response: ") + e.what());
          }
        }
        last_error = res ? "HTTP " + std::to_string(res->status)
                         : "transport failure: " + httplib::to_string(res.error());
      }
      throw TransportError(0, "/v1/info: " + last_error);
    });
  }

  template <typename Item, typename Encode>
  std::vector<Embedding> run(std::span<const Item> items, const std::string& path,
                             const std::string& field, Encode encode) const {
    load_info();
    const std::size_t batch = std::max<std::size_t>(1, options.batch_size);
    const std::size_t batches = (items.size() + batch - 1) / batch;
    std::vector<std::vector<Embedding>> results(batches);
    const std::size_t window = std::max<std::size_t>(1, options.max_in_flight);
    for (std::size_t start = 0; start < batches; start += window) {
      std::vector<std::future<void>> inflight;
      for (std::size_t b = start; b < std::min(batches, start + window); ++b) {
        inflight.push_back(std::async(std::launch::async, [&, b] {
          const std::size_t lo = b * batch, hi = std::min(items.size(), lo + batch);
          json payload = json::array();
          for (std::size_t i = lo; i < hi; ++i) payload.push_back(encode(items[i]));
          json reply = post_json(endpoint, options, path, json{{field, payload}}, b);
          results[b] = parse_embeddings(reply, hi - lo, dim, b);
        }));
      }
      std::exception_ptr first;
      for (auto& f : inflight) {
        try {
          f.get();
        } catch (...) {
          if (!first) first = std::current_exception();
        }
      }
      if (first) std::rethrow_exception(first);
    }
    std::vector<Embedding> out;
    out.reserve(items.size());
    for (auto& r : results) {
      for (auto& e : r) out.push_back(std::move(e));
    }
    return out;
  }
};

HttpEncoder::HttpEncoder(std::string endpoint, HttpOptions options)
    : impl_(std::make_unique<Impl>()) {
  impl_->endpoint = std::move(endpoint);
  impl_->options = options;
}

HttpEncoder::~HttpEncoder() = default;

std::string HttpEncoder::id() const {
  impl_->load_info();
  return "http:" + impl_->model_id;
}

std::size_t HttpEncoder::dim() const {
  impl_->load_info();
  return impl_->dim;
}

std::vector<Embedding> HttpEncoder::embed_text(std::span<const std::string> texts) const {
  return impl_->run(texts, "/v1/embed_text", "texts", [](const std::string& t) { return t; });
}

std::vector<Embedding> HttpEncoder::embed_frame(std::span<const FrameContent> frames) const {
  return impl_->run(frames, "/v1/embed_image", "images", [](const FrameContent& f) {
    const auto* img = std::get_if<ImageRef>(&f);
    if (!img) throw InvalidInput("http encoder needs image frames, got a token bag");
    return httplib::detail::base64_encode(img->bytes);
  });
}

HttpMaskedTokenScorer::HttpMaskedTokenScorer(std::string endpoint, HttpOptions options)
    : endpoint_(std::move(endpoint)), options_(options) {}

double HttpMaskedTokenScorer::probability(std::string_view masked_text,
                                          std::string_view target) const {
  json reply = post_json(endpoint_, options_, "/v1/masked_token_prob",
                         json{{"masked", masked_text}, {"target", target}}, 0);
  try {
    return reply.at("probability").get<double>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed /v1/masked_token_prob response: ") + e.what());
  }
}

}  // namespace kp
