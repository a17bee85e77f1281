#pragma once

#include <httplib.h>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "sscd/embed.hpp"
#include "sscd/error.hpp"
#include "sscd/util.hpp"

namespace sscd {

/// Embedding size of the ADA-class cloud service.
inline constexpr std::size_t kRemoteDefaultDimension = 1536;

struct RemoteOptions {
  std::string endpoint;  // e.g. https://api.openai.com/v1/embeddings
  std::string model;
  std::string api_key;  // sent as a bearer token when non-empty
  std::size_t dimension = kRemoteDefaultDimension;  // 0 disables the check
  std::size_t batch_size = 64;
  int max_attempts = 3;
  std::chrono::milliseconds initial_backoff{500};
  std::chrono::seconds timeout{60};
  unsigned parallelism = 4;
};

struct RemoteStats {
  std::size_t requests = 0;
  std::size_t retries = 0;
};

/// Parses `{"data": [{"index": i, "embedding": [...]}, ...]}` and returns the
/// vectors ordered by index. Shared by the HTTP and external-process
/// providers.
inline std::vector<Vector> parse_embedding_response(std::string_view payload, std::size_t expected,
                                                    std::size_t dimension) {
  auto fail = [&](const std::string& why) -> ProtocolError {
    std::string raw(payload.substr(0, 2048));
    log(LogLevel::kError, "malformed embedding response (" + why + "): " + raw);
    return ProtocolError("malformed embedding response: " + why);
  };
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(payload);
  } catch (const nlohmann::json::parse_error&) {
    throw fail("not JSON");
  }
  if (!j.is_object() || !j.contains("data") || !j["data"].is_array()) throw fail("missing data array");
  const auto& data = j["data"];
  if (data.size() != expected) {
    throw fail("expected " + std::to_string(expected) + " embeddings, got " + std::to_string(data.size()));
  }
  std::vector<std::optional<Vector>> slots(expected);
  for (const auto& item : data) {
    if (!item.is_object() || !item.contains("index") || !item["index"].is_number_integer() ||
        !item.contains("embedding") || !item["embedding"].is_array()) {
      throw fail("data entry lacks index/embedding");
    }
    const auto idx = item["index"].get<long long>();
    if (idx < 0 || static_cast<std::size_t>(idx) >= expected) throw fail("index out of range");
    if (slots[idx]) throw fail("duplicate index " + std::to_string(idx));
    Vector v;
    v.reserve(item["embedding"].size());
    for (const auto& x : item["embedding"]) {
      if (!x.is_number()) throw fail("non-numeric embedding value");
      v.push_back(x.get<float>());
    }
    if (dimension != 0 && v.size() != dimension) {
      throw fail("dimension " + std::to_string(v.size()) + " != declared " + std::to_string(dimension));
    }
    slots[idx] = std::move(v);
  }
  std::vector<Vector> out;
  out.reserve(expected);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

namespace detail {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline Endpoint split_endpoint(const std::string& url) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl)) throw UsageError("invalid endpoint URL '" + url + "'");
  return {m[1].str(), m[2].matched ? m[2].str() : std::string("/")};
}

}  // namespace detail

/// One POST for one batch, with bounded exponential-backoff retries on
/// transport errors and non-200 statuses. A malformed 200 response is a
/// ProtocolError and is not retried.
inline std::vector<Vector> remote_embed_batch(std::span<const std::string> texts, const RemoteOptions& opts,
                                              RemoteStats* stats = nullptr) {
  if (texts.empty()) return {};
  const auto ep = detail::split_endpoint(opts.endpoint);
  httplib::Client client(ep.origin);
  client.set_connection_timeout(opts.timeout);
  client.set_read_timeout(opts.timeout);
  client.set_write_timeout(opts.timeout);

  nlohmann::json body;
  body["input"] = std::vector<std::string>(texts.begin(), texts.end());
  body["model"] = opts.model;
  const std::string payload = body.dump();
  httplib::Headers headers;
  if (!opts.api_key.empty()) headers.emplace("Authorization", "Bearer " + opts.api_key);

  const int attempts = std::max(1, opts.max_attempts);
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    if (stats) ++stats->requests;
    auto res = client.Post(ep.path, headers, payload, "application/json");
    if (res && res->status == 200) {
      auto vectors = parse_embedding_response(res->body, texts.size(), opts.dimension);
      for (auto& v : vectors) {
        if (!normalize(v)) throw ProtocolError("remote service returned a zero vector");
      }
      if (attempt > 1) {
        log(LogLevel::kInfo, "remote embed: batch of " + std::to_string(texts.size()) + " succeeded after " +
                                 std::to_string(attempt - 1) + " retries");
      }
      return vectors;
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : "transport error: " + httplib::to_string(res.error());
    if (attempt == attempts) break;
    if (stats) ++stats->retries;
    const auto delay = opts.initial_backoff * (1 << (attempt - 1));
    log(LogLevel::kWarn, "remote embed: attempt " + std::to_string(attempt) + "/" + std::to_string(attempts) +
                             " failed (" + last_error + "), retrying in " + std::to_string(delay.count()) + " ms");
    std::this_thread::sleep_for(delay);
  }
  throw StageError("remote embed failed after " + std::to_string(attempts) + " attempts: " + last_error);
}

/// Embeds `texts` in batches of opts.batch_size, up to opts.parallelism
/// batches in flight. Output order follows input order. Throws StageError
/// naming every batch that failed.
inline std::vector<Vector> remote_embed(std::span<const std::string> texts, const RemoteOptions& opts,
                                        RemoteStats* stats = nullptr) {
  const std::size_t batch = std::max<std::size_t>(1, opts.batch_size);
  const std::size_t batches = (texts.size() + batch - 1) / batch;
  std::vector<Vector> out(texts.size());
  std::vector<std::string> errors(batches);
  std::vector<RemoteStats> per_batch(batches);
  parallel_for(batches, std::max(1u, opts.parallelism), [&](std::size_t b) {
    const std::size_t lo = b * batch;
    const std::size_t hi = std::min(texts.size(), lo + batch);
    try {
      auto got = remote_embed_batch(texts.subspan(lo, hi - lo), opts, &per_batch[b]);
      for (std::size_t i = lo; i < hi; ++i) out[i] = std::move(got[i - lo]);
    } catch (const Error& e) {
      errors[b] = e.what();
    }
  });
  std::string failed;
  for (std::size_t b = 0; b < batches; ++b) {
    if (stats) {
      stats->requests += per_batch[b].requests;
      stats->retries += per_batch[b].retries;
    }
    if (errors[b].empty()) continue;
    failed += "\n  batch " + std::to_string(b) + " (inputs " + std::to_string(b * batch) + ".." +
              std::to_string(std::min(texts.size(), (b + 1) * batch) - 1) + "): " + errors[b];
  }
  if (!failed.empty()) throw StageError("remote embed failed for:" + failed);
  return out;
}

/// OpenAI-compatible embeddings service. The API key is read from an
/// environment variable, never from flags or files.
class RemoteProvider final : public EmbeddingProvider {
 public:
  RemoteProvider(RemoteOptions opts, const std::string& api_key_env = "OPENAI_API_KEY")
      : opts_(std::move(opts)), id_("remote:" + opts_.model) {
    if (opts_.endpoint.empty()) throw UsageError("remote provider needs an endpoint URL");
    if (opts_.dimension == 0) throw UsageError("remote provider needs a declared dimension");
    detail::split_endpoint(opts_.endpoint);
    if (!api_key_env.empty()) {
      if (const char* key = std::getenv(api_key_env.c_str())) opts_.api_key = key;
    }
  }

  const std::string& id() const override { return id_; }
  std::size_t dimension() const override { return opts_.dimension; }
  ProviderKind kind() const override { return ProviderKind::kRemoteHttp; }
  std::size_t batch_size() const override { return opts_.batch_size; }
  unsigned max_parallelism() const override { return std::max(1u, opts_.parallelism); }

  std::vector<Vector> embed(std::span<const std::string> texts) override {
    RemoteStats local;
    auto out = remote_embed_batch(texts, opts_, &local);
    std::lock_guard lock(stats_mutex_);
    stats_.requests += local.requests;
    stats_.retries += local.retries;
    return out;
  }

  RemoteStats stats() const {
    std::lock_guard lock(stats_mutex_);
    return stats_;
  }

 private:
  RemoteOptions opts_;
  std::string id_;
  mutable std::mutex stats_mutex_;
  RemoteStats stats_;
};

}  // namespace sscd
