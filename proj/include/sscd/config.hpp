#pragma once

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <regex>
#include <string>
#include <vector>

#include "sscd/embed.hpp"
#include "sscd/error.hpp"
#include "sscd/fragment.hpp"
#include "sscd/index.hpp"
#include "sscd/process_provider.hpp"
#include "sscd/remote.hpp"

namespace sscd {

/// How to construct one embedding provider.
struct ProviderSpec {
  std::string id;    // provider_id, unique within a run
  std::string name;  // label used in ensemble names; defaults to id
  ProviderKind kind = ProviderKind::kDeterministicLocal;
  std::size_t dimension = 256;
  std::uint64_t seed = 0;
  std::string endpoint;                        // remote
  std::string model;                           // remote
  std::string api_key_env = "OPENAI_API_KEY";  // remote; the variable name, never the key
  std::vector<std::string> command;            // external process
  std::size_t batch_size = 64;
  unsigned parallelism = 4;
  int max_attempts = 3;

  const std::string& label() const { return name.empty() ? id : name; }
};

/// The knob set of one detection run. Defaults are the reference settings:
/// min LOC 0, exact search, 128 tokens, no preprocessing, threshold 0,
/// topN 10.
struct RunConfig {
  int min_loc = 0;
  std::size_t code_length = 128;
  PreprocessMode preprocess = PreprocessMode::kNone;
  SearchBackend search_backend = SearchBackend::kExact;
  double threshold = 0.0;
  std::size_t top_n = 10;
  std::vector<ProviderSpec> providers;
  HnswParams hnsw;

  void validate() const {
    if (min_loc < 0) throw UsageError("min-loc must be non-negative");
    if (code_length == 0) throw UsageError("code-length must be at least 1");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw UsageError("threshold must lie in [0, 1]");
    if (top_n == 0) throw UsageError("top-n must be at least 1");
    std::set<std::string> ids, labels;
    for (const auto& p : providers) {
      if (!ids.insert(p.id).second) throw UsageError("duplicate provider id '" + p.id + "'");
      if (!labels.insert(p.label()).second) throw UsageError("duplicate provider name '" + p.label() + "'");
    }
  }
};

/// Parses the compact provider form used on the command line:
///   hash-<dim>[@seed]     deterministic feature hashing
///   remote:<model>        OpenAI-compatible service (endpoint set separately)
///   process:<name>        external process (command set separately)
/// An optional `NAME=` prefix sets the ensemble label, e.g. `CT5=process:ct5`.
inline ProviderSpec parse_provider_spec(const std::string& text) {
  ProviderSpec spec;
  std::string body = text;
  if (auto eq = text.find('='); eq != std::string::npos) {
    spec.name = text.substr(0, eq);
    body = text.substr(eq + 1);
  }
  static const std::regex kHash(R"(^hash-(\d+)(?:@(\d+))?$)");
  std::smatch m;
  if (std::regex_match(body, m, kHash)) {
    spec.kind = ProviderKind::kDeterministicLocal;
    spec.dimension = std::stoul(m[1].str());
    spec.seed = m[2].matched ? std::stoull(m[2].str()) : 0;
    spec.id = body;
    if (spec.dimension < 8) throw UsageError("hash provider dimension must be at least 8");
    return spec;
  }
  if (body.rfind("remote:", 0) == 0 && body.size() > 7) {
    spec.kind = ProviderKind::kRemoteHttp;
    spec.model = body.substr(7);
    spec.dimension = kRemoteDefaultDimension;
    spec.id = body;
    return spec;
  }
  if (body.rfind("process:", 0) == 0 && body.size() > 8) {
    spec.kind = ProviderKind::kExternalProcess;
    spec.dimension = 768;
    spec.batch_size = 32;
    spec.id = body;
    return spec;
  }
  throw UsageError("unrecognised provider '" + text + "' (expected hash-<dim>, remote:<model> or process:<name>)");
}

inline nlohmann::ordered_json to_json(const ProviderSpec& p) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  if (!p.name.empty()) j["name"] = p.name;
  j["kind"] = std::string(to_string(p.kind));
  j["dimension"] = p.dimension;
  switch (p.kind) {
    case ProviderKind::kDeterministicLocal:
      j["seed"] = p.seed;
      break;
    case ProviderKind::kRemoteHttp:
      j["endpoint"] = p.endpoint;
      j["model"] = p.model;
      j["api_key_env"] = p.api_key_env;
      j["batch_size"] = p.batch_size;
      j["parallelism"] = p.parallelism;
      j["max_attempts"] = p.max_attempts;
      break;
    case ProviderKind::kExternalProcess:
      j["command"] = p.command;
      j["batch_size"] = p.batch_size;
      break;
  }
  return j;
}

inline ProviderSpec provider_spec_from_json(const nlohmann::json& j) {
  if (j.is_string()) return parse_provider_spec(j.get<std::string>());
  ProviderSpec p = parse_provider_spec(j.at("id").get<std::string>());
  p.name = j.value("name", p.name);
  p.dimension = j.value("dimension", p.dimension);
  p.seed = j.value("seed", p.seed);
  p.endpoint = j.value("endpoint", p.endpoint);
  p.model = j.value("model", p.model);
  p.api_key_env = j.value("api_key_env", p.api_key_env);
  p.command = j.value("command", p.command);
  p.batch_size = j.value("batch_size", p.batch_size);
  p.parallelism = j.value("parallelism", p.parallelism);
  p.max_attempts = j.value("max_attempts", p.max_attempts);
  return p;
}

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["min_loc"] = c.min_loc;
  j["code_length"] = c.code_length;
  j["preprocess"] = std::string(to_string(c.preprocess));
  j["search_backend"] = std::string(to_string(c.search_backend));
  j["threshold"] = c.threshold;
  j["top_n"] = c.top_n;
  auto providers = nlohmann::ordered_json::array();
  for (const auto& p : c.providers) providers.push_back(to_json(p));
  j["providers"] = std::move(providers);
  j["hnsw"] = {{"m", c.hnsw.m},
               {"ef_construction", c.hnsw.ef_construction},
               {"ef_search", c.hnsw.ef_search},
               {"seed", c.hnsw.seed}};
  return j;
}

/// Reads a RunConfig; absent fields keep their defaults.
inline RunConfig run_config_from_json(const nlohmann::json& j) {
  RunConfig c;
  try {
    c.min_loc = j.value("min_loc", c.min_loc);
    c.code_length = j.value("code_length", c.code_length);
    if (j.contains("preprocess")) c.preprocess = parse_preprocess_mode(j["preprocess"].get<std::string>());
    if (j.contains("search_backend")) c.search_backend = parse_backend(j["search_backend"].get<std::string>());
    c.threshold = j.value("threshold", c.threshold);
    c.top_n = j.value("top_n", c.top_n);
    if (j.contains("providers")) {
      for (const auto& p : j["providers"]) c.providers.push_back(provider_spec_from_json(p));
    }
    if (j.contains("hnsw")) {
      const auto& h = j["hnsw"];
      c.hnsw.m = h.value("m", c.hnsw.m);
      c.hnsw.ef_construction = h.value("ef_construction", c.hnsw.ef_construction);
      c.hnsw.ef_search = h.value("ef_search", c.hnsw.ef_search);
      c.hnsw.seed = h.value("seed", c.hnsw.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid run config: ") + e.what());
  }
  c.validate();
  return c;
}

inline std::unique_ptr<EmbeddingProvider> make_provider(const ProviderSpec& spec) {
  switch (spec.kind) {
    case ProviderKind::kDeterministicLocal:
      return std::make_unique<HashProvider>(spec.dimension, spec.seed, spec.id);
    case ProviderKind::kRemoteHttp: {
      RemoteOptions o;
      o.endpoint = spec.endpoint;
      o.model = spec.model;
      o.dimension = spec.dimension;
      o.batch_size = spec.batch_size;
      o.parallelism = spec.parallelism;
      o.max_attempts = spec.max_attempts;
      return std::make_unique<RemoteProvider>(o, spec.api_key_env);
    }
    case ProviderKind::kExternalProcess:
      return std::make_unique<ProcessProvider>(spec.id, spec.dimension, spec.command, spec.batch_size);
  }
  throw UsageError("unknown provider kind");
}

/// Raw search always runs at threshold 0 with at least 10 neighbours, so
/// every (threshold, topN <= 10) configuration is a filter over one capture.
inline constexpr std::size_t kRawTopN = 10;

inline std::size_t raw_top_n(const RunConfig& c) { return std::max(kRawTopN, c.top_n); }

}  // namespace sscd
