#pragma once

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "sscd/config.hpp"
#include "sscd/detect.hpp"
#include "sscd/embed.hpp"
#include "sscd/ensemble.hpp"
#include "sscd/error.hpp"
#include "sscd/eval.hpp"
#include "sscd/extract.hpp"
#include "sscd/fragment.hpp"
#include "sscd/index.hpp"
#include "sscd/util.hpp"

namespace sscd {

namespace fs = std::filesystem;

struct StageRecord {
  std::string name;
  std::string status;  // "completed" or "failed"
  std::vector<std::pair<std::string, std::string>> outputs;  // run-relative path, sha256
  double elapsed_ms = 0.0;
  std::string error;
};

struct RunManifest {
  std::string tool_version = std::string(kToolVersion);
  RunConfig config;
  std::string corpus;
  std::optional<std::string> gold;
  std::optional<std::string> allow_list;
  std::map<std::string, std::string> input_hashes;
  std::vector<StageRecord> stages;
  bool complete = false;

  const StageRecord* find(const std::string& stage) const {
    for (const auto& s : stages) {
      if (s.name == stage) return &s;
    }
    return nullptr;
  }
  bool completed(const std::string& stage) const {
    const auto* s = find(stage);
    return s && s->status == "completed";
  }
};

inline nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["kind"] = "run_manifest";
  j["tool"] = std::string(kToolName);
  j["tool_version"] = m.tool_version;
  j["config"] = to_json(m.config);
  j["corpus"] = m.corpus;
  if (m.gold) j["gold"] = *m.gold;
  if (m.allow_list) j["allow_list"] = *m.allow_list;
  j["input_hashes"] = m.input_hashes;
  auto stages = nlohmann::ordered_json::array();
  for (const auto& s : m.stages) {
    nlohmann::ordered_json st;
    st["name"] = s.name;
    st["status"] = s.status;
    auto outs = nlohmann::ordered_json::array();
    for (const auto& [p, h] : s.outputs) outs.push_back({{"path", p}, {"sha256", h}});
    st["outputs"] = std::move(outs);
    st["elapsed_ms"] = s.elapsed_ms;
    if (!s.error.empty()) st["error"] = s.error;
    stages.push_back(std::move(st));
  }
  j["stages"] = std::move(stages);
  j["complete"] = m.complete;
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  RunManifest m;
  try {
    if (j.value("kind", std::string{}) != "run_manifest") throw UsageError("not a run manifest");
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config = run_config_from_json(j.at("config"));
    m.corpus = j.at("corpus").get<std::string>();
    if (j.contains("gold")) m.gold = j["gold"].get<std::string>();
    if (j.contains("allow_list")) m.allow_list = j["allow_list"].get<std::string>();
    m.input_hashes = j.at("input_hashes").get<std::map<std::string, std::string>>();
    for (const auto& st : j.at("stages")) {
      StageRecord s;
      s.name = st.at("name").get<std::string>();
      s.status = st.at("status").get<std::string>();
      for (const auto& o : st.at("outputs")) {
        s.outputs.emplace_back(o.at("path").get<std::string>(), o.at("sha256").get<std::string>());
      }
      s.elapsed_ms = st.value("elapsed_ms", 0.0);
      s.error = st.value("error", std::string{});
      m.stages.push_back(std::move(s));
    }
    m.complete = j.value("complete", false);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("invalid run manifest: ") + e.what());
  }
  return m;
}

inline RunManifest read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("manifest not found: " + path.string());
  try {
    return manifest_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw UsageError(path.string() + ": " + e.what());
  }
}

/// Content hash of every source file under the corpus root.
inline std::string hash_corpus(const fs::path& root) {
  Sha256 h;
  for (const auto& rel : list_sources(root)) {
    h.update(rel).update(std::string_view("\0", 1)).update(sha256_file(root / rel)).update("\n");
  }
  return h.hex_digest();
}

/// Directory-safe form of a provider id or ensemble name.
inline std::string sanitize_name(std::string_view s) {
  std::string out;
  for (char c : s) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '.' ||
                    c == '-' || c == '_';
    out.push_back(ok ? c : '_');
  }
  if (out.empty() || out == "." || out == "..") out = "_" + out;
  return out;
}

struct RunOptions {
  unsigned threads = default_parallelism();
  std::optional<fs::path> cache_file;   // defaults to <run>/cache/embeddings.jsonl
  std::optional<std::string> stop_after;  // stop cleanly once this stage completes
};

class Pipeline {
 public:
  Pipeline(RunManifest manifest, fs::path run_dir, RunOptions opts)
      : m_(std::move(manifest)), dir_(std::move(run_dir)), opts_(std::move(opts)) {}

  /// Runs every planned stage not already completed. The manifest is
  /// rewritten after each stage, so an interrupted run can be resumed.
  RunManifest execute() {
    const auto stages = plan();
    std::vector<std::string> order;
    for (const auto& [name, fn] : stages) order.push_back(name);
    for (const auto& [name, fn] : stages) {
      if (m_.completed(name)) {
        log(LogLevel::kDebug, "stage " + name + ": already completed");
      } else {
        run_stage(name, fn, order);
      }
      if (opts_.stop_after && *opts_.stop_after == name) {
        log(LogLevel::kInfo, "stopping after stage " + name);
        return m_;
      }
    }
    verify_outputs(m_, dir_);
    m_.complete = true;
    save();
    return m_;
  }

  /// Hash-checks every output of every completed stage.
  static void verify_outputs(const RunManifest& m, const fs::path& run_dir) {
    for (const auto& s : m.stages) {
      if (s.status != "completed") continue;
      for (const auto& [rel, hash] : s.outputs) {
        const auto p = run_dir / rel;
        if (!fs::exists(p)) throw IntegrityError(p.string() + ": recorded output is missing; start a fresh run");
        if (sha256_file(p) != hash) {
          throw IntegrityError(p.string() + ": hash mismatch against the manifest; start a fresh run");
        }
      }
    }
  }

 private:
  using StageFn = std::function<std::vector<fs::path>()>;

  std::vector<std::pair<std::string, StageFn>> plan() {
    std::vector<std::pair<std::string, StageFn>> out;
    out.emplace_back("extract", [this] { return stage_extract(); });
    std::set<std::string> dirs;
    for (const auto& spec : m_.config.providers) {
      if (!dirs.insert(sanitize_name(spec.id)).second) {
        throw UsageError("provider ids '" + spec.id + "' and another map to the same directory");
      }
      out.emplace_back("embed:" + spec.id, [this, spec] { return stage_embed(spec); });
      out.emplace_back("search:" + spec.id, [this, spec] { return stage_search(spec); });
      out.emplace_back("detect:" + spec.id, [this, spec] { return stage_detect(spec); });
      if (m_.gold) out.emplace_back("sweep:" + spec.id, [this, spec] { return stage_sweep(spec); });
    }
    if (m_.config.providers.size() >= 2) out.emplace_back("ensembles", [this] { return stage_ensembles(); });
    if (m_.gold) out.emplace_back("compare", [this] { return stage_compare(); });
    return out;
  }

  void run_stage(const std::string& name, const StageFn& fn, const std::vector<std::string>& order) {
    log(LogLevel::kInfo, "stage " + name);
    StageRecord rec;
    rec.name = name;
    const auto t0 = std::chrono::steady_clock::now();
    auto finish = [&] {
      rec.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      auto it = std::find_if(m_.stages.begin(), m_.stages.end(), [&](const auto& s) { return s.name == name; });
      if (it != m_.stages.end()) {
        *it = rec;
      } else {
        m_.stages.push_back(rec);
      }
      auto rank = [&](const std::string& n) { return std::find(order.begin(), order.end(), n) - order.begin(); };
      std::stable_sort(m_.stages.begin(), m_.stages.end(),
                       [&](const auto& a, const auto& b) { return rank(a.name) < rank(b.name); });
      save();
    };
    try {
      for (const auto& p : fn()) {
        rec.outputs.emplace_back(fs::relative(p, dir_).generic_string(), sha256_file(p));
      }
      rec.status = "completed";
      finish();
    } catch (const std::exception& e) {
      rec.status = "failed";
      rec.error = e.what();
      rec.outputs.clear();
      finish();
      throw;
    }
  }

  void save() { atomic_write(dir_ / "manifest.json", to_json(m_).dump(2) + "\n"); }

  fs::path provider_dir(const ProviderSpec& spec) const { return dir_ / "providers" / sanitize_name(spec.id); }
  fs::path fragments_path() const { return dir_ / "fragments.jsonl"; }

  EmbeddingCache& cache() {
    if (!cache_) cache_.emplace(opts_.cache_file.value_or(dir_ / "cache" / "embeddings.jsonl"));
    return *cache_;
  }

  const std::vector<CodeFragment>& fragments() {
    if (!fragments_) fragments_ = read_fragments(fragments_path());
    return *fragments_;
  }

  const GoldStandard& gold() {
    if (!gold_) {
      std::set<std::string> universe;
      for (const auto& f : fragments()) universe.insert(f.fragment_id);
      gold_ = load_gold(*m_.gold, &universe, corpus_id_of_fragments(fragments()));
    }
    return *gold_;
  }

  const std::set<PairKey>* allow_list() {
    if (!m_.allow_list) return nullptr;
    if (!allow_) allow_ = read_pair_csv(*m_.allow_list);
    return &*allow_;
  }

  // --- stages -------------------------------------------------------------

  std::vector<fs::path> stage_extract() {
    const auto& c = m_.config;
    auto result = extract_corpus(m_.corpus, c.preprocess, c.min_loc, opts_.threads);
    for (const auto& issue : result.issues) {
      log(issue.kind == IssueKind::kError ? LogLevel::kWarn : LogLevel::kDebug,
          issue.file_path + ": " + issue.message);
    }
    const auto out = fragments_path();
    write_fragments(result.fragments, out);
    nlohmann::ordered_json meta;
    meta["kind"] = "fragments";
    meta["corpus_id"] = corpus_id_of_fragments(result.fragments);
    meta["fragments"] = result.fragments.size();
    meta["files_scanned"] = result.files_scanned;
    meta["tokenization"] = "whitespace runs and comments are tokens when the mode keeps them";
    meta["config"] = to_json(c);
    write_meta(out, meta);
    const auto log_path = dir_ / "extraction_log.json";
    atomic_write(log_path, issues_to_json(result.issues).dump(2) + "\n");
    fragments_ = std::move(result.fragments);
    return {out, meta_path(out), log_path};
  }

  std::vector<fs::path> stage_embed(const ProviderSpec& spec) {
    const auto dir = provider_dir(spec);
    fs::create_directories(dir);
    if (fragments().empty()) throw StageError("no fragments were extracted from " + m_.corpus);
    auto provider = make_provider(spec);
    auto outcome = embed_fragments(fragments(), *provider, m_.config.code_length, cache());
    if (!outcome.failures.empty()) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& f : outcome.failures) arr.push_back({{"fragment_id", f.fragment_id}, {"message", f.message}});
      atomic_write(dir / "embed_failures.json", arr.dump(2) + "\n");
      throw StageError(spec.id + ": " + std::to_string(outcome.failures.size()) +
                       " fragment(s) failed to embed (see embed_failures.json); resume re-sends only those");
    }
    const auto out = dir / "embeddings.jsonl";
    write_embeddings(outcome.records, out);
    return {out};
  }

  std::vector<fs::path> stage_search(const ProviderSpec& spec) {
    const auto dir = provider_dir(spec);
    const auto index = VectorIndex::from_records(read_embeddings(dir / "embeddings.jsonl"));
    KnnOptions opts;
    opts.backend = m_.config.search_backend;
    opts.hnsw = m_.config.hnsw;
    opts.threads = opts_.threads;
    const std::size_t raw = raw_top_n(m_.config);
    const auto capture = knn_search(index, raw, opts);
    const auto out = dir / "capture.jsonl";
    write_capture(capture, out);
    nlohmann::ordered_json meta;
    meta["kind"] = "capture";
    meta["provider_id"] = spec.id;
    meta["threshold"] = 0.0;
    meta["raw_top_n"] = raw;
    meta["search_backend"] = std::string(to_string(m_.config.search_backend));
    meta["corpus_id"] = corpus_id_of_fragments(fragments());
    write_meta(out, meta);
    return {out, meta_path(out)};
  }

  std::vector<fs::path> stage_detect(const ProviderSpec& spec) {
    const auto dir = provider_dir(spec);
    const auto capture = read_capture(dir / "capture.jsonl");
    const auto& c = m_.config;
    auto set = pairs_from_neighbors(threshold_filter(capture, c.threshold, c.top_n), spec.id,
                                    candidate_config(c, spec.id, c.threshold, c.top_n),
                                    corpus_id_of_fragments(fragments()));
    const auto out = dir / "candidates.jsonl";
    write_candidates(set, out);
    return {out, meta_path(out)};
  }

  std::vector<fs::path> stage_sweep(const ProviderSpec& spec) {
    const auto dir = provider_dir(spec);
    const auto capture_path = dir / "capture.jsonl";
    const auto capture = read_capture(capture_path);
    std::optional<std::size_t> raw;
    if (auto meta = read_meta(capture_path); meta && meta->contains("raw_top_n")) {
      raw = (*meta)["raw_top_n"].get<std::size_t>();
    }
    auto result = sweep(capture, gold(), threshold_grid(), top_n_grid(), raw, allow_list(), spec.label());
    const auto& best = result.best_cell();
    const auto sweep_path = dir / "sweep.json";
    atomic_write(sweep_path, to_json(result).dump(2) + "\n");

    auto set = pairs_from_neighbors(threshold_filter(capture, best.threshold, best.top_n), spec.id,
                                    candidate_config(m_.config, spec.id, best.threshold, best.top_n),
                                    corpus_id_of_fragments(fragments()));
    const auto best_path = dir / "best.jsonl";
    write_candidates(set, best_path);
    const auto report_path = dir / "best.report.json";
    atomic_write(report_path, to_json(best.report).dump(2) + "\n");
    return {sweep_path, best_path, meta_path(best_path), report_path};
  }

  /// Without gold each member contributes its configured candidate set;
  /// with gold, the set at its best sweep cell.
  std::vector<fs::path> stage_ensembles() {
    std::vector<std::string> labels;
    std::map<std::string, fs::path> member_file;
    for (const auto& spec : m_.config.providers) {
      labels.push_back(spec.label());
      member_file[spec.label()] = provider_dir(spec) / (m_.gold ? "best.jsonl" : "candidates.jsonl");
    }
    std::map<std::string, CandidateSet> sets;
    for (const auto& [label, path] : member_file) sets.emplace(label, read_candidates(path));

    const GoldStandard* g = m_.gold ? &gold() : nullptr;
    const auto* allow = allow_list();
    const auto specs = enumerate_combinations(labels);
    const auto dir = dir_ / "ensembles";
    fs::create_directories(dir);
    std::vector<std::vector<fs::path>> produced(specs.size());
    parallel_for(specs.size(), opts_.threads, [&](std::size_t i) {
      const auto& e = specs[i];
      std::vector<CandidateSet> members;
      for (const auto& m : e.members) members.push_back(sets.at(m));
      auto merged = merge_union(members);
      const auto base = sanitize_name(e.name);
      const auto cand = dir / (base + ".jsonl");
      write_candidates(merged, cand);
      produced[i] = {cand, meta_path(cand)};
      if (g) {
        auto report = score(merged, *g, allow, e.name);
        report.members = e.members;
        const auto rp = dir / (base + ".report.json");
        atomic_write(rp, to_json(report).dump(2) + "\n");
        produced[i].push_back(rp);
      }
    });
    std::vector<fs::path> out;
    for (auto& p : produced) out.insert(out.end(), p.begin(), p.end());
    return out;
  }

  std::vector<fs::path> stage_compare() {
    std::vector<MetricsReport> reports;
    for (const auto& spec : m_.config.providers) {
      reports.push_back(report_from_json(nlohmann::json::parse(read_file(provider_dir(spec) / "best.report.json"))));
    }
    if (m_.config.providers.size() >= 2) {
      std::vector<std::string> labels;
      for (const auto& spec : m_.config.providers) labels.push_back(spec.label());
      for (const auto& e : enumerate_combinations(labels)) {
        const auto rp = dir_ / "ensembles" / (sanitize_name(e.name) + ".report.json");
        reports.push_back(report_from_json(nlohmann::json::parse(read_file(rp))));
      }
    }
    const auto cmp = compare(reports);
    const auto json_path = dir_ / "comparison.json";
    const auto text_path = dir_ / "comparison.txt";
    atomic_write(json_path, to_json(cmp).dump(2) + "\n");
    atomic_write(text_path, render_comparison(cmp));
    enforce_ensemble_guard(cmp);
    return {json_path, text_path};
  }

  RunManifest m_;
  fs::path dir_;
  RunOptions opts_;
  std::optional<EmbeddingCache> cache_;
  std::optional<std::vector<CodeFragment>> fragments_;
  std::optional<GoldStandard> gold_;
  std::optional<std::set<PairKey>> allow_;
};

/// Starts a fresh run in `run_dir` (which must not already hold one).
inline RunManifest run_pipeline(const RunConfig& config, const fs::path& corpus, const fs::path& run_dir,
                                const std::optional<fs::path>& gold = std::nullopt,
                                const std::optional<fs::path>& allow = std::nullopt, RunOptions opts = {}) {
  config.validate();
  if (config.providers.empty()) throw UsageError("at least one provider is required");
  if (!fs::is_directory(corpus)) throw UsageError("corpus directory not found: " + corpus.string());
  if (gold && !fs::exists(*gold)) throw UsageError("gold file not found: " + gold->string());
  if (allow && !fs::exists(*allow)) throw UsageError("allow-list file not found: " + allow->string());
  if (fs::exists(run_dir / "manifest.json")) {
    throw UsageError(run_dir.string() + " already holds a run; use resume or pick a new directory");
  }
  fs::create_directories(run_dir);

  RunManifest m;
  m.config = config;
  m.corpus = fs::absolute(corpus).lexically_normal().string();
  m.input_hashes["corpus"] = hash_corpus(corpus);
  if (gold) {
    m.gold = fs::absolute(*gold).lexically_normal().string();
    m.input_hashes["gold"] = sha256_file(*gold);
  }
  if (allow) {
    m.allow_list = fs::absolute(*allow).lexically_normal().string();
    m.input_hashes["allow_list"] = sha256_file(*allow);
  }
  return Pipeline(std::move(m), run_dir, std::move(opts)).execute();
}

/// Continues a run from its manifest. Inputs and every completed stage's
/// outputs are re-hashed first; any mismatch is refused.
inline RunManifest resume(const fs::path& manifest_path, RunOptions opts = {}) {
  auto m = read_manifest(manifest_path);
  const auto run_dir = manifest_path.parent_path().empty() ? fs::path(".") : manifest_path.parent_path();
  if (!fs::is_directory(m.corpus)) throw IntegrityError("corpus directory is gone: " + m.corpus);
  if (hash_corpus(m.corpus) != m.input_hashes.at("corpus")) {
    throw IntegrityError(m.corpus + ": corpus changed since the run started; start a fresh run");
  }
  auto check_input = [&](const std::optional<std::string>& path, const char* key) {
    if (!path) return;
    if (!fs::exists(*path) || sha256_file(*path) != m.input_hashes.at(key)) {
      throw IntegrityError(*path + ": input changed since the run started; start a fresh run");
    }
  };
  check_input(m.gold, "gold");
  check_input(m.allow_list, "allow_list");
  Pipeline::verify_outputs(m, run_dir);
  if (m.complete) {
    log(LogLevel::kInfo, "run already complete");
    return m;
  }
  return Pipeline(std::move(m), run_dir, std::move(opts)).execute();
}

}  // namespace sscd
