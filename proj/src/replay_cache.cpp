#include "cprobe/error.hpp"
#include "cprobe/gateway.hpp"
#include "cprobe/util.hpp"

#include <shared_mutex>

namespace cprobe {

using nlohmann::json;

namespace {

std::string join_targets(const std::vector<std::string>& targets) {
  std::string out;
  for (const auto& t : targets) {
    out += t;
    out.push_back('\x1f');
  }
  return out;
}

}  // namespace

ReplayCache::ReplayCache(std::filesystem::path path, bool read_only) : path_(std::move(path)) {
  std::size_t dropped = 0;
  for (const auto& rec : read_jsonl(path_, &dropped)) {
    try {
      index_record(rec);
    } catch (const json::exception& e) {
      throw Error(ErrorCode::schema, path_.string() + ": " + e.what());
    }
  }
  if (!read_only) appender_ = std::make_unique<JsonlAppender>(path_);
}

ReplayCache::~ReplayCache() = default;

std::string ReplayCache::logprob_key(const std::string& model_id, std::string_view prompt,
                                     const std::vector<std::string>& targets) const {
  return model_id + "\x1e" + sha256_hex(prompt) + "\x1e" + sha256_hex(join_targets(targets));
}

std::string ReplayCache::embedding_key(const std::string& model_id, std::string_view text) const {
  return model_id + "\x1e" + sha256_hex(text);
}

void ReplayCache::index_record(const json& rec) {
  std::string kind = rec.value("kind", std::string("response"));
  if (kind == "response") {
    ModelResponse r = model_response_from_json(rec);
    auto key = r.key();
    if (responses_.emplace(key, std::move(r)).second) response_order_.push_back(key);
  } else if (kind == "logprobs") {
    LogprobResult lr;
    lr.logprobs = rec.at("logprobs").get<std::map<std::string, double>>();
    lr.first_token_only = rec.value("first_token_only", std::set<std::string>{});
    std::string key = rec.at("model_id").get<std::string>() + "\x1e" + rec.at("prompt_digest").get<std::string>() +
                      "\x1e" + rec.at("targets_digest").get<std::string>();
    if (logprobs_.emplace(key, lr).second) {
      logprob_order_.push_back({rec.at("model_id").get<std::string>(), rec.value("probe_id", std::string()), lr});
    }
  } else if (kind == "embedding") {
    EmbeddingVector v{rec.at("values").get<std::vector<double>>(), rec.at("model_id").get<std::string>()};
    std::string key = v.model_id + "\x1e" + rec.at("text_digest").get<std::string>();
    embeddings_.emplace(key, std::move(v));
  } else {
    throw Error(ErrorCode::schema, path_.string() + ": unknown record kind '" + kind + "'");
  }
}

void ReplayCache::require_writable() const {
  if (!appender_) throw Error(ErrorCode::io, "replay cache " + path_.string() + " is open read-only");
}

std::optional<ModelResponse> ReplayCache::find_response(const ResponseKey& key) const {
  std::shared_lock lock(mutex_);
  auto it = responses_.find(key);
  if (it == responses_.end()) return std::nullopt;
  return it->second;
}

void ReplayCache::record_response(const ModelResponse& r) {
  std::lock_guard lock(mutex_);
  require_writable();
  auto key = r.key();
  if (responses_.count(key)) return;  // never overwrite a recorded response
  nlohmann::ordered_json rec;
  rec["kind"] = "response";
  auto body = to_json(r);
  for (auto& [k, v] : body.items()) rec[k] = v;
  appender_->append(rec.dump());
  responses_.emplace(key, r);
  response_order_.push_back(key);
}

std::optional<LogprobResult> ReplayCache::find_logprobs(const std::string& model_id, std::string_view prompt,
                                                        const std::vector<std::string>& targets) const {
  std::shared_lock lock(mutex_);
  auto it = logprobs_.find(logprob_key(model_id, prompt, targets));
  if (it == logprobs_.end()) return std::nullopt;
  return it->second;
}

void ReplayCache::record_logprobs(const std::string& model_id, std::string_view prompt,
                                  const std::vector<std::string>& targets, const LogprobResult& result,
                                  std::string_view probe_id) {
  std::lock_guard lock(mutex_);
  require_writable();
  std::string key = logprob_key(model_id, prompt, targets);
  if (logprobs_.count(key)) return;
  nlohmann::ordered_json rec;
  rec["kind"] = "logprobs";
  rec["model_id"] = model_id;
  rec["probe_id"] = std::string(probe_id);
  rec["prompt_digest"] = sha256_hex(prompt);
  rec["targets_digest"] = sha256_hex(join_targets(targets));
  rec["targets"] = targets;
  rec["logprobs"] = result.logprobs;
  rec["first_token_only"] = result.first_token_only;
  appender_->append(rec.dump());
  logprobs_.emplace(key, result);
  logprob_order_.push_back({model_id, std::string(probe_id), result});
}

std::optional<EmbeddingVector> ReplayCache::find_embedding(const std::string& model_id,
                                                           std::string_view text) const {
  std::shared_lock lock(mutex_);
  auto it = embeddings_.find(embedding_key(model_id, text));
  if (it == embeddings_.end()) return std::nullopt;
  return it->second;
}

void ReplayCache::record_embedding(std::string_view text, const EmbeddingVector& v) {
  std::lock_guard lock(mutex_);
  require_writable();
  std::string key = embedding_key(v.model_id, text);
  if (embeddings_.count(key)) return;
  nlohmann::ordered_json rec;
  rec["kind"] = "embedding";
  rec["model_id"] = v.model_id;
  rec["text_digest"] = sha256_hex(text);
  rec["values"] = v.values;
  appender_->append(rec.dump());
  embeddings_.emplace(key, v);
}

std::vector<ModelResponse> ReplayCache::responses() const {
  std::shared_lock lock(mutex_);
  std::vector<ModelResponse> out;
  out.reserve(response_order_.size());
  for (const auto& k : response_order_) out.push_back(responses_.at(k));
  return out;
}

std::size_t ReplayCache::response_count() const {
  std::shared_lock lock(mutex_);
  return responses_.size();
}

std::vector<ReplayCache::LogprobRecord> ReplayCache::logprob_records() const {
  std::shared_lock lock(mutex_);
  return logprob_order_;
}

}  // namespace cprobe
