#include "cprobe/gateway.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include "cprobe/error.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

using nlohmann::json;

namespace {
constexpr std::string_view kPlaceholder = "{probe}";

std::size_t count_occurrences(std::string_view hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = hay.find(needle); pos != std::string_view::npos; pos = hay.find(needle, pos + 1)) ++n;
  return n;
}
}  // namespace

void QueryParams::validate() const {
  if (!(temperature >= 0.0 && temperature <= 2.0)) {
    throw Error(ErrorCode::precondition, "temperature must lie in [0, 2]");
  }
  if (max_tokens <= 0) throw Error(ErrorCode::precondition, "max_tokens must be positive");
  if (count_occurrences(prompt_template, kPlaceholder) != 1) {
    throw Error(ErrorCode::precondition, "prompt_template must contain exactly one {probe}");
  }
}

std::string QueryParams::digest() const {
  return sha256_hex(canonical_dump(to_json(*this)));
}

json to_json(const QueryParams& p) {
  return {{"temperature", p.temperature},
          {"max_tokens", p.max_tokens},
          {"prompt_template", p.prompt_template}};
}

QueryParams query_params_from_json(const json& j) {
  QueryParams p;
  try {
    if (j.contains("temperature")) p.temperature = j.at("temperature").get<double>();
    if (j.contains("max_tokens")) p.max_tokens = j.at("max_tokens").get<int>();
    if (j.contains("prompt_template")) p.prompt_template = j.at("prompt_template").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("query_params: ") + e.what());
  }
  p.validate();
  return p;
}

std::string_view to_code(ProviderKind k) {
  switch (k) {
    case ProviderKind::http_chat: return "http_chat";
    case ProviderKind::synthetic_persona: return "synthetic_persona";
    case ProviderKind::replay: return "replay";
  }
  return "?";
}

std::optional<ProviderKind> parse_provider_kind(std::string_view code) {
  if (code == "http_chat") return ProviderKind::http_chat;
  if (code == "synthetic_persona") return ProviderKind::synthetic_persona;
  if (code == "replay") return ProviderKind::replay;
  return std::nullopt;
}

double PersonaConfig::scale(ProbeType t) const {
  auto it = type_scale.find(t);
  return it == type_scale.end() ? 1.0 : it->second;
}

void PersonaConfig::validate() const {
  auto in_range = [](double b) { return b >= -2.0 && b <= 2.0; };
  if (!in_range(idv_bias) || !in_range(pdi_bias)) {
    throw Error(ErrorCode::precondition, "persona biases must lie in [-2, 2]");
  }
  if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) {
    throw Error(ErrorCode::precondition, "persona noise_sd must be non-negative");
  }
  for (const auto& [t, s] : type_scale) {
    if (!std::isfinite(s) || s < 0.0) {
      throw Error(ErrorCode::precondition, "persona type_scale must be finite and non-negative");
    }
  }
}

void ModelProfile::validate() const {
  if (model_id.empty()) throw Error(ErrorCode::schema, "model profile without model_id");
  switch (kind) {
    case ProviderKind::http_chat:
      if (!endpoint || endpoint->empty()) {
        throw Error(ErrorCode::schema, "model '" + model_id + "': http_chat requires endpoint");
      }
      break;
    case ProviderKind::replay:
      if (!cache_path) {
        throw Error(ErrorCode::schema, "model '" + model_id + "': replay requires cache_path");
      }
      break;
    case ProviderKind::synthetic_persona:
      if (!persona) {
        throw Error(ErrorCode::schema, "model '" + model_id + "': synthetic_persona requires persona");
      }
      persona->validate();
      break;
  }
  if (!(timeout_s > 0.0)) throw Error(ErrorCode::schema, "model '" + model_id + "': timeout_s must be positive");
}

json to_json(const ModelProfile& p) {
  json j = {{"model_id", p.model_id},
            {"provider_kind", std::string(to_code(p.kind))},
            {"api_key_env", p.api_key_env},
            {"timeout_s", p.timeout_s},
            {"supports_logprobs", p.supports_logprobs},
            {"supports_embeddings", p.supports_embeddings}};
  if (!p.remote_model.empty()) j["remote_model"] = p.remote_model;
  if (p.endpoint) j["endpoint"] = *p.endpoint;
  if (p.embedding_endpoint) j["embedding_endpoint"] = *p.embedding_endpoint;
  if (p.cache_path) j["cache_path"] = p.cache_path->string();
  if (p.persona) {
    json scale = json::object();
    for (const auto& [t, s] : p.persona->type_scale) scale[std::string(to_code(t))] = s;
    j["persona"] = {{"idv_bias", p.persona->idv_bias},
                    {"pdi_bias", p.persona->pdi_bias},
                    {"noise_sd", p.persona->noise_sd},
                    {"seed", p.persona->seed},
                    {"type_scale", scale}};
  }
  return j;
}

ModelProfile model_profile_from_json(const json& j) {
  ModelProfile p;
  try {
    p.model_id = j.at("model_id").get<std::string>();
    std::string kind = j.at("provider_kind").get<std::string>();
    auto k = parse_provider_kind(kind);
    if (!k) throw Error(ErrorCode::schema, "unknown provider_kind '" + kind + "'");
    p.kind = *k;
    if (j.contains("endpoint")) p.endpoint = j.at("endpoint").get<std::string>();
    if (j.contains("embedding_endpoint")) p.embedding_endpoint = j.at("embedding_endpoint").get<std::string>();
    if (j.contains("cache_path")) p.cache_path = j.at("cache_path").get<std::string>();
    p.api_key_env = j.value("api_key_env", p.api_key_env);
    p.remote_model = j.value("remote_model", std::string());
    p.timeout_s = j.value("timeout_s", p.timeout_s);
    p.supports_logprobs = j.value("supports_logprobs", p.kind == ProviderKind::synthetic_persona);
    p.supports_embeddings = j.value("supports_embeddings", p.kind == ProviderKind::synthetic_persona);
    if (j.contains("persona")) {
      const json& pj = j.at("persona");
      PersonaConfig pc;
      if (!pj.contains("seed")) {
        throw Error(ErrorCode::schema, "model '" + p.model_id + "': persona.seed is mandatory");
      }
      pc.seed = pj.at("seed").get<std::uint64_t>();
      pc.idv_bias = pj.value("idv_bias", 0.0);
      pc.pdi_bias = pj.value("pdi_bias", 0.0);
      pc.noise_sd = pj.value("noise_sd", 0.0);
      if (pj.contains("type_scale")) {
        for (auto it = pj.at("type_scale").begin(); it != pj.at("type_scale").end(); ++it) {
          auto t = parse_probe_type(it.key());
          if (!t) throw Error(ErrorCode::schema, "persona.type_scale: unknown probe type " + it.key());
          pc.type_scale[*t] = it->get<double>();
        }
      }
      p.persona = pc;
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("model profile: ") + e.what());
  }
  p.validate();
  return p;
}

std::string ResponseKey::str() const {
  return model_id + "\x1f" + probe_id + "\x1f" + language + "\x1f" + params_digest + "\x1f" +
         std::to_string(sample);
}

std::string response_id_for(const ResponseKey& key) {
  return sha256_hex(key.str()).substr(0, 24);
}

nlohmann::ordered_json to_json(const ModelResponse& r) {
  nlohmann::ordered_json j;
  j["response_id"] = r.response_id;
  j["probe_id"] = r.probe_id;
  j["model_id"] = r.model_id;
  j["language"] = r.language;
  j["sample"] = r.sample;
  j["params_digest"] = r.params_digest;
  j["text"] = r.text;
  if (r.token_logprobs) j["token_logprobs"] = *r.token_logprobs;
  j["created_at"] = r.created_at;
  if (r.ground_truth) {
    j["ground_truth"] = {{"latent", r.ground_truth->latent}, {"pole_score", r.ground_truth->pole_score}};
  }
  return j;
}

ModelResponse model_response_from_json(const json& j) {
  ModelResponse r;
  try {
    r.response_id = j.at("response_id").get<std::string>();
    r.probe_id = j.at("probe_id").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.language = j.at("language").get<std::string>();
    r.sample = j.value("sample", 0);
    r.params_digest = j.at("params_digest").get<std::string>();
    r.text = j.at("text").get<std::string>();
    if (j.contains("token_logprobs")) r.token_logprobs = j.at("token_logprobs").get<std::map<std::string, double>>();
    r.created_at = j.value("created_at", std::string());
    if (j.contains("ground_truth")) {
      const json& g = j.at("ground_truth");
      r.ground_truth = GroundTruth{g.at("latent").get<double>(), g.at("pole_score").get<int>()};
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("response record: ") + e.what());
  }
  return r;
}

std::string render_prompt(const Probe& probe, std::string_view language, const QueryParams& params) {
  const LocaleVariant* v = probe.variant(language);
  if (!v) {
    throw Error(ErrorCode::missing_variant,
                "probe '" + probe.id + "' has no variant for language '" + std::string(language) + "'",
                {probe.id});
  }
  std::string out = params.prompt_template;
  auto pos = out.find(kPlaceholder);
  if (pos == std::string::npos) {
    throw Error(ErrorCode::precondition, "prompt_template lacks {probe}");
  }
  out.replace(pos, kPlaceholder.size(), v->text);
  return out;
}

std::filesystem::path default_data_dir() {
  if (const char* env = std::getenv("CPROBE_DATA_DIR"); env && *env) return env;
  return CPROBE_DEFAULT_DATA_DIR;
}

Gateway::Gateway(ReplayCache& cache, LexiconSet lexicons, std::filesystem::path template_bank,
                 GatewayOptions options)
    : cache_(cache),
      lexicons_(std::move(lexicons)),
      template_bank_(std::move(template_bank)),
      options_(options) {
  factory_ = [this](const ModelProfile& profile) -> std::unique_ptr<Provider> {
    switch (profile.kind) {
      case ProviderKind::synthetic_persona:
        return make_persona_provider(profile, template_bank_, lexicons_);
      case ProviderKind::http_chat:
        return make_http_provider(profile);
      case ProviderKind::replay:
        return nullptr;
    }
    return nullptr;
  };
}

Gateway::~Gateway() = default;

void Gateway::set_provider_factory(ProviderFactory factory) {
  std::lock_guard lock(providers_mutex_);
  factory_ = std::move(factory);
  providers_.clear();
}

Provider& Gateway::provider_for(const ModelProfile& profile) {
  std::lock_guard lock(providers_mutex_);
  auto it = providers_.find(profile.model_id);
  if (it == providers_.end()) {
    auto p = factory_(profile);
    if (!p) throw Error(ErrorCode::provider, "no provider for model '" + profile.model_id + "'");
    it = providers_.emplace(profile.model_id, std::move(p)).first;
  }
  return *it->second;
}

ReplayCache& Gateway::replay_source(const ModelProfile& profile) {
  std::lock_guard lock(providers_mutex_);
  auto& slot = replay_sources_[*profile.cache_path];
  if (!slot) {
    if (!std::filesystem::exists(*profile.cache_path)) {
      throw Error(ErrorCode::io, "replay cache not found: " + profile.cache_path->string());
    }
    slot = std::make_unique<ReplayCache>(*profile.cache_path, /*read_only=*/true);
  }
  return *slot;
}

template <typename F>
auto Gateway::with_retries(const ModelProfile& profile, F&& call) {
  int attempts = std::max(1, options_.retry_attempts);
  auto delay = options_.backoff_base;
  for (int attempt = 1;; ++attempt) {
    try {
      provider_calls_.fetch_add(1);
      return call();
    } catch (const Error& e) {
      if (e.code() != ErrorCode::provider || attempt >= attempts) {
        if (e.code() == ErrorCode::provider) {
          throw Error(ErrorCode::provider,
                      "model '" + profile.model_id + "': " + e.message() + " (after " +
                          std::to_string(attempt) + " attempts)",
                      e.subjects());
        }
        throw;
      }
    }
    std::this_thread::sleep_for(delay);
    delay *= 2;
  }
}

ModelResponse Gateway::query_model(const ModelProfile& profile, const Probe& probe,
                                   std::string_view language, const QueryParams& params, int sample) {
  params.validate();
  ResponseKey key{profile.model_id, probe.id, std::string(language), params.digest(), sample};
  if (auto hit = cache_.find_response(key)) return *hit;

  if (profile.kind == ProviderKind::replay) {
    auto hit = replay_source(profile).find_response(key);
    if (!hit) {
      throw Error(ErrorCode::cache_miss, "replay cache has no record for " + probe.id + " / " +
                                             profile.model_id + " / " + std::string(language),
                  {probe.id});
    }
    cache_.record_response(*hit);
    return *hit;
  }
  if (options_.replay_only) {
    throw Error(ErrorCode::cache_miss, "replay-only mode: no record for " + probe.id + " / " +
                                           profile.model_id + " / " + std::string(language),
                {probe.id});
  }

  CompletionRequest req{&probe, std::string(language), sample, render_prompt(probe, language, params), params};
  Provider& provider = provider_for(profile);
  Completion c = with_retries(profile, [&] { return provider.complete(req); });
  if (c.text.empty()) {
    throw Error(ErrorCode::provider, "model '" + profile.model_id + "' returned an empty response",
                {probe.id});
  }
  ModelResponse r;
  r.probe_id = probe.id;
  r.model_id = profile.model_id;
  r.language = std::string(language);
  r.sample = sample;
  r.params_digest = key.params_digest;
  r.response_id = response_id_for(key);
  r.text = std::move(c.text);
  r.token_logprobs = std::move(c.token_logprobs);
  r.ground_truth = c.ground_truth;
  r.created_at = utc_now_iso8601();
  cache_.record_response(r);
  return r;
}

LogprobResult Gateway::query_logprobs(const ModelProfile& profile, std::string_view prompt,
                                      const std::vector<std::string>& target_words,
                                      std::string_view probe_id) {
  if (!profile.supports_logprobs) {
    throw Error(ErrorCode::capability, "model '" + profile.model_id + "' does not expose logprobs");
  }
  if (auto hit = cache_.find_logprobs(profile.model_id, prompt, target_words)) return *hit;
  if (profile.kind == ProviderKind::replay) {
    auto hit = replay_source(profile).find_logprobs(profile.model_id, prompt, target_words);
    if (!hit) throw Error(ErrorCode::cache_miss, "replay cache has no logprobs for this prompt");
    cache_.record_logprobs(profile.model_id, prompt, target_words, *hit, probe_id);
    return *hit;
  }
  if (options_.replay_only) throw Error(ErrorCode::cache_miss, "replay-only mode: logprobs not cached");
  Provider& provider = provider_for(profile);
  LogprobResult r = with_retries(profile, [&] { return provider.logprobs(prompt, target_words); });
  for (const auto& w : target_words) {
    if (!r.logprobs.count(w)) {
      throw Error(ErrorCode::provider, "provider returned no logprob for '" + w + "'", {w});
    }
  }
  cache_.record_logprobs(profile.model_id, prompt, target_words, r, probe_id);
  return r;
}

EmbeddingVector Gateway::embed_text(const ModelProfile& profile, std::string_view text) {
  if (!profile.supports_embeddings) {
    throw Error(ErrorCode::capability, "model '" + profile.model_id + "' does not expose embeddings");
  }
  if (text.empty()) throw Error(ErrorCode::precondition, "cannot embed empty text");
  if (auto hit = cache_.find_embedding(profile.model_id, text)) return *hit;
  if (profile.kind == ProviderKind::replay) {
    auto hit = replay_source(profile).find_embedding(profile.model_id, text);
    if (!hit) throw Error(ErrorCode::cache_miss, "replay cache has no embedding for this text");
    cache_.record_embedding(text, *hit);
    return *hit;
  }
  if (options_.replay_only) throw Error(ErrorCode::cache_miss, "replay-only mode: embedding not cached");
  Provider& provider = provider_for(profile);
  EmbeddingVector v = with_retries(profile, [&] { return provider.embed(text); });
  v.model_id = profile.model_id;
  for (double x : v.values) {
    if (!std::isfinite(x)) throw Error(ErrorCode::provider, "embedding has non-finite entries");
  }
  cache_.record_embedding(text, v);
  return v;
}

}  // namespace cprobe
