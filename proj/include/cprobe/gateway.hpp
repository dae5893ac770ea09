#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "cprobe/lexicon.hpp"
#include "cprobe/probe.hpp"
#include "json.hpp"

namespace cprobe {

class JsonlAppender;

inline constexpr std::string_view kDefaultPromptTemplate =
    "Consider the following scenario: {probe}. What is the best course of action? "
    "Explain your reasoning.";

struct QueryParams {
  double temperature = 0.7;
  int max_tokens = 512;
  std::string prompt_template{kDefaultPromptTemplate};

  /// Throws PreconditionError unless temperature is in [0,2], max_tokens is
  /// positive and the template holds exactly one `{probe}` placeholder.
  void validate() const;

  /// SHA-256 over the canonical JSON form; stable across serialization.
  std::string digest() const;

  bool operator==(const QueryParams&) const = default;
};

nlohmann::json to_json(const QueryParams& p);
QueryParams query_params_from_json(const nlohmann::json& j);

enum class ProviderKind { http_chat, synthetic_persona, replay };

std::string_view to_code(ProviderKind k);
std::optional<ProviderKind> parse_provider_kind(std::string_view code);

/// Bias parameters for the offline persona provider. Biases are on the
/// annotation scale [-2, 2]; `type_scale` multiplies the bias per probe type
/// (missing entries mean 1.0).
struct PersonaConfig {
  double idv_bias = 0.0;
  double pdi_bias = 0.0;
  double noise_sd = 0.0;
  std::uint64_t seed = 0;
  std::map<ProbeType, double> type_scale;

  double bias(Dimension d) const { return d == Dimension::idv ? idv_bias : pdi_bias; }
  double scale(ProbeType t) const;
  void validate() const;
};

struct ModelProfile {
  std::string model_id;
  ProviderKind kind = ProviderKind::synthetic_persona;
  std::optional<std::string> endpoint;            // chat completions URL
  std::optional<std::string> embedding_endpoint;  // embeddings URL
  std::optional<std::filesystem::path> cache_path;  // replay source
  std::string api_key_env = "PROVIDER_API_KEY";
  std::string remote_model;  // model name sent to the provider; defaults to model_id
  double timeout_s = 60.0;
  bool supports_logprobs = false;
  bool supports_embeddings = false;
  std::optional<PersonaConfig> persona;

  void validate() const;
};

nlohmann::json to_json(const ModelProfile& p);
ModelProfile model_profile_from_json(const nlohmann::json& j);

/// Hidden pole label attached to synthetic responses. Never shown to annotators.
struct GroundTruth {
  double latent = 0.0;
  int pole_score = 0;
  bool operator==(const GroundTruth&) const = default;
};

struct ResponseKey {
  std::string model_id;
  std::string probe_id;
  std::string language;
  std::string params_digest;
  int sample = 0;

  std::string str() const;
  auto operator<=>(const ResponseKey&) const = default;
};

struct ModelResponse {
  std::string response_id;  // opaque digest of the key; safe to show annotators
  std::string probe_id;
  std::string model_id;
  std::string language;
  int sample = 0;
  std::string text;
  std::optional<std::map<std::string, double>> token_logprobs;
  std::string created_at;
  std::string params_digest;
  std::optional<GroundTruth> ground_truth;

  ResponseKey key() const { return {model_id, probe_id, language, params_digest, sample}; }
  bool operator==(const ModelResponse&) const = default;
};

std::string response_id_for(const ResponseKey& key);
nlohmann::ordered_json to_json(const ModelResponse& r);
ModelResponse model_response_from_json(const nlohmann::json& j);

struct EmbeddingVector {
  std::vector<double> values;
  std::string model_id;
};

struct LogprobResult {
  std::map<std::string, double> logprobs;
  // Words scored by their first sub-token only.
  std::set<std::string> first_token_only;
};

/// Append-only line-delimited record store of provider results. The key index
/// is rebuilt on open. Concurrent readers, serialized writer.
class ReplayCache {
 public:
  /// A read-only cache never creates, repairs or appends to the file; its
  /// record_* calls throw.
  explicit ReplayCache(std::filesystem::path path, bool read_only = false);
  ~ReplayCache();

  std::optional<ModelResponse> find_response(const ResponseKey& key) const;
  void record_response(const ModelResponse& r);

  std::optional<LogprobResult> find_logprobs(const std::string& model_id, std::string_view prompt,
                                             const std::vector<std::string>& targets) const;
  void record_logprobs(const std::string& model_id, std::string_view prompt,
                       const std::vector<std::string>& targets, const LogprobResult& result,
                       std::string_view probe_id = {});

  std::optional<EmbeddingVector> find_embedding(const std::string& model_id,
                                                std::string_view text) const;
  void record_embedding(std::string_view text, const EmbeddingVector& v);

  std::vector<ModelResponse> responses() const;
  std::size_t response_count() const;

  struct LogprobRecord {
    std::string model_id;
    std::string probe_id;
    LogprobResult result;
  };
  std::vector<LogprobRecord> logprob_records() const;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::string logprob_key(const std::string& model_id, std::string_view prompt,
                          const std::vector<std::string>& targets) const;
  std::string embedding_key(const std::string& model_id, std::string_view text) const;
  void index_record(const nlohmann::json& rec);
  void require_writable() const;

  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::map<ResponseKey, ModelResponse> responses_;
  std::vector<ResponseKey> response_order_;
  std::map<std::string, LogprobResult> logprobs_;
  std::vector<LogprobRecord> logprob_order_;
  std::map<std::string, EmbeddingVector> embeddings_;
  std::unique_ptr<JsonlAppender> appender_;
};

struct CompletionRequest {
  const Probe* probe = nullptr;
  std::string language;
  int sample = 0;
  std::string prompt;
  QueryParams params;
};

struct Completion {
  std::string text;
  std::optional<std::map<std::string, double>> token_logprobs;
  std::optional<GroundTruth> ground_truth;
};

/// A backend able to answer prompts. Implementations must be thread-safe.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual Completion complete(const CompletionRequest& req) = 0;
  virtual LogprobResult logprobs(std::string_view prompt, const std::vector<std::string>& targets) = 0;
  virtual EmbeddingVector embed(std::string_view text) = 0;
};

std::string render_prompt(const Probe& probe, std::string_view language, const QueryParams& params);

struct GatewayOptions {
  bool replay_only = false;
  int retry_attempts = 3;
  std::chrono::milliseconds backoff_base{250};
};

/// Entry point for every model interaction: consults the replay cache, and on
/// a miss dispatches to the provider for the profile and records the result.
class Gateway {
 public:
  using ProviderFactory = std::function<std::unique_ptr<Provider>(const ModelProfile&)>;

  Gateway(ReplayCache& cache, LexiconSet lexicons, std::filesystem::path template_bank,
          GatewayOptions options = {});
  ~Gateway();

  ModelResponse query_model(const ModelProfile& profile, const Probe& probe,
                            std::string_view language, const QueryParams& params, int sample = 0);
  LogprobResult query_logprobs(const ModelProfile& profile, std::string_view prompt,
                               const std::vector<std::string>& target_words,
                               std::string_view probe_id = {});
  EmbeddingVector embed_text(const ModelProfile& profile, std::string_view text);

  /// Number of calls that reached a provider (cache misses).
  std::size_t provider_calls() const { return provider_calls_.load(); }

  /// Overrides how providers are constructed; used to inject test doubles.
  void set_provider_factory(ProviderFactory factory);

  const GatewayOptions& options() const { return options_; }

 private:
  Provider& provider_for(const ModelProfile& profile);
  ReplayCache& replay_source(const ModelProfile& profile);
  template <typename F>
  auto with_retries(const ModelProfile& profile, F&& call);

  ReplayCache& cache_;
  LexiconSet lexicons_;
  std::filesystem::path template_bank_;
  GatewayOptions options_;
  ProviderFactory factory_;
  std::mutex providers_mutex_;
  std::map<std::string, std::unique_ptr<Provider>> providers_;
  std::map<std::filesystem::path, std::unique_ptr<ReplayCache>> replay_sources_;
  std::atomic<std::size_t> provider_calls_{0};
};

/// Offline provider with planted cultural bias. See persona.cpp for the
/// generative model.
std::unique_ptr<Provider> make_persona_provider(const ModelProfile& profile,
                                                const std::filesystem::path& template_bank,
                                                const LexiconSet& lexicons);

/// OpenAI-style chat-completions provider over HTTP(S).
std::unique_ptr<Provider> make_http_provider(const ModelProfile& profile);

std::filesystem::path default_data_dir();

}  // namespace cprobe
