// Offline "cultural persona" provider.
//
// Generative model for one (persona, probe, sample):
//   latent  = bias(dimension) * type_scale(probe_type) + noise_sd * z,  z ~ N(0,1)
//   score   = stochastic rounding of clamp(latent, -2, 2) with u ~ U(0,1):
//             floor(c) + (u < c - floor(c))
//   text    = opening + pole sentences + closing from the template bank, with
//             pole sentence counts (a, b) chosen so the keyword auto-scorer
//             reads back exactly `score`:
//               +2 -> (2,0)  +1 -> (2,1)  0 -> (1,1)  -1 -> (1,2)  -2 -> (0,2)
// z and u come from a stream seeded by (seed, model_id, probe_id, sample), so
// both language variants of a probe share the same latent. For noise_sd = 0
// the score is monotone non-decreasing in the bias.
//
// Log-probabilities over target words w (prompt independent):
//   logit(w)   = sum over dimensions D of bias(D) * s_D(w),
//                s_D(w) = +1 if w in pole A of D's lexicon, -1 if in pole B, else 0
//   logprob(w) = logit(w) - log(1 + sum_t exp(logit(t)))
// The 1 stands for residual vocabulary mass. With equal pole sizes the
// preference log-ratio is exactly 2 * bias(D).
//
// Embeddings are 64-dimensional N(0,1) vectors seeded by (model_id, text).

#include <algorithm>
#include <cmath>
#include <random>

#include "cprobe/error.hpp"
#include "cprobe/gateway.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

namespace {

constexpr std::size_t kEmbeddingDim = 64;

struct SentenceBank {
  std::vector<std::string> open, pole_a, pole_b, close;
};

using TemplateBank = std::map<Dimension, std::map<std::string, SentenceBank>>;

TemplateBank load_template_bank(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
  TemplateBank bank;
  try {
    for (auto dit = doc.begin(); dit != doc.end(); ++dit) {
      auto dim = parse_dimension(dit.key());
      if (!dim) throw Error(ErrorCode::schema, path.string() + ": unknown dimension " + dit.key());
      for (auto lit = dit->begin(); lit != dit->end(); ++lit) {
        SentenceBank b;
        b.open = lit->at("open").get<std::vector<std::string>>();
        b.pole_a = lit->at("pole_a").get<std::vector<std::string>>();
        b.pole_b = lit->at("pole_b").get<std::vector<std::string>>();
        b.close = lit->at("close").get<std::vector<std::string>>();
        if (b.open.empty() || b.close.empty() || b.pole_a.size() < 2 || b.pole_b.size() < 2) {
          throw Error(ErrorCode::schema, path.string() + ": bank " + dit.key() + "/" + lit.key() +
                                             " needs open/close entries and >= 2 sentences per pole");
        }
        bank[*dim][lit.key()] = std::move(b);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, path.string() + ": " + e.what());
  }
  return bank;
}

bool uses_spaces(std::string_view language) {
  return !(language.rfind("zh", 0) == 0 || language.rfind("ja", 0) == 0);
}

class PersonaProvider final : public Provider {
 public:
  PersonaProvider(ModelProfile profile, TemplateBank bank, LexiconSet lexicons)
      : profile_(std::move(profile)), bank_(std::move(bank)), lexicons_(std::move(lexicons)) {}

  Completion complete(const CompletionRequest& req) override {
    const PersonaConfig& cfg = *profile_.persona;
    const Probe& probe = *req.probe;

    std::mt19937_64 latent_rng(fnv1a64(std::to_string(cfg.seed) + "|" + profile_.model_id + "|" +
                                       probe.id + "|" + std::to_string(req.sample)));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    double z = normal(latent_rng);
    double u = unit(latent_rng);

    double latent = cfg.bias(probe.dimension) * cfg.scale(probe.probe_type) + cfg.noise_sd * z;
    double c = std::clamp(latent, -2.0, 2.0);
    double lo = std::floor(c);
    int score = static_cast<int>(lo) + (u < c - lo ? 1 : 0);
    score = std::clamp(score, -2, 2);

    Completion out;
    out.text = compose(probe.dimension, req.language, score,
                       fnv1a64(std::to_string(cfg.seed) + "|" + profile_.model_id + "|" + probe.id + "|" +
                               req.language + "|" + std::to_string(req.sample)));
    out.ground_truth = GroundTruth{latent, score};
    return out;
  }

  LogprobResult logprobs(std::string_view, const std::vector<std::string>& targets) override {
    const PersonaConfig& cfg = *profile_.persona;
    std::vector<double> logits;
    logits.reserve(targets.size());
    for (const auto& w : targets) {
      double logit = 0.0;
      for (const auto& [dim, lex] : lexicons_) {
        if (lex.pole_a.count(w)) logit += cfg.bias(dim);
        if (lex.pole_b.count(w)) logit -= cfg.bias(dim);
      }
      logits.push_back(logit);
    }
    double z = 1.0;
    for (double l : logits) z += std::exp(l);
    double log_z = std::log(z);
    LogprobResult r;
    for (std::size_t i = 0; i < targets.size(); ++i) r.logprobs[targets[i]] = logits[i] - log_z;
    return r;
  }

  EmbeddingVector embed(std::string_view text) override {
    std::mt19937_64 rng(fnv1a64(profile_.model_id + "|" + std::string(text)));
    std::normal_distribution<double> normal(0.0, 1.0);
    EmbeddingVector v;
    v.model_id = profile_.model_id;
    v.values.resize(kEmbeddingDim);
    for (auto& x : v.values) x = normal(rng);
    return v;
  }

 private:
  std::string compose(Dimension dim, const std::string& language, int score, std::uint64_t seed) const {
    const auto& by_lang = bank_.at(dim);
    auto it = by_lang.find(language);
    if (it == by_lang.end()) it = by_lang.find("en");
    if (it == by_lang.end()) it = by_lang.begin();
    const SentenceBank& b = it->second;

    static constexpr int kCounts[5][2] = {{0, 2}, {1, 2}, {1, 1}, {2, 1}, {2, 0}};
    int n_a = kCounts[score + 2][0];
    int n_b = kCounts[score + 2][1];

    std::mt19937_64 rng(seed);
    auto pick_distinct = [&rng](const std::vector<std::string>& pool, int n) {
      std::vector<std::size_t> idx(pool.size());
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      std::vector<std::string> out;
      for (int i = 0; i < n; ++i) out.push_back(pool[idx[static_cast<std::size_t>(i)]]);
      return out;
    };
    std::vector<std::string> middle = pick_distinct(b.pole_a, n_a);
    for (auto& s : pick_distinct(b.pole_b, n_b)) middle.push_back(std::move(s));
    std::shuffle(middle.begin(), middle.end(), rng);

    std::vector<std::string> parts;
    parts.push_back(b.open[rng() % b.open.size()]);
    for (auto& s : middle) parts.push_back(std::move(s));
    parts.push_back(b.close[rng() % b.close.size()]);

    std::string sep = uses_spaces(it->first) ? " " : "";
    std::string text;
    for (std::size_t i = 0; i < parts.size(); ++i) {
      if (i) text += sep;
      text += parts[i];
    }
    return text;
  }

  ModelProfile profile_;
  TemplateBank bank_;
  LexiconSet lexicons_;
};

}  // namespace

std::unique_ptr<Provider> make_persona_provider(const ModelProfile& profile,
                                                const std::filesystem::path& template_bank,
                                                const LexiconSet& lexicons) {
  if (!profile.persona) {
    throw Error(ErrorCode::schema, "model '" + profile.model_id + "' has no persona config");
  }
  profile.persona->validate();
  return std::make_unique<PersonaProvider>(profile, load_template_bank(template_bank), lexicons);
}

}  // namespace cprobe
