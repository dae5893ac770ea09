#include "cprobe/metrics.hpp"

#include <boost/math/special_functions/beta.hpp>
#include <cmath>
#include <limits>

#include "cprobe/error.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

double normalize_hofstede(double raw_score) {
  if (!(raw_score >= 0.0 && raw_score <= 100.0)) {
    throw Error(ErrorCode::out_of_range, "Hofstede raw score must be in [0, 100], got " + std::to_string(raw_score));
  }
  return raw_score / 100.0 * 4.0 - 2.0;
}

std::vector<HofstedeAnchor> load_anchors(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorCode::schema, path.string() + ": expected a JSON array");
  std::vector<HofstedeAnchor> out;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    std::string where = path.string() + "[" + std::to_string(i) + "]";
    HofstedeAnchor a;
    try {
      a.country = doc[i].at("country").get<std::string>();
      std::string dim = doc[i].at("dimension").get<std::string>();
      auto d = parse_dimension(dim);
      if (!d) throw Error(ErrorCode::schema, where + ".dimension: unknown code '" + dim + "'");
      a.dimension = *d;
      a.raw_score = doc[i].at("raw_score").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::schema, where + ": " + e.what());
    }
    normalize_hofstede(a.raw_score);
    out.push_back(std::move(a));
  }
  return out;
}

double cds(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorCode::empty_input, "CDS of an empty score set");
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

double cds(const DimensionScoreSet& scores) {
  std::vector<double> values;
  values.reserve(scores.scores.size());
  for (const auto& [_, s] : scores.scores) values.push_back(s);
  return cds(values);
}

double cai(double cds_value, const HofstedeAnchor& anchor) {
  return 1.0 / (1.0 + std::abs(cds_value - anchor.normalized()));
}

double cai(double cds_value, Dimension dimension, const HofstedeAnchor& anchor) {
  if (dimension != anchor.dimension) {
    throw Error(ErrorCode::dimension_mismatch, "CDS is " + std::string(to_code(dimension)) + " but anchor " +
                                                   anchor.country + " is " + std::string(to_code(anchor.dimension)));
  }
  return cai(cds_value, anchor);
}

namespace {

struct Moments {
  double mean = 0.0;
  double variance = 0.0;
};

Moments moments(std::span<const double> xs) {
  Moments m;
  for (double x : xs) m.mean += x;
  m.mean /= static_cast<double>(xs.size());
  for (double x : xs) m.variance += (x - m.mean) * (x - m.mean);
  m.variance /= static_cast<double>(xs.size() - 1);
  return m;
}

}  // namespace

TTestResult welch_t(std::span<const double> sample_w, std::span<const double> sample_e) {
  if (sample_w.size() < 2 || sample_e.size() < 2) {
    throw Error(ErrorCode::too_few_samples, "Welch t-test needs at least 2 values per sample");
  }
  for (auto sample : {sample_w, sample_e}) {
    for (double x : sample) {
      if (!std::isfinite(x)) throw Error(ErrorCode::precondition, "t-test sample contains a non-finite value");
    }
  }
  Moments w = moments(sample_w);
  Moments e = moments(sample_e);
  TTestResult r;
  r.mean_w = w.mean;
  r.mean_e = e.mean;
  r.variance_w = w.variance;
  r.variance_e = e.variance;
  r.n_w = sample_w.size();
  r.n_e = sample_e.size();

  const double nw = static_cast<double>(r.n_w);
  const double ne = static_cast<double>(r.n_e);
  const double sw = w.variance / nw;
  const double se = e.variance / ne;
  const double se2 = sw + se;
  const double diff = w.mean - e.mean;

  if (se2 == 0.0) {
    r.degenerate = true;
    r.degrees_of_freedom = nw + ne - 2.0;
    if (diff == 0.0) {
      r.t_statistic = 0.0;
      r.p_two_tailed = 1.0;
    } else {
      r.t_statistic = diff > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
      r.p_two_tailed = 0.0;
    }
    return r;
  }

  r.t_statistic = diff / std::sqrt(se2);
  r.degrees_of_freedom = se2 * se2 / (sw * sw / (nw - 1.0) + se * se / (ne - 1.0));
  const double df = r.degrees_of_freedom;
  const double t2 = r.t_statistic * r.t_statistic;
  // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
  r.p_two_tailed = std::clamp(boost::math::ibeta(df / 2.0, 0.5, df / (df + t2)), 0.0, 1.0);
  return r;
}

double preference_log_ratio(const std::map<std::string, double>& logprobs, const TargetLexicon& lexicon) {
  lexicon.validate();
  std::vector<std::string> missing;
  auto pole_mass = [&](const std::set<std::string>& pole) {
    double sum = 0.0;
    for (const auto& w : pole) {
      auto it = logprobs.find(w);
      if (it == logprobs.end()) {
        missing.push_back(w);
        continue;
      }
      sum += std::exp(it->second);
    }
    return sum;
  };
  double a = pole_mass(lexicon.pole_a);
  double b = pole_mass(lexicon.pole_b);
  if (!missing.empty()) throw Error(ErrorCode::missing_word, "no log-probability for lexicon words", missing);
  if (a <= 0.0 || b <= 0.0) {
    throw Error(ErrorCode::zero_mass, std::string("pole ") + (a <= 0.0 ? "A" : "B") + " has zero probability mass");
  }
  return std::log(a / b);
}

double concept_similarity(const EmbeddingVector& response_vec, const EmbeddingVector& concept_vec) {
  const auto& x = response_vec.values;
  const auto& y = concept_vec.values;
  if (x.size() != y.size()) {
    throw Error(ErrorCode::dimensionality_mismatch,
                "embedding sizes differ: " + std::to_string(x.size()) + " vs " + std::to_string(y.size()));
  }
  double dot = 0.0, nx = 0.0, ny = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    dot += x[i] * y[i];
    nx += x[i] * x[i];
    ny += y[i] * y[i];
  }
  if (nx == 0.0 || ny == 0.0) throw Error(ErrorCode::zero_vector, "cosine similarity of a zero vector");
  return std::clamp(dot / (std::sqrt(nx) * std::sqrt(ny)), -1.0, 1.0);
}

double bias_magnitude(double cds_idv, double cds_pdi) {
  return std::hypot(cds_idv, cds_pdi);
}

AblationTable ablation_by_probe_type(const ProbeDataset& ds, std::span<const DimensionScoreSet> score_sets) {
  std::map<std::string, ProbeType> type_of;
  for (const auto& p : ds.probes) type_of.emplace(p.id, p.probe_type);
  std::map<ProbeType, std::map<std::string, std::pair<double, std::size_t>>> acc;
  for (const auto& set : score_sets) {
    for (const auto& [probe_id, score] : set.scores) {
      auto it = type_of.find(probe_id);
      if (it == type_of.end()) continue;
      auto& cell = acc[it->second][set.model_id];
      cell.first += std::abs(score);
      ++cell.second;
    }
  }
  AblationTable table;
  for (const auto& [type, models] : acc) {
    for (const auto& [model, cell] : models) table[type][model] = cell.first / static_cast<double>(cell.second);
  }
  return table;
}

}  // namespace cprobe
