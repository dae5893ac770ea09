#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cprobe/annotation.hpp"
#include "cprobe/gateway.hpp"
#include "cprobe/lexicon.hpp"
#include "cprobe/probe.hpp"

namespace cprobe {

/// Linear map of a raw Hofstede score in [0,100] onto the annotation scale
/// [-2,2]: raw/100*4 - 2. Throws OutOfRange outside [0,100].
double normalize_hofstede(double raw_score);

struct HofstedeAnchor {
  std::string country;
  Dimension dimension = Dimension::idv;
  double raw_score = 0.0;

  double normalized() const { return normalize_hofstede(raw_score); }
};

/// Loads a JSON array of {country, dimension, raw_score}.
std::vector<HofstedeAnchor> load_anchors(const std::filesystem::path& path);

/// Cultural Dimension Score: mean of the final scores. Throws EmptyInput.
double cds(const DimensionScoreSet& scores);
double cds(std::span<const double> scores);

/// Cultural Alignment Index 1 / (1 + |cds - anchor|), in (0, 1].
double cai(double cds_value, const HofstedeAnchor& anchor);
/// As above, but throws DimensionMismatch when `dimension` differs from the anchor's.
double cai(double cds_value, Dimension dimension, const HofstedeAnchor& anchor);

struct TTestResult {
  double t_statistic = 0.0;
  double degrees_of_freedom = 0.0;
  double p_two_tailed = 1.0;
  double mean_w = 0.0;
  double mean_e = 0.0;
  double variance_w = 0.0;  // unbiased (n-1)
  double variance_e = 0.0;
  std::size_t n_w = 0;
  std::size_t n_e = 0;
  // Both variances zero. Equal means give t = 0, p = 1; different means give
  // t = +/-inf, p = 0.
  bool degenerate = false;
};

/// Welch's unequal-variance t-test, two-tailed, Welch-Satterthwaite degrees
/// of freedom, p from the regularized incomplete beta function. Each sample
/// needs at least two values (TooFewSamples).
TTestResult welch_t(std::span<const double> sample_w, std::span<const double> sample_e);

/// ln( sum_{w in pole A} P(w) / sum_{w in pole B} P(w) ); positive favours
/// pole A. Throws MissingWord when a lexicon word has no log-probability and
/// ZeroMass when either pole sums to zero probability.
double preference_log_ratio(const std::map<std::string, double>& logprobs, const TargetLexicon& lexicon);

/// Cosine similarity. Throws DimensionalityMismatch or ZeroVector.
double concept_similarity(const EmbeddingVector& response_vec, const EmbeddingVector& concept_vec);

/// L2 norm of the (IDV, PDI) CDS vector.
double bias_magnitude(double cds_idv, double cds_pdi);

/// probe_type -> model -> mean |final score| over that model's probes of
/// the type. Empty (type, model) cells are absent.
using AblationTable = std::map<ProbeType, std::map<std::string, double>>;

AblationTable ablation_by_probe_type(const ProbeDataset& ds, std::span<const DimensionScoreSet> score_sets);

}  // namespace cprobe
