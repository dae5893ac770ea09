#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cprobe/annotation.hpp"
#include "cprobe/metrics.hpp"
#include "json.hpp"

namespace cprobe {

struct DimensionSummary {
  double cds = 0.0;
  std::size_t n_probes = 0;
  std::map<std::string, double> cai;  // country -> CAI
};

struct ModelSummary {
  std::map<Dimension, DimensionSummary> dimensions;
  std::optional<double> bias_magnitude;  // needs both dimensions scored
};

struct PairwiseTTest {
  std::string model_w;
  std::string model_e;
  TTestResult result;
};

struct KappaPanel {
  std::optional<FleissKappaResult> pooled;
  std::map<Dimension, std::optional<FleissKappaResult>> by_dimension;
};

struct PreferenceCell {
  double mean_log_ratio = 0.0;
  std::size_t n_probes = 0;
  std::vector<std::string> first_token_only;
};

struct AnchorRow {
  std::string country;
  Dimension dimension = Dimension::idv;
  double raw_score = 0.0;
  double normalized = 0.0;
};

struct CulturalReport {
  std::string run_id;
  std::string manifest_digest;
  std::string dataset_name;
  std::string dataset_version;
  std::string dataset_digest;
  std::vector<AnchorRow> anchors;
  std::map<std::string, ModelSummary> models;
  std::map<Dimension, std::vector<PairwiseTTest>> t_tests;
  KappaPanel kappa;
  AblationTable ablation;
  // model -> dimension -> cell
  std::map<std::string, std::map<Dimension, PreferenceCell>> preference;
  // model -> dimension -> concept -> mean cosine similarity
  std::map<std::string, std::map<Dimension, std::map<std::string, double>>> similarity;
  std::size_t n_responses = 0;
  std::size_t n_annotation_records = 0;
  std::size_t min_annotations = 0;
  bool allow_partial = false;
  std::vector<std::string> notes;
};

nlohmann::json to_json(const CulturalReport& r);
CulturalReport cultural_report_from_json(const nlohmann::json& j);

/// Canonical bytes of the report: sorted keys, reals with six decimals, one
/// trailing newline.
std::string serialize_report(const CulturalReport& r);

/// Markdown rendering with a CDS/CAI table per dimension, the t-tests and the
/// probe-type ablation.
std::string render_markdown(const CulturalReport& r);

}  // namespace cprobe
