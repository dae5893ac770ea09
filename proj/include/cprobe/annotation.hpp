#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "cprobe/gateway.hpp"
#include "cprobe/lexicon.hpp"
#include "cprobe/probe.hpp"
#include "json.hpp"

namespace cprobe {

/// A point on the five-point scale. For IDV, -2 is strongly collectivistic
/// and +2 strongly individualistic; for PDI, -2 is a very low and +2 a very
/// high power-distance preference.
class LikertScore {
 public:
  static constexpr int kMin = -2;
  static constexpr int kMax = 2;
  static constexpr std::size_t kCategories = 5;

  /// Throws OutOfRange for values outside {-2,...,+2}.
  explicit LikertScore(int value);
  static std::optional<LikertScore> from_int(int value);

  int value() const { return value_; }
  std::size_t category() const { return static_cast<std::size_t>(value_ - kMin); }

  auto operator<=>(const LikertScore&) const = default;

 private:
  int value_;
};

struct AnnotationRecord {
  std::string response_ref;  // ModelResponse::response_id
  std::string annotator_id;
  LikertScore score{0};
  std::optional<std::string> note;
  std::string submitted_at;
};

/// Field order is fixed: response_ref, annotator_id, score, note, submitted_at.
nlohmann::ordered_json to_json(const AnnotationRecord& r);
AnnotationRecord annotation_record_from_json(const nlohmann::json& j);

/// Append-only annotation log (annotations.jsonl). Appends are serialized and
/// durable on return; snapshots see a consistent prefix.
class AnnotationLog {
 public:
  explicit AnnotationLog(std::filesystem::path path);
  ~AnnotationLog();

  void append(const AnnotationRecord& r);
  std::vector<AnnotationRecord> snapshot() const;
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::vector<AnnotationRecord> records_;
  std::unique_ptr<JsonlAppender> appender_;
};

/// Latest record per annotator (later entries supersede earlier ones), for
/// the records matching one response. Keyed by annotator id.
std::map<std::string, AnnotationRecord> latest_per_annotator(std::span<const AnnotationRecord> records);

/// Mean of the latest-per-annotator scores. All records must share one
/// response_ref. Throws EmptyInput on an empty span.
double aggregate_final_score(std::span<const AnnotationRecord> records);

using CategoryCounts = std::array<int, LikertScore::kCategories>;

struct FleissKappaResult {
  double kappa = 0.0;
  double observed_agreement = 0.0;  // P-bar
  double expected_agreement = 0.0;  // P-bar_e
  // Per-category kappa, keyed by Likert value; omitted for categories that
  // were never or always chosen.
  std::map<int, double> per_category_agreement;
  std::size_t n_items = 0;
  std::size_t n_raters = 0;
  // Set when P-bar_e = 1 (every rating fell in one category). Kappa is
  // undefined there and reported as NaN.
  bool degenerate = false;
};

/// Classic Fleiss' kappa over nominal Likert categories. Rows are items,
/// columns the five categories, cells the number of raters choosing it.
FleissKappaResult fleiss_kappa(std::span<const CategoryCounts> matrix);

nlohmann::json to_json(const FleissKappaResult& r);

/// Builds the kappa input from raw records: latest score per (item,
/// annotator); keeps the items rated by the largest number of annotators seen
/// on any item. Returns nullopt when no item has two or more raters.
std::optional<std::vector<CategoryCounts>> kappa_matrix_from_records(std::span<const AnnotationRecord> records);

struct DimensionScoreSet {
  std::string model_id;
  Dimension dimension = Dimension::idv;
  std::vector<std::pair<std::string, double>> scores;  // (probe_id, final score), dataset order
};

struct ScoreSetOptions {
  std::size_t min_annotations = 3;
  bool allow_partial = false;
};

/// One score set per (model, dimension), sorted by model id then dimension.
/// A probe's final score is the mean of its responses' aggregated scores
/// (several languages or samples average together). Without allow_partial,
/// any response with fewer than `min_annotations` distinct annotators raises
/// IncompleteAnnotation naming the probes.
std::vector<DimensionScoreSet> build_score_sets(const ProbeDataset& ds,
                                                std::span<const ModelResponse> responses,
                                                std::span<const AnnotationRecord> records,
                                                const ScoreSetOptions& options);

/// Machine annotator: d = (a - b) / (a + b) over pole keyword counts, mapped
/// to +2 if d >= 0.6, +1 if d >= 0.2, 0 if |d| < 0.2, -1 if d <= -0.2,
/// -2 if d <= -0.6. No keywords scores 0.
LikertScore lexicon_auto_score(const ModelResponse& response, const TargetLexicon& lexicon);

/// Blind annotation session. Each annotator sees the assigned responses in a
/// shuffle seeded by (presentation_order_seed, annotator id).
struct AnnotationSession {
  std::string session_id;
  std::vector<std::string> responses;  // response ids
  std::vector<std::string> roster;
  std::uint64_t presentation_order_seed = 0;
  // When set, each item goes to this many annotators in rotation; otherwise
  // every annotator sees every item.
  std::optional<std::size_t> raters_per_item;

  std::vector<std::string> queue_for(const std::string& annotator_id) const;
  bool assigned(const std::string& annotator_id, const std::string& response_id) const;
};

}  // namespace cprobe
