#include "cprobe/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>

#include "cprobe/error.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

using nlohmann::json;

LikertScore::LikertScore(int value) : value_(value) {
  if (value < kMin || value > kMax) {
    throw Error(ErrorCode::out_of_range, "Likert score must be in -2..+2, got " + std::to_string(value));
  }
}

std::optional<LikertScore> LikertScore::from_int(int value) {
  if (value < kMin || value > kMax) return std::nullopt;
  return LikertScore(value);
}

nlohmann::ordered_json to_json(const AnnotationRecord& r) {
  nlohmann::ordered_json j;
  j["response_ref"] = r.response_ref;
  j["annotator_id"] = r.annotator_id;
  j["score"] = r.score.value();
  j["note"] = r.note ? json(*r.note) : json(nullptr);
  j["submitted_at"] = r.submitted_at;
  return j;
}

AnnotationRecord annotation_record_from_json(const json& j) {
  AnnotationRecord r;
  try {
    r.response_ref = j.at("response_ref").get<std::string>();
    r.annotator_id = j.at("annotator_id").get<std::string>();
    r.score = LikertScore(j.at("score").get<int>());
    if (j.contains("note") && !j.at("note").is_null()) r.note = j.at("note").get<std::string>();
    r.submitted_at = j.value("submitted_at", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("annotation record: ") + e.what());
  }
  return r;
}

AnnotationLog::AnnotationLog(std::filesystem::path path) : path_(std::move(path)) {
  for (const auto& j : read_jsonl(path_)) records_.push_back(annotation_record_from_json(j));
  appender_ = std::make_unique<JsonlAppender>(path_);
}

AnnotationLog::~AnnotationLog() = default;

void AnnotationLog::append(const AnnotationRecord& r) {
  std::unique_lock lock(mutex_);
  appender_->append(to_json(r).dump());
  records_.push_back(r);
}

std::vector<AnnotationRecord> AnnotationLog::snapshot() const {
  std::shared_lock lock(mutex_);
  return records_;
}

std::size_t AnnotationLog::size() const {
  std::shared_lock lock(mutex_);
  return records_.size();
}

std::map<std::string, AnnotationRecord> latest_per_annotator(std::span<const AnnotationRecord> records) {
  std::map<std::string, AnnotationRecord> latest;
  for (const auto& r : records) latest.insert_or_assign(r.annotator_id, r);
  return latest;
}

double aggregate_final_score(std::span<const AnnotationRecord> records) {
  if (records.empty()) throw Error(ErrorCode::empty_input, "no annotation records to aggregate");
  const std::string& ref = records.front().response_ref;
  for (const auto& r : records) {
    if (r.response_ref != ref) {
      throw Error(ErrorCode::precondition, "records span several responses: " + ref + ", " + r.response_ref);
    }
  }
  auto latest = latest_per_annotator(records);
  double sum = 0.0;
  for (const auto& [_, r] : latest) sum += r.score.value();
  return sum / static_cast<double>(latest.size());
}

FleissKappaResult fleiss_kappa(std::span<const CategoryCounts> matrix) {
  if (matrix.empty()) throw Error(ErrorCode::empty_input, "kappa needs at least one item");
  long n = 0;
  for (int c : matrix.front()) n += c;
  for (std::size_t i = 0; i < matrix.size(); ++i) {
    long row = 0;
    for (int c : matrix[i]) {
      if (c < 0) throw Error(ErrorCode::precondition, "negative count in kappa matrix");
      row += c;
    }
    if (row != n) {
      throw Error(ErrorCode::ragged_matrix, "item " + std::to_string(i) + " has " + std::to_string(row) +
                                                " ratings, expected " + std::to_string(n));
    }
  }
  if (n < 2) throw Error(ErrorCode::too_few_raters, "kappa needs at least 2 raters per item");

  const double items = static_cast<double>(matrix.size());
  const double raters = static_cast<double>(n);
  std::array<double, LikertScore::kCategories> column{};
  double p_bar = 0.0;
  for (const auto& row : matrix) {
    double agree = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) {
      agree += static_cast<double>(row[j]) * (row[j] - 1);
      column[j] += row[j];
    }
    p_bar += agree / (raters * (raters - 1.0));
  }
  p_bar /= items;

  double p_e = 0.0;
  std::array<double, LikertScore::kCategories> share{};
  for (std::size_t j = 0; j < column.size(); ++j) {
    share[j] = column[j] / (items * raters);
    p_e += share[j] * share[j];
  }

  FleissKappaResult r;
  r.n_items = matrix.size();
  r.n_raters = static_cast<std::size_t>(n);
  r.observed_agreement = p_bar;
  r.expected_agreement = p_e;
  if (p_e >= 1.0 - 1e-15) {
    r.degenerate = true;
    r.kappa = std::numeric_limits<double>::quiet_NaN();
  } else {
    r.kappa = (p_bar - p_e) / (1.0 - p_e);
  }
  for (std::size_t j = 0; j < column.size(); ++j) {
    double p = share[j];
    if (p <= 0.0 || p >= 1.0) continue;
    double disagree = 0.0;
    for (const auto& row : matrix) disagree += static_cast<double>(row[j]) * (n - row[j]);
    r.per_category_agreement[static_cast<int>(j) + LikertScore::kMin] =
        1.0 - disagree / (items * raters * (raters - 1.0) * p * (1.0 - p));
  }
  return r;
}

json to_json(const FleissKappaResult& r) {
  json per = json::object();
  for (const auto& [cat, k] : r.per_category_agreement) per[std::to_string(cat)] = k;
  json j = {{"observed_agreement", r.observed_agreement},
            {"expected_agreement", r.expected_agreement},
            {"per_category_agreement", per},
            {"n_items", r.n_items},
            {"n_raters", r.n_raters},
            {"degenerate", r.degenerate}};
  j["kappa"] = r.degenerate ? json(nullptr) : json(r.kappa);
  return j;
}

std::optional<std::vector<CategoryCounts>> kappa_matrix_from_records(std::span<const AnnotationRecord> records) {
  std::map<std::string, std::map<std::string, int>> by_item;  // item -> annotator -> latest score
  for (const auto& r : records) by_item[r.response_ref][r.annotator_id] = r.score.value();
  std::size_t max_raters = 0;
  for (const auto& [_, raters] : by_item) max_raters = std::max(max_raters, raters.size());
  if (max_raters < 2) return std::nullopt;
  std::vector<CategoryCounts> matrix;
  for (const auto& [_, raters] : by_item) {
    if (raters.size() != max_raters) continue;
    CategoryCounts row{};
    for (const auto& [__, score] : raters) ++row[static_cast<std::size_t>(score - LikertScore::kMin)];
    matrix.push_back(row);
  }
  return matrix;
}

std::vector<DimensionScoreSet> build_score_sets(const ProbeDataset& ds, std::span<const ModelResponse> responses,
                                                std::span<const AnnotationRecord> records,
                                                const ScoreSetOptions& options) {
  std::map<std::string, std::vector<AnnotationRecord>> by_ref;
  for (const auto& r : records) by_ref[r.response_ref].push_back(r);

  // model -> probe -> aggregated response scores
  std::map<std::string, std::map<std::string, std::vector<double>>> per_probe;
  std::set<std::string> incomplete;
  for (const auto& resp : responses) {
    if (!ds.find(resp.probe_id)) {
      throw Error(ErrorCode::invariant, "response references unknown probe '" + resp.probe_id + "'",
                  {resp.probe_id});
    }
    per_probe[resp.model_id];  // every model gets its score sets, even if empty
    auto it = by_ref.find(resp.response_id);
    std::size_t annotators = it == by_ref.end() ? 0 : latest_per_annotator(it->second).size();
    if (annotators < options.min_annotations) {
      if (!options.allow_partial) {
        incomplete.insert(resp.probe_id);
        continue;
      }
      if (annotators == 0) continue;
    }
    per_probe[resp.model_id][resp.probe_id].push_back(aggregate_final_score(it->second));
  }
  if (!incomplete.empty()) {
    std::vector<std::string> ids(incomplete.begin(), incomplete.end());
    std::string list;
    for (const auto& id : ids) list += (list.empty() ? "" : ", ") + id;
    throw Error(ErrorCode::incomplete_annotation,
                "responses below " + std::to_string(options.min_annotations) + " annotations for probes: " + list,
                ids);
  }

  std::vector<DimensionScoreSet> out;
  for (const auto& [model, probes] : per_probe) {
    for (Dimension d : kAllDimensions) {
      DimensionScoreSet set{model, d, {}};
      for (const auto& probe : ds.probes) {
        if (probe.dimension != d) continue;
        auto it = probes.find(probe.id);
        if (it == probes.end()) continue;
        double sum = 0.0;
        for (double s : it->second) sum += s;
        set.scores.emplace_back(probe.id, sum / static_cast<double>(it->second.size()));
      }
      out.push_back(std::move(set));
    }
  }
  return out;
}

LikertScore lexicon_auto_score(const ModelResponse& response, const TargetLexicon& lexicon) {
  lexicon.validate();
  PoleCounts c = count_poles(response.text, lexicon);
  long a = static_cast<long>(c.pole_a);
  long b = static_cast<long>(c.pole_b);
  long total = a + b;
  if (total == 0) return LikertScore(0);
  long diff = a - b;
  // Integer form of the thresholds on d = diff / total.
  if (5 * diff >= 3 * total) return LikertScore(2);
  if (5 * diff >= 1 * total) return LikertScore(1);
  if (5 * diff <= -3 * total) return LikertScore(-2);
  if (5 * diff <= -1 * total) return LikertScore(-1);
  return LikertScore(0);
}

std::vector<std::string> AnnotationSession::queue_for(const std::string& annotator_id) const {
  auto pos = std::find(roster.begin(), roster.end(), annotator_id);
  if (pos == roster.end()) return {};
  std::vector<std::string> queue;
  for (std::size_t i = 0; i < responses.size(); ++i) {
    if (assigned(annotator_id, responses[i])) queue.push_back(responses[i]);
  }
  std::mt19937_64 rng(presentation_order_seed ^ fnv1a64(annotator_id));
  std::shuffle(queue.begin(), queue.end(), rng);
  return queue;
}

bool AnnotationSession::assigned(const std::string& annotator_id, const std::string& response_id) const {
  auto pos = std::find(roster.begin(), roster.end(), annotator_id);
  if (pos == roster.end()) return false;
  auto item = std::find(responses.begin(), responses.end(), response_id);
  if (item == responses.end()) return false;
  if (!raters_per_item || *raters_per_item >= roster.size()) return true;
  std::size_t a = static_cast<std::size_t>(pos - roster.begin());
  std::size_t i = static_cast<std::size_t>(item - responses.begin());
  std::size_t offset = (a + roster.size() - i % roster.size()) % roster.size();
  return offset < *raters_per_item;
}

}  // namespace cprobe
