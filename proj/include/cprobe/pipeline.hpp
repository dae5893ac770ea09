#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cprobe/error.hpp"
#include "cprobe/gateway.hpp"
#include "cprobe/manifest.hpp"
#include "cprobe/report.hpp"

namespace cprobe {

struct ValidateOptions {
  bool strict = false;
};

/// Prints the balance report (JSON) to `out`. Exit status: 0 ok, 1 on schema
/// or invariant errors, or on imbalance with `strict`.
int cmd_validate(const std::filesystem::path& dataset, const ValidateOptions& options, std::ostream& out,
                 std::ostream& err);

struct RunOptions {
  std::optional<int> parallelism;   // flag; overrides env and manifest
  std::optional<bool> replay_only;  // flag; overrides env and manifest
  // Test hook: replaces how providers are built.
  Gateway::ProviderFactory provider_factory;
};

struct RunFailure {
  std::string model_id;
  std::string probe_id;
  std::string language;
  ErrorCode code;
  std::string message;
};

struct RunSummary {
  std::size_t tasks = 0;
  std::size_t new_responses = 0;
  std::size_t cached_responses = 0;
  std::size_t provider_calls = 0;
  std::size_t skipped_missing_variant = 0;
  std::vector<RunFailure> failures;
};

/// Queries every (model, probe, language, sample) through the gateway with
/// bounded parallelism, recording into the run's responses.jsonl. Completed
/// responses are kept when others fail.
RunSummary run_queries(const std::filesystem::path& manifest_path, const RunOptions& options, std::ostream& log);
int cmd_run(const std::filesystem::path& manifest_path, const RunOptions& options, std::ostream& out,
            std::ostream& err);

/// Responses in the store matching the manifest's models, parameters,
/// languages and sample count, in log order.
std::vector<ModelResponse> run_responses(const RunStore& store, const ReplayCache& cache);

/// Writes one lexicon-scored annotation per response not yet scored by
/// `annotator_id`. Returns the number of records appended.
std::size_t auto_annotate(const std::filesystem::path& run_dir, const std::string& annotator_id);

/// Appends records from a line-delimited annotation export. Records must
/// reference responses present in the run. Returns the number imported.
std::size_t import_annotations(const std::filesystem::path& run_dir, const std::filesystem::path& file);

struct AnalyzeOptions {
  bool allow_partial = false;
  std::optional<std::size_t> min_annotations;  // overrides the manifest
};

/// Computes the full report from store contents only. Deterministic and free
/// of side effects.
CulturalReport analyze_store(const RunStore& store, const AnalyzeOptions& options);

enum class ReportFormat { json, md, both };

int cmd_analyze(const std::filesystem::path& run_dir, const AnalyzeOptions& options, ReportFormat format,
                std::ostream& out, std::ostream& err);

/// Re-renders report.md from an existing report.json.
int cmd_report(const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err);

}  // namespace cprobe
