#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cprobe/gateway.hpp"
#include "cprobe/probe.hpp"

namespace cprobe {

struct AnnotationPolicy {
  std::vector<std::string> roster;
  std::map<std::string, std::string> tokens;  // annotator id -> bearer token
  std::size_t min_annotations = 3;
  std::optional<std::size_t> raters_per_item;
};

struct PanelConfig {
  bool preference = false;
  std::map<Dimension, std::vector<std::string>> similarity_concepts;
};

struct RetryConfig {
  int attempts = 3;
  int backoff_ms = 250;
};

/// Declarative description of one experiment. Relative paths resolve against
/// the directory holding the manifest.
struct RunManifest {
  std::string run_id;
  std::filesystem::path dataset_path;
  std::string dataset_digest;  // sha256 of the dataset file bytes
  std::vector<ModelProfile> models;
  QueryParams params;
  std::vector<std::string> languages{"en"};
  int samples = 1;
  AnnotationPolicy annotation;
  std::uint64_t session_seed = 0;
  std::filesystem::path anchors_path;
  std::filesystem::path lexicons_path;
  std::filesystem::path template_bank_path;
  PanelConfig panels;
  std::optional<int> parallelism;
  bool replay_only = false;
  RetryConfig retry;
  std::string created_at;

  std::string digest;  // sha256 of the manifest file bytes
  std::filesystem::path base_dir;

  const ModelProfile* model(const std::string& id) const;
};

RunManifest parse_manifest(std::string_view text, const std::filesystem::path& base_dir);
RunManifest load_manifest(const std::filesystem::path& path);

std::string file_digest(const std::filesystem::path& path);

/// One directory per run: manifest.json, responses.jsonl, annotations.jsonl,
/// report.json, report.md.
struct RunStore {
  std::filesystem::path root;
  RunManifest manifest;

  static RunStore open(const std::filesystem::path& run_dir);

  std::filesystem::path manifest_path() const { return root / "manifest.json"; }
  std::filesystem::path responses_path() const { return root / "responses.jsonl"; }
  std::filesystem::path annotations_path() const { return root / "annotations.jsonl"; }
  std::filesystem::path report_json_path() const { return root / "report.json"; }
  std::filesystem::path report_md_path() const { return root / "report.md"; }

  /// Throws DigestMismatch unless the dataset file still hashes to the
  /// manifest's digest, then loads it.
  ProbeDataset load_bound_dataset() const;
};

}  // namespace cprobe
