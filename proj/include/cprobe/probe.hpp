#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace cprobe {

enum class Dimension { idv, pdi };
enum class ProbeType { vdp, sjp, sap };
enum class Provenance { original, translated, back_translated, reconciled };

inline constexpr Dimension kAllDimensions[] = {Dimension::idv, Dimension::pdi};
inline constexpr ProbeType kAllProbeTypes[] = {ProbeType::vdp, ProbeType::sjp, ProbeType::sap};

std::string_view to_code(Dimension d);
std::string_view to_code(ProbeType t);
std::string_view to_code(Provenance p);
std::optional<Dimension> parse_dimension(std::string_view code);
std::optional<ProbeType> parse_probe_type(std::string_view code);
std::optional<Provenance> parse_provenance(std::string_view code);

struct LocaleVariant {
  std::string language;  // BCP-47 tag
  std::string text;
  Provenance provenance = Provenance::original;
  std::optional<std::string> round_trip_note;

  bool operator==(const LocaleVariant&) const = default;
};

struct Probe {
  std::string id;
  Dimension dimension = Dimension::idv;
  ProbeType probe_type = ProbeType::vdp;
  std::vector<LocaleVariant> variants;
  std::string polarity_note;

  const LocaleVariant* variant(std::string_view language) const;
  bool operator==(const Probe&) const = default;
};

/// Immutable after load; safe to share read-only between workers.
struct ProbeDataset {
  std::string name;
  std::string version;
  std::vector<Probe> probes;

  const Probe* find(std::string_view id) const;
  bool operator==(const ProbeDataset&) const = default;
};

/// Parses a dataset document and enforces every type invariant. The first
/// violation throws with a path-qualified message such as
/// `probes[2].variants[0].text: must be non-empty`.
ProbeDataset parse_dataset(std::string_view text);
ProbeDataset load_dataset(const std::filesystem::path& path);

nlohmann::json to_json(const ProbeDataset& ds);
void save_dataset(const ProbeDataset& ds, const std::filesystem::path& path);

struct BalancePolicy {
  bool require_equal_dimensions = true;
};

struct BalanceReport {
  std::size_t total = 0;
  std::map<Dimension, std::size_t> per_dimension;
  std::map<std::pair<Dimension, ProbeType>, std::size_t> per_cell;
  bool balanced = true;
  std::size_t delta = 0;  // |IDV count - PDI count|
  // Probes carrying a single language variant. Valid, reported as a warning.
  std::vector<std::string> single_language_probes;
};

BalanceReport validate_balance(const ProbeDataset& ds, const BalancePolicy& policy);
nlohmann::json to_json(const BalanceReport& report);

std::vector<Probe> filter_probes(const ProbeDataset& ds,
                                 std::optional<Dimension> dimension = std::nullopt,
                                 std::optional<ProbeType> probe_type = std::nullopt,
                                 std::optional<std::string> language = std::nullopt);

}  // namespace cprobe
