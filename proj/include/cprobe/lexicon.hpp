#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "cprobe/probe.hpp"

namespace cprobe {

/// Two disjoint keyword sets naming the poles of one dimension. Pole A is the
/// positive end of the Likert scale (individualist for IDV, high power
/// distance for PDI); pole B is the negative end.
struct TargetLexicon {
  std::string label;
  std::set<std::string> pole_a;
  std::set<std::string> pole_b;

  /// Throws EmptyLexicon if a pole is empty, InvariantError if they overlap.
  void validate() const;

  TargetLexicon swapped() const;
};

using LexiconSet = std::map<Dimension, TargetLexicon>;

/// Loads `{"IDV": {"label", "pole_a": [...], "pole_b": [...]}, "PDI": {...}}`.
LexiconSet load_lexicons(const std::filesystem::path& path);

/// Counts occurrences of `keyword` in `text`. ASCII keywords match
/// case-insensitively on word boundaries; keywords containing non-ASCII
/// bytes (e.g. Han characters) match as plain substrings.
std::size_t count_keyword(std::string_view text, std::string_view keyword);

struct PoleCounts {
  std::size_t pole_a = 0;
  std::size_t pole_b = 0;
};

PoleCounts count_poles(std::string_view text, const TargetLexicon& lexicon);

}  // namespace cprobe
