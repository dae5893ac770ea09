#include "cprobe/lexicon.hpp"

#include <algorithm>
#include <cctype>
#include <iterator>

#include "cprobe/error.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

void TargetLexicon::validate() const {
  if (pole_a.empty() || pole_b.empty()) {
    throw Error(ErrorCode::empty_lexicon, "lexicon '" + label + "' has an empty pole");
  }
  std::vector<std::string> both;
  std::set_intersection(pole_a.begin(), pole_a.end(), pole_b.begin(), pole_b.end(),
                        std::back_inserter(both));
  if (!both.empty()) {
    throw Error(ErrorCode::invariant, "lexicon '" + label + "' poles overlap", both);
  }
}

TargetLexicon TargetLexicon::swapped() const {
  return TargetLexicon{label, pole_b, pole_a};
}

LexiconSet load_lexicons(const std::filesystem::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
  LexiconSet out;
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    auto dim = parse_dimension(it.key());
    if (!dim) throw Error(ErrorCode::schema, path.string() + ": unknown dimension " + it.key());
    TargetLexicon lex;
    try {
      lex.label = it->value("label", it.key());
      lex.pole_a = it->at("pole_a").get<std::set<std::string>>();
      lex.pole_b = it->at("pole_b").get<std::set<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::schema, path.string() + "." + it.key() + ": " + e.what());
    }
    lex.validate();
    out.emplace(*dim, std::move(lex));
  }
  return out;
}

namespace {

bool is_ascii(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return static_cast<unsigned char>(c) < 0x80; });
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

}  // namespace

std::size_t count_keyword(std::string_view text, std::string_view keyword) {
  if (keyword.empty()) return 0;
  std::size_t count = 0;
  if (!is_ascii(keyword)) {
    for (std::size_t pos = text.find(keyword); pos != std::string_view::npos;
         pos = text.find(keyword, pos + keyword.size())) {
      ++count;
    }
    return count;
  }
  std::string hay = lower(text);
  std::string needle = lower(keyword);
  for (std::size_t pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + 1)) {
    bool left_ok = pos == 0 || !is_word_char(hay[pos - 1]);
    std::size_t end = pos + needle.size();
    bool right_ok = end >= hay.size() || !is_word_char(hay[end]);
    if (left_ok && right_ok) {
      ++count;
      pos = end - 1;
    }
  }
  return count;
}

PoleCounts count_poles(std::string_view text, const TargetLexicon& lexicon) {
  PoleCounts c;
  for (const auto& w : lexicon.pole_a) c.pole_a += count_keyword(text, w);
  for (const auto& w : lexicon.pole_b) c.pole_b += count_keyword(text, w);
  return c;
}

}  // namespace cprobe
