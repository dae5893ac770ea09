#include "cprobe/probe.hpp"

#include <set>

#include "cprobe/error.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

using nlohmann::json;

std::string_view to_code(Dimension d) {
  return d == Dimension::idv ? "IDV" : "PDI";
}

std::string_view to_code(ProbeType t) {
  switch (t) {
    case ProbeType::vdp: return "VDP";
    case ProbeType::sjp: return "SJP";
    case ProbeType::sap: return "SAP";
  }
  return "?";
}

std::string_view to_code(Provenance p) {
  switch (p) {
    case Provenance::original: return "original";
    case Provenance::translated: return "translated";
    case Provenance::back_translated: return "back_translated";
    case Provenance::reconciled: return "reconciled";
  }
  return "?";
}

std::optional<Dimension> parse_dimension(std::string_view code) {
  if (code == "IDV") return Dimension::idv;
  if (code == "PDI") return Dimension::pdi;
  return std::nullopt;
}

std::optional<ProbeType> parse_probe_type(std::string_view code) {
  if (code == "VDP") return ProbeType::vdp;
  if (code == "SJP") return ProbeType::sjp;
  if (code == "SAP") return ProbeType::sap;
  return std::nullopt;
}

std::optional<Provenance> parse_provenance(std::string_view code) {
  if (code == "original") return Provenance::original;
  if (code == "translated") return Provenance::translated;
  if (code == "back_translated") return Provenance::back_translated;
  if (code == "reconciled") return Provenance::reconciled;
  return std::nullopt;
}

const LocaleVariant* Probe::variant(std::string_view language) const {
  for (const auto& v : variants) {
    if (v.language == language) return &v;
  }
  return nullptr;
}

const Probe* ProbeDataset::find(std::string_view id) const {
  for (const auto& p : probes) {
    if (p.id == id) return &p;
  }
  return nullptr;
}

namespace {

const json& require(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end()) {
    throw Error(ErrorCode::schema, path + "." + key + ": missing field");
  }
  return *it;
}

std::string require_string(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) throw Error(ErrorCode::schema, path + "." + key + ": expected string");
  return v.get<std::string>();
}

// BCP-47 shape check: alphanumeric subtags of 1-8 chars separated by '-',
// primary subtag alphabetic.
bool plausible_language_tag(std::string_view tag) {
  if (tag.empty()) return false;
  std::size_t start = 0;
  bool first = true;
  while (start <= tag.size()) {
    std::size_t end = tag.find('-', start);
    if (end == std::string_view::npos) end = tag.size();
    std::string_view sub = tag.substr(start, end - start);
    if (sub.empty() || sub.size() > 8) return false;
    for (char c : sub) {
      bool alpha = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
      bool digit = c >= '0' && c <= '9';
      if (!(alpha || (!first && digit))) return false;
    }
    first = false;
    start = end + 1;
  }
  return true;
}

LocaleVariant parse_variant(const json& v, const std::string& path) {
  if (!v.is_object()) throw Error(ErrorCode::schema, path + ": expected object");
  LocaleVariant out;
  out.language = require_string(v, "language", path);
  if (!plausible_language_tag(out.language)) {
    throw Error(ErrorCode::schema, path + ".language: not a BCP-47 tag: '" + out.language + "'");
  }
  out.text = require_string(v, "text", path);
  std::string prov = require_string(v, "provenance", path);
  auto p = parse_provenance(prov);
  if (!p) throw Error(ErrorCode::schema, path + ".provenance: unknown value '" + prov + "'");
  out.provenance = *p;
  if (auto it = v.find("round_trip_note"); it != v.end() && !it->is_null()) {
    if (!it->is_string()) throw Error(ErrorCode::schema, path + ".round_trip_note: expected string");
    out.round_trip_note = it->get<std::string>();
  }
  if (out.text.empty()) throw Error(ErrorCode::invariant, path + ".text: must be non-empty");
  if (out.provenance == Provenance::reconciled &&
      (!out.round_trip_note || out.round_trip_note->empty())) {
    throw Error(ErrorCode::invariant,
                path + ".round_trip_note: required when provenance is 'reconciled'");
  }
  return out;
}

Probe parse_probe(const json& p, const std::string& path) {
  if (!p.is_object()) throw Error(ErrorCode::schema, path + ": expected object");
  Probe out;
  out.id = require_string(p, "id", path);
  if (out.id.empty()) throw Error(ErrorCode::invariant, path + ".id: must be non-empty");
  std::string dim = require_string(p, "dimension", path);
  auto d = parse_dimension(dim);
  if (!d) throw Error(ErrorCode::schema, path + ".dimension: unknown code '" + dim + "'");
  out.dimension = *d;
  std::string type = require_string(p, "probe_type", path);
  auto t = parse_probe_type(type);
  if (!t) throw Error(ErrorCode::schema, path + ".probe_type: unknown code '" + type + "'");
  out.probe_type = *t;
  out.polarity_note = require_string(p, "polarity_note", path);

  const json& variants = require(p, "variants", path);
  if (!variants.is_array()) throw Error(ErrorCode::schema, path + ".variants: expected array");
  if (variants.empty()) {
    throw Error(ErrorCode::invariant, path + ".variants: probe '" + out.id + "' has no variants",
                {out.id});
  }
  std::set<std::string> languages;
  for (std::size_t i = 0; i < variants.size(); ++i) {
    std::string vpath = path + ".variants[" + std::to_string(i) + "]";
    LocaleVariant v = parse_variant(variants[i], vpath);
    if (!languages.insert(v.language).second) {
      throw Error(ErrorCode::invariant,
                  vpath + ".language: duplicate variant language '" + v.language + "'", {out.id});
    }
    out.variants.push_back(std::move(v));
  }
  return out;
}

}  // namespace

ProbeDataset parse_dataset(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, e.what());
  }
  if (!doc.is_object()) throw Error(ErrorCode::schema, "$: expected object");
  ProbeDataset ds;
  ds.name = require_string(doc, "name", "$");
  ds.version = require_string(doc, "version", "$");
  const json& probes = require(doc, "probes", "$");
  if (!probes.is_array()) throw Error(ErrorCode::schema, "$.probes: expected array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < probes.size(); ++i) {
    std::string path = "$.probes[" + std::to_string(i) + "]";
    Probe p = parse_probe(probes[i], path);
    if (!ids.insert(p.id).second) {
      throw Error(ErrorCode::invariant, path + ".id: duplicate probe id '" + p.id + "'", {p.id});
    }
    ds.probes.push_back(std::move(p));
  }
  return ds;
}

ProbeDataset load_dataset(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::io, e.message());
  }
  try {
    return parse_dataset(text);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.message(), e.subjects());
  }
}

json to_json(const ProbeDataset& ds) {
  json probes = json::array();
  for (const auto& p : ds.probes) {
    json variants = json::array();
    for (const auto& v : p.variants) {
      json jv = {{"language", v.language},
                 {"text", v.text},
                 {"provenance", std::string(to_code(v.provenance))}};
      if (v.round_trip_note) jv["round_trip_note"] = *v.round_trip_note;
      variants.push_back(std::move(jv));
    }
    probes.push_back({{"id", p.id},
                      {"dimension", std::string(to_code(p.dimension))},
                      {"probe_type", std::string(to_code(p.probe_type))},
                      {"variants", std::move(variants)},
                      {"polarity_note", p.polarity_note}});
  }
  return {{"name", ds.name}, {"version", ds.version}, {"probes", std::move(probes)}};
}

void save_dataset(const ProbeDataset& ds, const std::filesystem::path& path) {
  write_text_file_atomic(path, to_json(ds).dump(2) + "\n");
}

BalanceReport validate_balance(const ProbeDataset& ds, const BalancePolicy& policy) {
  BalanceReport r;
  for (Dimension d : kAllDimensions) {
    r.per_dimension[d] = 0;
    for (ProbeType t : kAllProbeTypes) r.per_cell[{d, t}] = 0;
  }
  for (const auto& p : ds.probes) {
    ++r.total;
    ++r.per_dimension[p.dimension];
    ++r.per_cell[{p.dimension, p.probe_type}];
    if (p.variants.size() == 1) r.single_language_probes.push_back(p.id);
  }
  std::size_t idv = r.per_dimension[Dimension::idv];
  std::size_t pdi = r.per_dimension[Dimension::pdi];
  r.delta = idv > pdi ? idv - pdi : pdi - idv;
  r.balanced = !policy.require_equal_dimensions || r.delta == 0;
  return r;
}

json to_json(const BalanceReport& report) {
  json dims = json::object();
  json cells = json::object();
  for (Dimension d : kAllDimensions) {
    dims[std::string(to_code(d))] = report.per_dimension.at(d);
    json row = json::object();
    for (ProbeType t : kAllProbeTypes) row[std::string(to_code(t))] = report.per_cell.at({d, t});
    cells[std::string(to_code(d))] = std::move(row);
  }
  return {{"total", report.total},
          {"per_dimension", std::move(dims)},
          {"per_dimension_type", std::move(cells)},
          {"balanced", report.balanced},
          {"delta", report.delta},
          {"single_language_probes", report.single_language_probes}};
}

std::vector<Probe> filter_probes(const ProbeDataset& ds, std::optional<Dimension> dimension,
                                 std::optional<ProbeType> probe_type,
                                 std::optional<std::string> language) {
  std::vector<Probe> out;
  for (const auto& p : ds.probes) {
    if (dimension && p.dimension != *dimension) continue;
    if (probe_type && p.probe_type != *probe_type) continue;
    if (language && !p.variant(*language)) continue;
    out.push_back(p);
  }
  return out;
}

}  // namespace cprobe
