#include "cprobe/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "cprobe/error.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

using nlohmann::json;

namespace {

std::string dim_key(Dimension d) { return std::string(to_code(d)); }

Dimension dim_from_key(const std::string& k) {
  auto d = parse_dimension(k);
  if (!d) throw Error(ErrorCode::schema, "report: unknown dimension '" + k + "'");
  return *d;
}

json ttest_json(const PairwiseTTest& t) {
  const TTestResult& r = t.result;
  json j = {{"model_w", t.model_w},
            {"model_e", t.model_e},
            {"degrees_of_freedom", r.degrees_of_freedom},
            {"p_two_tailed", r.p_two_tailed},
            {"mean_w", r.mean_w},
            {"mean_e", r.mean_e},
            {"variance_w", r.variance_w},
            {"variance_e", r.variance_e},
            {"n_w", r.n_w},
            {"n_e", r.n_e},
            {"degenerate", r.degenerate}};
  // Infinite t is only possible in the degenerate case; keep its sign.
  if (std::isfinite(r.t_statistic)) {
    j["t_statistic"] = r.t_statistic;
  } else {
    j["t_statistic"] = r.t_statistic > 0 ? "inf" : "-inf";
  }
  return j;
}

PairwiseTTest ttest_from_json(const json& j) {
  PairwiseTTest t;
  t.model_w = j.at("model_w").get<std::string>();
  t.model_e = j.at("model_e").get<std::string>();
  TTestResult& r = t.result;
  const json& ts = j.at("t_statistic");
  if (ts.is_string()) {
    r.t_statistic = ts.get<std::string>() == "inf" ? INFINITY : -INFINITY;
  } else {
    r.t_statistic = ts.get<double>();
  }
  r.degrees_of_freedom = j.at("degrees_of_freedom").get<double>();
  r.p_two_tailed = j.at("p_two_tailed").get<double>();
  r.mean_w = j.at("mean_w").get<double>();
  r.mean_e = j.at("mean_e").get<double>();
  r.variance_w = j.at("variance_w").get<double>();
  r.variance_e = j.at("variance_e").get<double>();
  r.n_w = j.at("n_w").get<std::size_t>();
  r.n_e = j.at("n_e").get<std::size_t>();
  r.degenerate = j.at("degenerate").get<bool>();
  return t;
}

json kappa_json(const std::optional<FleissKappaResult>& k) {
  if (!k) return {{"status", "insufficient_data"}};
  json j = to_json(*k);
  j["status"] = "ok";
  return j;
}

std::optional<FleissKappaResult> kappa_from_json(const json& j) {
  if (j.at("status").get<std::string>() != "ok") return std::nullopt;
  FleissKappaResult k;
  k.degenerate = j.at("degenerate").get<bool>();
  k.kappa = j.at("kappa").is_null() ? NAN : j.at("kappa").get<double>();
  k.observed_agreement = j.at("observed_agreement").get<double>();
  k.expected_agreement = j.at("expected_agreement").get<double>();
  k.n_items = j.at("n_items").get<std::size_t>();
  k.n_raters = j.at("n_raters").get<std::size_t>();
  for (auto it = j.at("per_category_agreement").begin(); it != j.at("per_category_agreement").end(); ++it) {
    k.per_category_agreement[std::stoi(it.key())] = it->get<double>();
  }
  return k;
}

std::string fixed(double v, int digits = 2) {
  if (std::isnan(v)) return "n/a";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  if (std::string(buf).find_first_not_of("-0.") == std::string::npos && buf[0] == '-') return buf + 1;
  return buf;
}

std::string format_p(double p) {
  if (p < 0.001) return "< 0.001";
  return fixed(p, 3);
}

std::string type_label(ProbeType t) {
  switch (t) {
    case ProbeType::vdp: return "Value-Dilemma (VDP)";
    case ProbeType::sjp: return "Scenario-Judgment (SJP)";
    case ProbeType::sap: return "Stereotype-Association (SAP)";
  }
  return "?";
}

}  // namespace

json to_json(const CulturalReport& r) {
  json anchors = json::array();
  for (const auto& a : r.anchors) {
    anchors.push_back({{"country", a.country},
                       {"dimension", dim_key(a.dimension)},
                       {"raw_score", a.raw_score},
                       {"normalized", a.normalized}});
  }
  json models = json::object();
  for (const auto& [id, m] : r.models) {
    json dims = json::object();
    for (const auto& [d, s] : m.dimensions) {
      dims[dim_key(d)] = {{"cds", s.cds}, {"n_probes", s.n_probes}, {"cai", s.cai}};
    }
    models[id] = {{"dimensions", dims},
                  {"bias_magnitude", m.bias_magnitude ? json(*m.bias_magnitude) : json(nullptr)}};
  }
  json ttests = json::object();
  for (const auto& [d, list] : r.t_tests) {
    json arr = json::array();
    for (const auto& t : list) arr.push_back(ttest_json(t));
    ttests[dim_key(d)] = arr;
  }
  json kappa_dims = json::object();
  for (const auto& [d, k] : r.kappa.by_dimension) kappa_dims[dim_key(d)] = kappa_json(k);
  json ablation = json::object();
  for (const auto& [t, row] : r.ablation) ablation[std::string(to_code(t))] = row;
  json pref = json::object();
  for (const auto& [model, dims] : r.preference) {
    for (const auto& [d, cell] : dims) {
      pref[model][dim_key(d)] = {{"mean_log_ratio", cell.mean_log_ratio},
                                 {"n_probes", cell.n_probes},
                                 {"first_token_only", cell.first_token_only}};
    }
  }
  json sim = json::object();
  for (const auto& [model, dims] : r.similarity) {
    for (const auto& [d, concepts] : dims) sim[model][dim_key(d)] = concepts;
  }
  return {{"run_id", r.run_id},
          {"manifest_digest", r.manifest_digest},
          {"dataset", {{"name", r.dataset_name}, {"version", r.dataset_version}, {"digest", r.dataset_digest}}},
          {"hofstede_normalization", "linear: raw/100*4-2"},
          {"anchors", anchors},
          {"models", models},
          {"t_tests", ttests},
          {"kappa", {{"pooled", kappa_json(r.kappa.pooled)}, {"by_dimension", kappa_dims}}},
          {"ablation_mean_abs_score", ablation},
          {"preference", pref},
          {"similarity", sim},
          {"annotation",
           {{"n_responses", r.n_responses},
            {"n_records", r.n_annotation_records},
            {"min_annotations", r.min_annotations},
            {"allow_partial", r.allow_partial}}},
          {"notes", r.notes}};
}

CulturalReport cultural_report_from_json(const json& j) {
  CulturalReport r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.manifest_digest = j.at("manifest_digest").get<std::string>();
    r.dataset_name = j.at("dataset").at("name").get<std::string>();
    r.dataset_version = j.at("dataset").at("version").get<std::string>();
    r.dataset_digest = j.at("dataset").at("digest").get<std::string>();
    for (const auto& a : j.at("anchors")) {
      r.anchors.push_back({a.at("country").get<std::string>(), dim_from_key(a.at("dimension").get<std::string>()),
                           a.at("raw_score").get<double>(), a.at("normalized").get<double>()});
    }
    for (auto it = j.at("models").begin(); it != j.at("models").end(); ++it) {
      ModelSummary m;
      for (auto dit = it->at("dimensions").begin(); dit != it->at("dimensions").end(); ++dit) {
        DimensionSummary s;
        s.cds = dit->at("cds").get<double>();
        s.n_probes = dit->at("n_probes").get<std::size_t>();
        s.cai = dit->at("cai").get<std::map<std::string, double>>();
        m.dimensions[dim_from_key(dit.key())] = s;
      }
      if (!it->at("bias_magnitude").is_null()) m.bias_magnitude = it->at("bias_magnitude").get<double>();
      r.models[it.key()] = m;
    }
    for (auto it = j.at("t_tests").begin(); it != j.at("t_tests").end(); ++it) {
      for (const auto& t : *it) r.t_tests[dim_from_key(it.key())].push_back(ttest_from_json(t));
    }
    r.kappa.pooled = kappa_from_json(j.at("kappa").at("pooled"));
    for (auto it = j.at("kappa").at("by_dimension").begin(); it != j.at("kappa").at("by_dimension").end(); ++it) {
      r.kappa.by_dimension[dim_from_key(it.key())] = kappa_from_json(*it);
    }
    for (auto it = j.at("ablation_mean_abs_score").begin(); it != j.at("ablation_mean_abs_score").end(); ++it) {
      auto t = parse_probe_type(it.key());
      if (!t) throw Error(ErrorCode::schema, "report: unknown probe type '" + it.key() + "'");
      r.ablation[*t] = it->get<std::map<std::string, double>>();
    }
    for (auto mit = j.at("preference").begin(); mit != j.at("preference").end(); ++mit) {
      for (auto dit = mit->begin(); dit != mit->end(); ++dit) {
        PreferenceCell c;
        c.mean_log_ratio = dit->at("mean_log_ratio").get<double>();
        c.n_probes = dit->at("n_probes").get<std::size_t>();
        c.first_token_only = dit->at("first_token_only").get<std::vector<std::string>>();
        r.preference[mit.key()][dim_from_key(dit.key())] = c;
      }
    }
    for (auto mit = j.at("similarity").begin(); mit != j.at("similarity").end(); ++mit) {
      for (auto dit = mit->begin(); dit != mit->end(); ++dit) {
        r.similarity[mit.key()][dim_from_key(dit.key())] = dit->get<std::map<std::string, double>>();
      }
    }
    const json& ann = j.at("annotation");
    r.n_responses = ann.at("n_responses").get<std::size_t>();
    r.n_annotation_records = ann.at("n_records").get<std::size_t>();
    r.min_annotations = ann.at("min_annotations").get<std::size_t>();
    r.allow_partial = ann.at("allow_partial").get<bool>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("report.json: ") + e.what());
  }
  return r;
}

std::string serialize_report(const CulturalReport& r) {
  return canonical_dump(to_json(r)) + "\n";
}

std::string render_markdown(const CulturalReport& r) {
  std::ostringstream md;
  md << "# Cultural dimension report: " << r.run_id << "\n\n";
  md << "- Dataset: " << r.dataset_name << " " << r.dataset_version << " (sha256 " << r.dataset_digest.substr(0, 12)
     << ")\n";
  md << "- Manifest digest: " << r.manifest_digest << "\n";
  md << "- Responses: " << r.n_responses << ", annotation records: " << r.n_annotation_records
     << ", minimum annotations per response: " << r.min_annotations << (r.allow_partial ? " (partial allowed)" : "")
     << "\n\n";

  std::vector<std::string> countries;
  for (const auto& a : r.anchors) {
    if (std::find(countries.begin(), countries.end(), a.country) == countries.end()) countries.push_back(a.country);
  }

  md << "## Cultural Dimension Scores and Alignment\n\n";
  md << "| Dimension |";
  for (const auto& [id, _] : r.models) md << " CDS " << id << " |";
  for (const auto& c : countries) md << " CAI vs " << c << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < r.models.size() + countries.size(); ++i) md << "---|";
  md << "\n";
  for (Dimension d : kAllDimensions) {
    md << "| " << to_code(d) << " |";
    for (const auto& [id, m] : r.models) {
      auto it = m.dimensions.find(d);
      md << " " << (it == m.dimensions.end() ? "n/a" : fixed(it->second.cds)) << " |";
    }
    for (const auto& c : countries) {
      md << " ";
      bool first = true;
      for (const auto& [id, m] : r.models) {
        auto it = m.dimensions.find(d);
        std::string v = "n/a";
        if (it != m.dimensions.end()) {
          auto cit = it->second.cai.find(c);
          if (cit != it->second.cai.end()) v = fixed(cit->second);
        }
        md << (first ? "" : " / ") << v;
        first = false;
      }
      md << " |";
    }
    md << "\n";
  }
  md << "\nCAI cells list models in column order. Hofstede anchors are normalized linearly (raw/100*4-2):";
  for (std::size_t i = 0; i < r.anchors.size(); ++i) {
    const auto& a = r.anchors[i];
    md << (i ? "; " : " ") << a.country << " " << to_code(a.dimension) << " " << fixed(a.raw_score, 0) << " -> "
       << fixed(a.normalized);
  }
  md << ".\n\n";

  md << "### Bias magnitude\n\n| Model | BiasMag |\n|---|---|\n";
  for (const auto& [id, m] : r.models) {
    md << "| " << id << " | " << (m.bias_magnitude ? fixed(*m.bias_magnitude) : "n/a") << " |\n";
  }
  md << "\n## Welch t-tests\n\n| Dimension | Models | t | df | p (two-tailed) |\n|---|---|---|---|---|\n";
  for (const auto& [d, list] : r.t_tests) {
    for (const auto& t : list) {
      std::string t_cell = fixed(t.result.t_statistic, 3);
      if (t.result.degenerate) t_cell += " (zero variance)";
      md << "| " << to_code(d) << " | " << t.model_w << " vs " << t.model_e << " | " << t_cell << " | " << fixed(t.result.degrees_of_freedom, 1) << " | " << format_p(t.result.p_two_tailed) << " |\n";
    }
  }

  md << "\n## Inter-annotator agreement (Fleiss' kappa)\n\n| Scope | kappa | items | raters |\n|---|---|---|---|\n";
  auto kappa_row = [&md](const std::string& scope, const std::optional<FleissKappaResult>& k) {
    if (!k) {
      md << "| " << scope << " | insufficient data | - | - |\n";
    } else {
      md << "| " << scope << " | " << (k->degenerate ? "undefined" : fixed(k->kappa)) << " | " << k->n_items
         << " | " << k->n_raters << " |\n";
    }
  };
  kappa_row("pooled", r.kappa.pooled);
  for (const auto& [d, k] : r.kappa.by_dimension) kappa_row(std::string(to_code(d)), k);

  md << "\n## Ablation: mean absolute score by probe type\n\n| Probe Type |";
  for (const auto& [id, _] : r.models) md << " Mean Abs. CDS (" << id << ") |";
  md << "\n|---|";
  for (std::size_t i = 0; i < r.models.size(); ++i) md << "---|";
  md << "\n";
  for (ProbeType t : kAllProbeTypes) {
    auto row = r.ablation.find(t);
    if (row == r.ablation.end()) continue;
    md << "| " << type_label(t) << " |";
    for (const auto& [id, _] : r.models) {
      auto it = row->second.find(id);
      md << " " << (it == row->second.end() ? "n/a" : fixed(it->second)) << " |";
    }
    md << "\n";
  }

  if (!r.preference.empty()) {
    md << "\n## Pole preference (log-probability ratio)\n\n| Model | Dimension | mean ln ratio | probes | "
          "first sub-token only |\n|---|---|---|---|---|\n";
    for (const auto& [model, dims] : r.preference) {
      for (const auto& [d, c] : dims) {
        std::string approx;
        for (const auto& w : c.first_token_only) approx += (approx.empty() ? "" : ", ") + w;
        md << "| " << model << " | " << to_code(d) << " | " << fixed(c.mean_log_ratio, 3) << " | " << c.n_probes
           << " | " << (approx.empty() ? "-" : approx) << " |\n";
      }
    }
  }
  if (!r.similarity.empty()) {
    md << "\n## Concept similarity (mean cosine)\n\n| Model | Dimension | Concept | cosine |\n|---|---|---|---|\n";
    for (const auto& [model, dims] : r.similarity) {
      for (const auto& [d, concepts] : dims) {
        for (const auto& [concept_text, v] : concepts) {
          md << "| " << model << " | " << to_code(d) << " | " << concept_text << " | " << fixed(v, 3) << " |\n";
        }
      }
    }
  }
  if (!r.notes.empty()) {
    md << "\n## Notes\n\n";
    for (const auto& n : r.notes) md << "- " << n << "\n";
  }
  return md.str();
}

}  // namespace cprobe
