#include "cprobe/manifest.hpp"

#include <algorithm>
#include <set>

#include "cprobe/error.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

using nlohmann::json;
namespace fs = std::filesystem;

const ModelProfile* RunManifest::model(const std::string& id) const {
  for (const auto& m : models) {
    if (m.model_id == id) return &m;
  }
  return nullptr;
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

}  // namespace

RunManifest parse_manifest(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::parse, std::string("manifest: ") + e.what());
  }
  RunManifest m;
  m.base_dir = base_dir;
  m.digest = sha256_hex(text);
  try {
    m.run_id = doc.at("run_id").get<std::string>();
    m.created_at = doc.value("created_at", std::string());
    const json& ds = doc.at("dataset");
    m.dataset_path = resolve(base_dir, ds.at("path").get<std::string>());
    if (!ds.contains("digest")) {
      throw Error(ErrorCode::schema, "manifest.dataset.digest is mandatory (see `cprobe validate`)");
    }
    m.dataset_digest = ds.at("digest").get<std::string>();

    std::set<std::string> ids;
    for (const auto& mj : doc.at("models")) {
      ModelProfile p = model_profile_from_json(mj);
      if (p.cache_path && p.cache_path->is_relative()) p.cache_path = base_dir / *p.cache_path;
      if (!ids.insert(p.model_id).second) {
        throw Error(ErrorCode::invariant, "manifest: duplicate model_id '" + p.model_id + "'");
      }
      m.models.push_back(std::move(p));
    }
    if (m.models.empty()) throw Error(ErrorCode::schema, "manifest.models: at least one model required");
    if (doc.contains("query_params")) m.params = query_params_from_json(doc.at("query_params"));
    if (doc.contains("languages")) m.languages = doc.at("languages").get<std::vector<std::string>>();
    if (m.languages.empty()) throw Error(ErrorCode::schema, "manifest.languages: must not be empty");
    m.samples = doc.value("samples", 1);
    if (m.samples < 1) throw Error(ErrorCode::schema, "manifest.samples: must be >= 1");

    if (!doc.contains("seeds") || !doc.at("seeds").contains("session")) {
      throw Error(ErrorCode::schema, "manifest.seeds.session is mandatory");
    }
    m.session_seed = doc.at("seeds").at("session").get<std::uint64_t>();

    const json& ann = doc.at("annotation");
    m.annotation.roster = ann.at("roster").get<std::vector<std::string>>();
    if (m.annotation.roster.empty()) throw Error(ErrorCode::schema, "manifest.annotation.roster: must not be empty");
    if (std::set<std::string>(m.annotation.roster.begin(), m.annotation.roster.end()).size() !=
        m.annotation.roster.size()) {
      throw Error(ErrorCode::invariant, "manifest.annotation.roster: duplicate annotator id");
    }
    if (ann.contains("tokens")) m.annotation.tokens = ann.at("tokens").get<std::map<std::string, std::string>>();
    std::set<std::string> tokens;
    for (const auto& [who, tok] : m.annotation.tokens) {
      if (std::find(m.annotation.roster.begin(), m.annotation.roster.end(), who) == m.annotation.roster.end()) {
        throw Error(ErrorCode::invariant, "manifest.annotation.tokens: '" + who + "' is not on the roster");
      }
      if (tok.empty() || !tokens.insert(tok).second) {
        throw Error(ErrorCode::invariant, "manifest.annotation.tokens: tokens must be non-empty and unique");
      }
    }
    m.annotation.min_annotations = ann.value("min_annotations", std::size_t{3});
    if (m.annotation.min_annotations < 1) {
      throw Error(ErrorCode::schema, "manifest.annotation.min_annotations: must be >= 1");
    }
    if (ann.contains("raters_per_item") && !ann.at("raters_per_item").is_null()) {
      m.annotation.raters_per_item = ann.at("raters_per_item").get<std::size_t>();
      if (*m.annotation.raters_per_item < 1) {
        throw Error(ErrorCode::schema, "manifest.annotation.raters_per_item: must be >= 1");
      }
    }

    fs::path data = default_data_dir();
    m.anchors_path = doc.contains("anchors_path") ? resolve(base_dir, doc.at("anchors_path").get<std::string>())
                                                  : data / "hofstede_anchors.json";
    m.lexicons_path = doc.contains("lexicons_path") ? resolve(base_dir, doc.at("lexicons_path").get<std::string>())
                                                    : data / "lexicons.json";
    m.template_bank_path = doc.contains("template_bank_path")
                               ? resolve(base_dir, doc.at("template_bank_path").get<std::string>())
                               : data / "persona_templates.json";

    if (doc.contains("panels")) {
      const json& pj = doc.at("panels");
      m.panels.preference = pj.value("preference", false);
      if (pj.contains("similarity_concepts")) {
        for (auto it = pj.at("similarity_concepts").begin(); it != pj.at("similarity_concepts").end(); ++it) {
          auto d = parse_dimension(it.key());
          if (!d) throw Error(ErrorCode::schema, "manifest.panels.similarity_concepts: unknown dimension " + it.key());
          m.panels.similarity_concepts[*d] = it->get<std::vector<std::string>>();
        }
      }
    }
    if (doc.contains("parallelism")) m.parallelism = doc.at("parallelism").get<int>();
    m.replay_only = doc.value("replay_only", false);
    if (doc.contains("retry")) {
      m.retry.attempts = doc.at("retry").value("attempts", m.retry.attempts);
      m.retry.backoff_ms = doc.at("retry").value("backoff_ms", m.retry.backoff_ms);
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::schema, std::string("manifest: ") + e.what());
  }
  return m;
}

RunManifest load_manifest(const fs::path& path) {
  return parse_manifest(read_text_file(path), fs::absolute(path).parent_path());
}

std::string file_digest(const fs::path& path) {
  return sha256_hex(read_text_file(path));
}

RunStore RunStore::open(const fs::path& run_dir) {
  RunStore s;
  s.root = run_dir;
  fs::path manifest = run_dir / "manifest.json";
  if (!fs::exists(manifest)) throw Error(ErrorCode::io, "no manifest.json in " + run_dir.string());
  s.manifest = load_manifest(manifest);
  return s;
}

ProbeDataset RunStore::load_bound_dataset() const {
  std::string actual = file_digest(manifest.dataset_path);
  if (actual != manifest.dataset_digest) {
    throw Error(ErrorCode::digest_mismatch, "dataset " + manifest.dataset_path.string() + " hashes to " + actual +
                                                " but the manifest is bound to " + manifest.dataset_digest);
  }
  return load_dataset(manifest.dataset_path);
}

}  // namespace cprobe
