#include "cprobe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <set>
#include <thread>

#include "cprobe/annotation.hpp"
#include "cprobe/error.hpp"
#include "cprobe/lexicon.hpp"
#include "cprobe/metrics.hpp"
#include "cprobe/util.hpp"

namespace cprobe {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::optional<std::string> env(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  return std::string(v);
}

bool truthy(const std::string& v) { return v == "1" || v == "true" || v == "yes"; }

std::vector<std::string> lexicon_targets(const TargetLexicon& lex) {
  std::vector<std::string> out(lex.pole_a.begin(), lex.pole_a.end());
  out.insert(out.end(), lex.pole_b.begin(), lex.pole_b.end());
  return out;
}

std::vector<AnnotationRecord> read_annotations(const fs::path& path) {
  std::vector<AnnotationRecord> out;
  for (const auto& j : read_jsonl(path)) out.push_back(annotation_record_from_json(j));
  return out;
}

}  // namespace

std::vector<ModelResponse> run_responses(const RunStore& store, const ReplayCache& cache) {
  const RunManifest& m = store.manifest;
  const std::string digest = m.params.digest();
  std::vector<ModelResponse> out;
  for (auto& r : cache.responses()) {
    if (!m.model(r.model_id)) continue;
    if (r.params_digest != digest) continue;
    if (std::find(m.languages.begin(), m.languages.end(), r.language) == m.languages.end()) continue;
    if (r.sample >= m.samples) continue;
    out.push_back(std::move(r));
  }
  return out;
}

int cmd_validate(const fs::path& dataset, const ValidateOptions& options, std::ostream& out, std::ostream& err) {
  try {
    ProbeDataset ds = load_dataset(dataset);
    BalanceReport report = validate_balance(ds, BalancePolicy{true});
    json j = to_json(report);
    j["dataset"] = {{"name", ds.name}, {"version", ds.version}, {"digest", file_digest(dataset)}};
    out << j.dump(2) << "\n";
    for (const auto& id : report.single_language_probes) {
      err << "warning: probe '" << id << "' has a single language variant\n";
    }
    if (!report.balanced) {
      err << (options.strict ? "error" : "warning") << ": dimensions are unbalanced (delta " << report.delta
          << ")\n";
      if (options.strict) return 1;
    }
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

RunSummary run_queries(const fs::path& manifest_path, const RunOptions& options, std::ostream& log) {
  RunStore store;
  store.root = fs::absolute(manifest_path).parent_path();
  store.manifest = load_manifest(manifest_path);
  const RunManifest& m = store.manifest;
  ProbeDataset ds = store.load_bound_dataset();
  LexiconSet lexicons = load_lexicons(m.lexicons_path);

  int parallelism = 4;
  if (m.parallelism) parallelism = *m.parallelism;
  if (auto v = env("CPROBE_PARALLELISM")) parallelism = std::stoi(*v);
  if (options.parallelism) parallelism = *options.parallelism;
  parallelism = std::max(1, parallelism);

  bool replay_only = m.replay_only;
  if (auto v = env("CPROBE_REPLAY_ONLY")) replay_only = truthy(*v);
  if (options.replay_only) replay_only = *options.replay_only;

  ReplayCache cache(store.responses_path());
  GatewayOptions gopt;
  gopt.replay_only = replay_only;
  gopt.retry_attempts = m.retry.attempts;
  gopt.backoff_base = std::chrono::milliseconds(m.retry.backoff_ms);
  Gateway gateway(cache, lexicons, m.template_bank_path, gopt);
  if (options.provider_factory) gateway.set_provider_factory(options.provider_factory);

  struct Task {
    const ModelProfile* profile;
    const Probe* probe;
    std::string language;
    int sample;
  };
  RunSummary summary;
  std::vector<Task> tasks;
  for (const auto& profile : m.models) {
    for (const auto& probe : ds.probes) {
      for (const auto& lang : m.languages) {
        if (!probe.variant(lang)) {
          ++summary.skipped_missing_variant;
          continue;
        }
        for (int s = 0; s < m.samples; ++s) tasks.push_back({&profile, &probe, lang, s});
      }
    }
  }
  summary.tasks = tasks.size();

  std::mutex mu;
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> fresh{0}, cached{0};
  const std::string digest = m.params.digest();
  bool want_similarity = !m.panels.similarity_concepts.empty();

  auto fail = [&](const Task& t, const Error& e) {
    std::lock_guard lock(mu);
    summary.failures.push_back({t.profile->model_id, t.probe->id, t.language, e.code(), e.message()});
  };

  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < tasks.size(); i = next.fetch_add(1)) {
      const Task& t = tasks[i];
      ResponseKey key{t.profile->model_id, t.probe->id, t.language, digest, t.sample};
      bool was_cached = cache.find_response(key).has_value();
      try {
        ModelResponse r = gateway.query_model(*t.profile, *t.probe, t.language, m.params, t.sample);
        (was_cached ? cached : fresh).fetch_add(1);
        if (m.panels.preference && t.profile->supports_logprobs && t.probe->probe_type == ProbeType::sap &&
            t.sample == 0) {
          gateway.query_logprobs(*t.profile, render_prompt(*t.probe, t.language, m.params),
                                 lexicon_targets(lexicons.at(t.probe->dimension)), t.probe->id);
        }
        if (want_similarity && t.profile->supports_embeddings) gateway.embed_text(*t.profile, r.text);
      } catch (const Error& e) {
        fail(t, e);
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    int n = std::min<int>(parallelism, static_cast<int>(std::max<std::size_t>(tasks.size(), 1)));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  }

  if (want_similarity) {
    for (const auto& profile : m.models) {
      if (!profile.supports_embeddings) continue;
      for (const auto& [d, concepts] : m.panels.similarity_concepts) {
        for (const auto& c : concepts) {
          try {
            gateway.embed_text(profile, c);
          } catch (const Error& e) {
            summary.failures.push_back({profile.model_id, "", "", e.code(), e.message()});
          }
        }
      }
    }
  }

  summary.new_responses = fresh.load();
  summary.cached_responses = cached.load();
  summary.provider_calls = gateway.provider_calls();
  std::sort(summary.failures.begin(), summary.failures.end(), [](const RunFailure& a, const RunFailure& b) {
    return std::tie(a.model_id, a.probe_id, a.language) < std::tie(b.model_id, b.probe_id, b.language);
  });
  log << "run " << m.run_id << ": " << summary.tasks << " tasks, " << summary.new_responses << " new, "
      << summary.cached_responses << " cached, " << summary.failures.size() << " failed, " << summary.provider_calls
      << " provider calls\n";
  return summary;
}

int cmd_run(const fs::path& manifest_path, const RunOptions& options, std::ostream& out, std::ostream& err) {
  try {
    RunSummary s = run_queries(manifest_path, options, err);
    json failures = json::array();
    int status = 0;
    for (const auto& f : s.failures) {
      failures.push_back({{"model_id", f.model_id},
                          {"probe_id", f.probe_id},
                          {"language", f.language},
                          {"error", std::string(to_string(f.code))},
                          {"message", f.message}});
      status = std::max(status, exit_code_for(f.code));
    }
    out << json{{"tasks", s.tasks},
                {"new_responses", s.new_responses},
                {"cached_responses", s.cached_responses},
                {"provider_calls", s.provider_calls},
                {"skipped_missing_variant", s.skipped_missing_variant},
                {"failures", failures}}
               .dump(2)
        << "\n";
    return status;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

std::size_t auto_annotate(const fs::path& run_dir, const std::string& annotator_id) {
  RunStore store = RunStore::open(run_dir);
  ProbeDataset ds = store.load_bound_dataset();
  LexiconSet lexicons = load_lexicons(store.manifest.lexicons_path);
  ReplayCache cache(store.responses_path(), /*read_only=*/true);
  AnnotationLog log(store.annotations_path());
  std::set<std::string> done;
  for (const auto& r : log.snapshot()) {
    if (r.annotator_id == annotator_id) done.insert(r.response_ref);
  }
  std::size_t appended = 0;
  for (const auto& resp : run_responses(store, cache)) {
    if (done.count(resp.response_id)) continue;
    const Probe* probe = ds.find(resp.probe_id);
    if (!probe) throw Error(ErrorCode::invariant, "response for unknown probe '" + resp.probe_id + "'");
    AnnotationRecord rec;
    rec.response_ref = resp.response_id;
    rec.annotator_id = annotator_id;
    rec.score = lexicon_auto_score(resp, lexicons.at(probe->dimension));
    rec.note = "lexicon auto-score";
    rec.submitted_at = utc_now_iso8601();
    log.append(rec);
    ++appended;
  }
  return appended;
}

std::size_t import_annotations(const fs::path& run_dir, const fs::path& file) {
  RunStore store = RunStore::open(run_dir);
  ReplayCache cache(store.responses_path(), /*read_only=*/true);
  std::set<std::string> known;
  for (const auto& r : run_responses(store, cache)) known.insert(r.response_id);
  std::vector<AnnotationRecord> incoming;
  for (const auto& j : read_jsonl(file)) {
    AnnotationRecord r = annotation_record_from_json(j);
    if (!known.count(r.response_ref)) {
      throw Error(ErrorCode::invariant, "annotation references unknown response '" + r.response_ref + "'",
                  {r.response_ref});
    }
    incoming.push_back(std::move(r));
  }
  AnnotationLog log(store.annotations_path());
  for (const auto& r : incoming) log.append(r);
  return incoming.size();
}

CulturalReport analyze_store(const RunStore& store, const AnalyzeOptions& options) {
  const RunManifest& m = store.manifest;
  ProbeDataset ds = store.load_bound_dataset();
  std::vector<HofstedeAnchor> anchors = load_anchors(m.anchors_path);
  ReplayCache cache(store.responses_path(), /*read_only=*/true);
  std::vector<ModelResponse> responses = run_responses(store, cache);
  if (responses.empty()) throw Error(ErrorCode::empty_run, "run '" + m.run_id + "' has no responses");

  std::set<std::string> response_ids;
  std::map<std::string, Dimension> dimension_of;
  for (const auto& r : responses) {
    response_ids.insert(r.response_id);
    if (const Probe* p = ds.find(r.probe_id)) dimension_of[r.response_id] = p->dimension;
  }
  std::vector<AnnotationRecord> records;
  for (auto& r : read_annotations(store.annotations_path())) {
    if (response_ids.count(r.response_ref)) records.push_back(std::move(r));
  }

  ScoreSetOptions sopt;
  sopt.min_annotations = options.min_annotations.value_or(m.annotation.min_annotations);
  sopt.allow_partial = options.allow_partial;
  std::vector<DimensionScoreSet> sets = build_score_sets(ds, responses, records, sopt);

  CulturalReport report;
  report.run_id = m.run_id;
  report.manifest_digest = m.digest;
  report.dataset_name = ds.name;
  report.dataset_version = ds.version;
  report.dataset_digest = m.dataset_digest;
  report.n_responses = responses.size();
  report.n_annotation_records = records.size();
  report.min_annotations = sopt.min_annotations;
  report.allow_partial = sopt.allow_partial;
  for (const auto& a : anchors) report.anchors.push_back({a.country, a.dimension, a.raw_score, a.normalized()});

  std::map<std::string, std::map<Dimension, std::vector<double>>> values;
  for (const auto& set : sets) {
    auto& v = values[set.model_id][set.dimension];
    for (const auto& [_, s] : set.scores) v.push_back(s);
  }
  for (const auto& profile : m.models) {
    auto it = values.find(profile.model_id);
    if (it == values.end()) continue;
    ModelSummary summary;
    for (const auto& [d, v] : it->second) {
      if (v.empty()) continue;
      DimensionSummary ds_sum;
      ds_sum.cds = cds(v);
      ds_sum.n_probes = v.size();
      for (const auto& a : anchors) {
        if (a.dimension == d) ds_sum.cai[a.country] = cai(ds_sum.cds, d, a);
      }
      summary.dimensions[d] = ds_sum;
    }
    if (summary.dimensions.empty()) continue;
    if (summary.dimensions.count(Dimension::idv) && summary.dimensions.count(Dimension::pdi)) {
      summary.bias_magnitude =
          bias_magnitude(summary.dimensions[Dimension::idv].cds, summary.dimensions[Dimension::pdi].cds);
    }
    report.models[profile.model_id] = summary;
  }

  for (Dimension d : kAllDimensions) {
    for (std::size_t i = 0; i < m.models.size(); ++i) {
      for (std::size_t j = i + 1; j < m.models.size(); ++j) {
        const auto& a = values[m.models[i].model_id][d];
        const auto& b = values[m.models[j].model_id][d];
        if (a.size() < 2 || b.size() < 2) continue;
        report.t_tests[d].push_back({m.models[i].model_id, m.models[j].model_id, welch_t(a, b)});
      }
    }
  }

  auto kappa_of = [](std::span<const AnnotationRecord> recs) -> std::optional<FleissKappaResult> {
    auto matrix = kappa_matrix_from_records(recs);
    if (!matrix || matrix->empty()) return std::nullopt;
    return fleiss_kappa(*matrix);
  };
  report.kappa.pooled = kappa_of(records);
  for (Dimension d : kAllDimensions) {
    std::vector<AnnotationRecord> subset;
    for (const auto& r : records) {
      auto it = dimension_of.find(r.response_ref);
      if (it != dimension_of.end() && it->second == d) subset.push_back(r);
    }
    report.kappa.by_dimension[d] = kappa_of(subset);
  }

  report.ablation = ablation_by_probe_type(ds, sets);

  if (m.panels.preference) {
    LexiconSet lexicons = load_lexicons(m.lexicons_path);
    std::map<std::string, std::map<Dimension, std::vector<double>>> ratios;
    std::map<std::string, std::map<Dimension, std::set<std::string>>> flagged;
    for (const auto& rec : cache.logprob_records()) {
      if (!m.model(rec.model_id)) continue;
      const Probe* p = ds.find(rec.probe_id);
      if (!p) continue;
      ratios[rec.model_id][p->dimension].push_back(
          preference_log_ratio(rec.result.logprobs, lexicons.at(p->dimension)));
      flagged[rec.model_id][p->dimension].insert(rec.result.first_token_only.begin(),
                                                 rec.result.first_token_only.end());
    }
    for (const auto& [model, dims] : ratios) {
      for (const auto& [d, v] : dims) {
        PreferenceCell cell;
        cell.mean_log_ratio = cds(v);
        cell.n_probes = v.size();
        const auto& f = flagged[model][d];
        cell.first_token_only.assign(f.begin(), f.end());
        report.preference[model][d] = cell;
      }
    }
  }

  for (const auto& profile : m.models) {
    for (const auto& [d, concepts] : m.panels.similarity_concepts) {
      for (const auto& concept_text : concepts) {
        auto concept_vec = cache.find_embedding(profile.model_id, concept_text);
        if (!concept_vec) continue;
        std::vector<double> sims;
        for (const auto& r : responses) {
          if (r.model_id != profile.model_id) continue;
          auto dit = dimension_of.find(r.response_id);
          if (dit == dimension_of.end() || dit->second != d) continue;
          if (auto v = cache.find_embedding(profile.model_id, r.text)) {
            sims.push_back(concept_similarity(*v, *concept_vec));
          }
        }
        if (!sims.empty()) report.similarity[profile.model_id][d][concept_text] = cds(sims);
      }
    }
  }

  report.notes.push_back(
      "Hofstede anchors are normalized linearly onto [-2, 2] as raw/100*4-2; CAI values are comparable only with "
      "figures computed under the same normalization.");
  report.notes.push_back("Fleiss' kappa treats the five Likert points as nominal categories.");
  if (sopt.allow_partial) {
    std::size_t below = 0;
    std::map<std::string, std::set<std::string>> annotators;
    for (const auto& r : records) annotators[r.response_ref].insert(r.annotator_id);
    for (const auto& r : responses) {
      if (annotators[r.response_id].size() < sopt.min_annotations) ++below;
    }
    if (below > 0) {
      report.notes.push_back(std::to_string(below) + " responses had fewer than " +
                             std::to_string(sopt.min_annotations) + " annotations (partial analysis).");
    }
  }
  return report;
}

int cmd_analyze(const fs::path& run_dir, const AnalyzeOptions& options, ReportFormat format, std::ostream& out,
                std::ostream& err) {
  try {
    RunStore store = RunStore::open(run_dir);
    CulturalReport report = analyze_store(store, options);
    if (format != ReportFormat::md) write_text_file_atomic(store.report_json_path(), serialize_report(report));
    if (format != ReportFormat::json) write_text_file_atomic(store.report_md_path(), render_markdown(report));
    out << "wrote report for run " << report.run_id << " to " << run_dir.string() << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

int cmd_report(const fs::path& run_dir, std::ostream& out, std::ostream& err) {
  try {
    RunStore store;
    store.root = run_dir;
    json j;
    try {
      j = json::parse(read_text_file(store.report_json_path()));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::parse, std::string("report.json: ") + e.what());
    }
    CulturalReport report = cultural_report_from_json(j);
    write_text_file_atomic(store.report_md_path(), render_markdown(report));
    out << "rendered " << store.report_md_path().string() << "\n";
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  }
}

}  // namespace cprobe
