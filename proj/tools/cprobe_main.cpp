#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "cprobe/error.hpp"
#include "cprobe/pipeline.hpp"
#include "cprobe/service.hpp"

namespace {

// Wraps commands that report counts rather than owning their own output.
template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const cprobe::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return cprobe::exit_code_for(e.code());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cprobe: probe, annotate and score cultural bias in language models"};
  app.require_subcommand(1);

  std::string dataset;
  bool strict = false;
  auto* validate = app.add_subcommand("validate", "Check a probe dataset and report its balance and digest");
  validate->add_option("dataset", dataset, "Dataset JSON file")->required();
  validate->add_flag("--strict", strict, "Fail when dimensions are unbalanced");

  std::string manifest;
  std::optional<int> parallelism;
  bool replay_only = false;
  auto* run = app.add_subcommand("run", "Query every model for every probe, recording into the run store");
  run->add_option("manifest", manifest, "Run manifest (manifest.json inside the run directory)")->required();
  run->add_option("--parallelism", parallelism, "Concurrent gateway calls")->check(CLI::PositiveNumber);
  run->add_flag("--replay-only", replay_only, "Never call providers; a cache miss is an error");

  std::string run_dir;
  std::string bind = "127.0.0.1:8765";
  cprobe::ServiceOptions service_options;
  std::string ui_dir;
  auto* serve = app.add_subcommand("annotate-serve", "Serve the blind annotation API for a run");
  serve->add_option("run_dir", run_dir, "Run directory")->required();
  serve->add_option("--bind", bind, "host:port to listen on")->capture_default_str();
  serve->add_option("--cors-origin", service_options.cors_origin, "Allowed browser origin")->capture_default_str();
  serve->add_option("--ui-dir", ui_dir, "Static annotation UI to serve at /");

  bool allow_partial = false;
  std::string format = "both";
  std::optional<std::size_t> min_annotations;
  auto* analyze = app.add_subcommand("analyze", "Compute the report from the run store");
  analyze->add_option("run_dir", run_dir, "Run directory")->required();
  analyze->add_flag("--allow-partial", allow_partial, "Score responses with fewer annotations than required");
  analyze->add_option("--format", format, "Artifacts to write")
      ->check(CLI::IsMember({"json", "md", "both"}))
      ->capture_default_str();
  analyze->add_option("--min-annotations", min_annotations, "Override the manifest's annotation minimum");

  auto* report = app.add_subcommand("report", "Re-render report.md from report.json");
  report->add_option("run_dir", run_dir, "Run directory")->required();

  std::string annotator = "lexicon-auto";
  auto* auto_annotate = app.add_subcommand("auto-annotate", "Score unscored responses with the lexicon annotator");
  auto_annotate->add_option("run_dir", run_dir, "Run directory")->required();
  auto_annotate->add_option("--annotator", annotator, "Annotator id to record")->capture_default_str();

  std::string import_file;
  auto* import = app.add_subcommand("import-annotations", "Append annotation records from a JSONL export");
  import->add_option("run_dir", run_dir, "Run directory")->required();
  import->add_option("file", import_file, "JSONL file of annotation records")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (*validate) return cprobe::cmd_validate(dataset, {strict}, std::cout, std::cerr);
  if (*run) {
    cprobe::RunOptions options;
    options.parallelism = parallelism;
    if (replay_only) options.replay_only = true;
    return cprobe::cmd_run(manifest, options, std::cout, std::cerr);
  }
  if (*serve) {
    if (!ui_dir.empty()) service_options.ui_dir = ui_dir;
    return cprobe::cmd_annotate_serve(run_dir, bind, service_options, std::cout, std::cerr);
  }
  if (*analyze) {
    cprobe::AnalyzeOptions options{allow_partial, min_annotations};
    auto fmt = format == "json" ? cprobe::ReportFormat::json
               : format == "md" ? cprobe::ReportFormat::md
                                : cprobe::ReportFormat::both;
    return cprobe::cmd_analyze(run_dir, options, fmt, std::cout, std::cerr);
  }
  if (*report) return cprobe::cmd_report(run_dir, std::cout, std::cerr);
  if (*auto_annotate) {
    return guarded([&] {
      std::cout << cprobe::auto_annotate(run_dir, annotator) << " records appended\n";
      return 0;
    });
  }
  if (*import) {
    return guarded([&] {
      std::cout << cprobe::import_annotations(run_dir, import_file) << " records imported\n";
      return 0;
    });
  }
  return 1;
}
