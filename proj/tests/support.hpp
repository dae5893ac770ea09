#pragma once

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <optional>
#include <regex>
#include <thread>

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "cprobe/manifest.hpp"
#include "cprobe/probe.hpp"
#include "cprobe/util.hpp"
#include "json.hpp"

namespace cprobe::test {

namespace fs = std::filesystem;
using nlohmann::json;

inline fs::path data_dir() { return fs::path(CPROBE_TEST_DATA_DIR); }

/// Empty scratch directory unique to this process and name.
inline fs::path fresh_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("cprobe-" + std::to_string(::getpid())) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// `per_dimension` probes per dimension with probe types cycling VDP, SJP, SAP.
inline ProbeDataset synthetic_dataset(std::size_t per_dimension, bool bilingual = false) {
  ProbeDataset ds{"synthetic", "1.0.0", {}};
  for (Dimension d : kAllDimensions) {
    for (std::size_t i = 0; i < per_dimension; ++i) {
      ProbeType t = kAllProbeTypes[i % 3];
      Probe p;
      p.id = std::string(to_code(d)) + "-" + std::string(to_code(t)) + "-" + std::to_string(i);
      p.dimension = d;
      p.probe_type = t;
      p.polarity_note = "positive scores favour pole A";
      p.variants.push_back({"en", "Synthetic " + p.id + " scenario", Provenance::original, std::nullopt});
      if (bilingual) {
        p.variants.push_back({"zh-Hans", "合成情景 " + p.id, Provenance::translated, std::nullopt});
      }
      ds.probes.push_back(std::move(p));
    }
  }
  return ds;
}

inline json persona_model(const std::string& id, double idv, double pdi, double noise, std::uint64_t seed,
                          json type_scale = json::object()) {
  json persona = {{"idv_bias", idv}, {"pdi_bias", pdi}, {"noise_sd", noise}, {"seed", seed}};
  if (!type_scale.empty()) persona["type_scale"] = type_scale;
  return {{"model_id", id}, {"provider_kind", "synthetic_persona"}, {"persona", persona}};
}

/// Writes dataset.json and manifest.json into `dir`; `extra` keys override the
/// defaults. Returns the manifest path.
inline fs::path write_run(const fs::path& dir, const ProbeDataset& ds, const std::vector<json>& models,
                          const json& extra = json::object()) {
  save_dataset(ds, dir / "dataset.json");
  json m = {{"run_id", dir.filename().string()},
            {"dataset", {{"path", "dataset.json"}, {"digest", file_digest(dir / "dataset.json")}}},
            {"models", json(models)},
            {"languages", {"en"}},
            {"samples", 1},
            {"seeds", {{"session", 42}}},
            {"annotation",
             {{"roster", {"a1", "a2", "a3"}},
              {"tokens", {{"a1", "tok-a1"}, {"a2", "tok-a2"}, {"a3", "tok-a3"}}},
              {"min_annotations", 1}}},
            {"parallelism", 2}};
  m.update(extra);
  write_file(dir / "manifest.json", m.dump(2));
  return dir / "manifest.json";
}

/// Child process with stdout and stderr redirected to `log`.
struct Child {
  pid_t pid = -1;
  fs::path log;

  Child() = default;
  Child(Child&& o) noexcept : pid(o.pid), log(std::move(o.log)) { o.pid = -1; }
  Child(const Child&) = delete;

  static Child spawn(const std::vector<std::string>& args, const fs::path& log) {
    Child c;
    c.log = log;
    c.pid = ::fork();
    if (c.pid == 0) {
      int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
      ::dup2(fd, 1);
      ::dup2(fd, 2);
      std::vector<char*> argv;
      for (const auto& a : args) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      ::execv(argv[0], argv.data());
      ::_exit(127);
    }
    return c;
  }

  /// Exit status, or nullopt on timeout. A signal death reports 128 + signo.
  std::optional<int> wait(std::chrono::milliseconds timeout = std::chrono::seconds(10)) {
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      int status = 0;
      if (::waitpid(pid, &status, WNOHANG) == pid) {
        pid = -1;
        return WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return std::nullopt;
  }

  /// Port announced on the "listening on host:port" line.
  std::optional<int> wait_for_port(std::chrono::milliseconds timeout = std::chrono::seconds(10)) const {
    static const std::regex re("listening on [^\\s]*:(\\d+)");
    auto deadline = std::chrono::steady_clock::now() + timeout;
    while (std::chrono::steady_clock::now() < deadline) {
      std::ifstream in(log);
      std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      std::smatch m;
      if (std::regex_search(text, m, re)) return std::stoi(m[1]);
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return std::nullopt;
  }

  void kill(int sig) const {
    if (pid > 0) ::kill(pid, sig);
  }

  ~Child() {
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      ::waitpid(pid, nullptr, 0);
    }
  }
};

}  // namespace cprobe::test
