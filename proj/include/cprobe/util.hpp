#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace cprobe {

std::string sha256_hex(std::string_view data);

// Stable 64-bit hash used to derive RNG seeds; not for security.
std::uint64_t fnv1a64(std::string_view data);

std::string utc_now_iso8601();

std::string read_text_file(const std::filesystem::path& path);

/// Writes via a temporary sibling and rename so readers never observe a
/// partially written file.
void write_text_file_atomic(const std::filesystem::path& path, std::string_view data);

/// Serializes with sorted object keys and every floating-point number printed
/// with exactly six decimals. Identical values always produce identical bytes.
std::string canonical_dump(const nlohmann::json& value);

/// Reads a line-delimited JSON file. A trailing line that fails to parse is
/// treated as a torn write and dropped; a malformed line anywhere else is a
/// ParseError. A missing file reads as empty.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path,
                                       std::size_t* dropped_tail = nullptr);

/// Append-only line-delimited JSON writer. Each append is flushed and
/// fsync'ed before returning, so an acknowledged append survives a crash.
class JsonlAppender {
 public:
  explicit JsonlAppender(std::filesystem::path path);
  ~JsonlAppender();

  JsonlAppender(const JsonlAppender&) = delete;
  JsonlAppender& operator=(const JsonlAppender&) = delete;

  void append(const std::string& line);
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  int fd_ = -1;
  std::mutex mutex_;
};

}  // namespace cprobe
