#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace cmow {

// Flat key=value run configuration. Every recognised key has a default, so
// the resolved view written next to a run's outputs fully determines it.
//
// File syntax: one `key = value` per line, `#` starts a comment. Unknown keys
// are a ConfigError.
class RunConfig {
 public:
  RunConfig();

  static RunConfig from_file(const std::filesystem::path& path);

  // Parses file contents; `origin` names the source in errors.
  void merge_text(const std::string& text, const std::string& origin);
  void set(const std::string& key, const std::string& value);
  // "key=value"
  void set_assignment(const std::string& assignment);

  bool is_set(const std::string& key) const { return explicit_.count(key) > 0; }
  const std::string& text(const std::string& key) const;
  double real(const std::string& key) const;
  std::int64_t integer(const std::string& key) const;
  std::size_t size(const std::string& key) const;
  std::uint64_t u64(const std::string& key) const;
  bool flag(const std::string& key) const;
  // Empty, "none" and "random" read as no path.
  std::optional<std::filesystem::path> path(const std::string& key) const;

  // Throws ConfigError unless the path key names an existing file.
  std::filesystem::path require_file(const std::string& key) const;

  // All keys with resolved values, sorted, in file syntax.
  std::string resolved() const;
  // Writes resolved() to <dir>/config.resolved.
  void echo(const std::filesystem::path& dir) const;

  static const std::vector<std::string>& known_keys();

 private:
  std::map<std::string, std::string> values_;
  std::set<std::string> explicit_;
};

}  // namespace cmow
