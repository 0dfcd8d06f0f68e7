#include "cmow/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "cmow/errors.hpp"

namespace cmow {

namespace {

struct KeySpec {
  const char* key;
  const char* fallback;
  bool is_path;
};

const KeySpec kKeys[] = {
    // model
    {"kind", "hybrid-bidirectional", false},
    {"d", "20", false},
    {"d_vec", "400", false},
    {"sigma_init", "0.01", false},
    {"head", "mlp", false},
    {"mlp_hidden", "0", false},
    {"encoding", "diffcat", false},
    {"max_len", "128", false},
    {"n_vocab", "0", false},
    // paths
    {"vocab", "", true},
    {"corpus", "", true},
    {"task", "", true},
    {"dev", "", true},
    {"teacher", "", true},
    {"init", "random", true},
    {"checkpoint", "", true},
    {"input", "", true},
    {"out", "run", true},
    // task description
    {"task.name", "task", false},
    {"task.arity", "single", false},
    {"task.classes", "2", false},
    {"task.binned", "", false},
    {"task.labels", "", false},
    {"task.metrics", "accuracy", false},
    {"task.col_a", "sentence", false},
    {"task.col_b", "sentence2", false},
    {"task.col_label", "label", false},
    {"task.strict", "true", false},
    // training
    {"alpha", "0.5", false},
    {"temperature", "1.0", false},
    {"lr", "0.001", false},
    {"warmup", "0", false},
    {"max_epochs", "20", false},
    {"patience", "5", false},
    {"batch_size", "32", false},
    {"mask_fraction", "0.15", false},
    {"mask_seed", "12345", false},
    {"grad_clip", "1.0", false},
    {"seed", "1", false},
    {"threads", "1", false},
    {"precision", "narrow", false},
    {"p_embed", "0.1", false},
    {"p_hidden", "0.2", false},
    {"dev_fraction", "0.05", false},
    // encode
    {"encode.mode", "pooled", false},
    // bench
    {"bench.batches", "1024", false},
    {"bench.batch_size", "256", false},
    {"bench.seq_len", "64", false},
    {"bench.classes", "2", false},
};

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.key) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

template <typename N>
N parse_number(const std::string& key, const std::string& text) {
  N value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ConfigError("config key " + key + ": '" + text + "' is not a valid number");
  }
  return value;
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_[k.key] = k.fallback;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  RunConfig config;
  config.merge_text(buffer.str(), path.string());
  return config;
}

void RunConfig::merge_text(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void RunConfig::set(const std::string& key, const std::string& value) {
  if (find_key(key) == nullptr) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
  explicit_.insert(key);
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::text(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

double RunConfig::real(const std::string& key) const { return parse_number<double>(key, text(key)); }
std::int64_t RunConfig::integer(const std::string& key) const { return parse_number<std::int64_t>(key, text(key)); }
std::size_t RunConfig::size(const std::string& key) const { return parse_number<std::size_t>(key, text(key)); }
std::uint64_t RunConfig::u64(const std::string& key) const { return parse_number<std::uint64_t>(key, text(key)); }

bool RunConfig::flag(const std::string& key) const {
  const auto& v = text(key);
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config key " + key + ": '" + v + "' is not a boolean");
}

std::optional<std::filesystem::path> RunConfig::path(const std::string& key) const {
  const auto& v = text(key);
  if (v.empty() || v == "none" || v == "random") return std::nullopt;
  return std::filesystem::path(v);
}

std::filesystem::path RunConfig::require_file(const std::string& key) const {
  const auto p = path(key);
  if (!p) throw ConfigError("config key " + key + " must name a file");
  if (!std::filesystem::is_regular_file(*p)) {
    throw ConfigError("config key " + key + ": file " + p->string() + " does not exist");
  }
  return *p;
}

std::string RunConfig::resolved() const {
  std::ostringstream out;
  for (const auto& [key, value] : values_) {
    std::string shown = value;
    const auto* spec = find_key(key);
    if (spec && spec->is_path && path(key)) shown = std::filesystem::absolute(*path(key)).lexically_normal().string();
    out << key << " = " << shown << "\n";
  }
  return out.str();
}

void RunConfig::echo(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  std::ofstream out(dir / "config.resolved");
  if (!out) throw ConfigError("cannot write " + (dir / "config.resolved").string());
  out << resolved();
}

const std::vector<std::string>& RunConfig::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& spec : kKeys) k.emplace_back(spec.key);
    return k;
  }();
  return keys;
}

}  // namespace cmow
