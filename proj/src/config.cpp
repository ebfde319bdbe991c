#include "cardiofuse/config.hpp"

#include <charconv>
#include <functional>
#include <map>
#include <sstream>

#include "cardiofuse/dataio.hpp"
#include "cardiofuse/error.hpp"

namespace cardiofuse::config {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) { return static_cast<std::size_t>(to_u64(key, v)); }

int to_int(const std::string& key, const std::string& v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> to_size_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& f : dataio::split_csv_line(v)) out.push_back(to_size(key, trim(f)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

using Setter = std::function<void(cv::RunConfig&, const std::string&, const std::string&)>;

void add_train_keys(std::map<std::string, Setter>& m, const std::string& section,
                    train::TrainConfig cv::RunConfig::*field) {
  m[section + ".lr"] = [field](auto& r, auto& k, auto& v) { (r.*field).lr = to_double(k, v); };
  m[section + ".epochs"] = [field](auto& r, auto& k, auto& v) { (r.*field).epochs = to_size(k, v); };
  m[section + ".batch_size"] = [field](auto& r, auto& k, auto& v) { (r.*field).batch_size = to_size(k, v); };
  m[section + ".beta1"] = [field](auto& r, auto& k, auto& v) { (r.*field).beta1 = to_double(k, v); };
  m[section + ".beta2"] = [field](auto& r, auto& k, auto& v) { (r.*field).beta2 = to_double(k, v); };
  m[section + ".eps"] = [field](auto& r, auto& k, auto& v) { (r.*field).eps = to_double(k, v); };
  m[section + ".weight_decay"] = [field](auto& r, auto& k, auto& v) { (r.*field).weight_decay = to_double(k, v); };
  m[section + ".shuffle"] = [field](auto& r, auto& k, auto& v) { (r.*field).shuffle = to_bool(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> m;
    m["run.preset"] = [](auto& r, auto&, auto& v) { r.preset = cv::find_preset(v).name; };
    m["run.seed"] = [](auto& r, auto& k, auto& v) { r.seed = to_u64(k, v); };
    m["cv.k"] = [](auto& r, auto& k, auto& v) { r.k = to_size(k, v); };
    m["cv.stratified"] = [](auto& r, auto& k, auto& v) { r.stratified = to_bool(k, v); };
    m["cv.parallel_folds"] = [](auto& r, auto& k, auto& v) { r.parallel_folds = to_size(k, v); };
    m["schema.window_lo"] = [](auto& r, auto& k, auto& v) { r.window.lo = to_int(k, v); };
    m["schema.window_hi"] = [](auto& r, auto& k, auto& v) { r.window.hi = to_int(k, v); };
    m["schema.coverage"] = [](auto& r, auto& k, auto& v) { r.coverage_threshold = to_double(k, v); };
    m["schema.scope"] = [](auto& r, auto&, auto& v) { r.scope = cv::parse_scope(v); };
    add_train_keys(m, "train", &cv::RunConfig::train);
    add_train_keys(m, "fusion_train", &cv::RunConfig::fusion_train);
    m["ehr_lr.epochs"] = [](auto& r, auto& k, auto& v) { r.ehr_lr_epochs = to_size(k, v); };
    m["encoder.sampled_frames"] = [](auto& r, auto& k, auto& v) { r.model.encoder.sampled_frames = to_size(k, v); };
    m["encoder.conv_channels"] = [](auto& r, auto& k, auto& v) { r.model.encoder.conv_channels = to_size_list(k, v); };
    m["encoder.frame_feature_dim"] = [](auto& r, auto& k, auto& v) {
      r.model.encoder.frame_feature_dim = to_size(k, v);
    };
    m["encoder.lstm_hidden"] = [](auto& r, auto& k, auto& v) { r.model.encoder.lstm_hidden = to_size(k, v); };
    m["encoder.clip_feature_dim"] = [](auto& r, auto& k, auto& v) { r.model.encoder.clip_feature_dim = to_size(k, v); };
    m["encoder.attention_dim"] = [](auto& r, auto& k, auto& v) { r.model.encoder.attention_dim = to_size(k, v); };
    m["fusion.d_model"] = [](auto& r, auto& k, auto& v) { r.model.fusion.d_model = to_size(k, v); };
    m["fusion.n_heads"] = [](auto& r, auto& k, auto& v) { r.model.fusion.n_heads = to_size(k, v); };
    m["fusion.n_layers"] = [](auto& r, auto& k, auto& v) { r.model.fusion.n_layers = to_size(k, v); };
    m["fusion.ff_dim"] = [](auto& r, auto& k, auto& v) { r.model.fusion.ff_dim = to_size(k, v); };
    m["fusion.dropout"] = [](auto& r, auto& k, auto& v) { r.model.fusion.dropout = to_double(k, v); };
    m["fusion.ehr_hidden"] = [](auto& r, auto& k, auto& v) { r.model.fusion.ehr_hidden = to_size(k, v); };
    m["fusion.encoder_freeze"] = [](auto& r, auto& k, auto& v) { r.model.fusion.encoder_freeze = to_bool(k, v); };
    m["model.head_hidden"] = [](auto& r, auto& k, auto& v) { r.model.head_hidden = to_size(k, v); };
    return m;
  }();
  return table;
}

}  // namespace

Settings parse(std::string_view text, const std::string& origin) {
  Settings out;
  std::istringstream in{std::string(text)};
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']' || t.size() < 3) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header '" + t + "'");
      }
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
    }
    const std::string key = trim(std::string_view(t).substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    out.emplace_back(section.empty() ? key : section + "." + key, trim(std::string_view(t).substr(eq + 1)));
  }
  return out;
}

Settings load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(dataio::read_text_file(path), path.string());
}

void apply(cv::RunConfig& run, const std::string& key, const std::string& value) {
  const auto& table = setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(run, key, value);
}

void apply(cv::RunConfig& run, const Settings& settings) {
  for (const auto& [k, v] : settings) apply(run, k, v);
}

std::pair<std::string, std::string> split_assignment(std::string_view text) {
  const auto eq = text.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(text) + "'");
  return {trim(text.substr(0, eq)), trim(text.substr(eq + 1))};
}

std::vector<std::string> known_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : setters()) keys.push_back(k);
  return keys;
}

}  // namespace cardiofuse::config
