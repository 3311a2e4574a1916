#pragma once

// Flat key=value run configuration. Every key is declared in config_keys()
// with its default; files and command-line overrides may only set declared
// keys.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "backbones.hpp"
#include "error.hpp"
#include "io.hpp"
#include "trainer.hpp"

namespace allnet {

struct ConfigKey {
  std::string name;
  std::string fallback; ///< default value as text; "" means unset
  std::string help;
};

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"seed", "0", "run seed; split, init, shuffle and gradcheck seeds derive from it"},
      {"data.manifest", "", "full manifest (path,label CSV) to split"},
      {"data.root", "", "image directory; empty = directory of the manifest being read"},
      {"data.train", "", "training manifest"},
      {"data.val", "", "validation manifest (optional for train)"},
      {"data.ratios", "0.6,0.2,0.2", "train,val,test split ratios"},
      {"data.stats", "", "standardization stats file; empty = compute from data.train"},
      {"data.prefetch", "true", "decode the next batch on a worker thread"},
      {"split.out_dir", "splits", "output directory of split"},
      {"stats.out", "stats.txt", "output file of stats"},
      {"graph.preset", "full", "full (64x64 input) or toy (32x32, halved widths)"},
      {"graph.input_size", "", "square input side; empty = preset"},
      {"graph.vgg_widths", "", "VGG stage widths; empty = preset"},
      {"graph.resnet_width", "", "ResNet width; empty = preset"},
      {"graph.resnet_blocks", "", "ResNet block count; empty = preset"},
      {"graph.inception_stem", "", "Inception stem width; empty = preset"},
      {"graph.inception_blocks", "", "Inception block count; empty = preset"},
      {"graph.inception_branches", "", "four Inception branch widths; empty = preset"},
      {"graph.grid", "", "fusion grid side; empty = preset"},
      {"graph.tap_width", "", "tap conv width; empty = preset"},
      {"graph.bridge_widths", "", "two 1x1 bridge widths; empty = preset"},
      {"graph.head_width", "", "head 1x1 conv width; empty = preset"},
      {"graph.fc_width", "", "hidden dense width; empty = preset"},
      {"train.epochs", "40", "training epochs"},
      {"train.batch_size", "16", "mini-batch size"},
      {"train.lr", "0.001", "learning rate"},
      {"train.optimizer", "adam", "sgd, sgd-momentum or adam"},
      {"train.clip", "5", "global gradient-norm cap, or none"},
      {"train.freeze", "", "comma list of scopes (vgg,resnet,inception,head) and node ranges a-b"},
      {"train.out_dir", "run", "output directory of train"},
      {"eval.threshold", "0.5", "decision threshold"},
      {"gradcheck.samples", "20", "parameters sampled by gradcheck"},
      {"gradcheck.tolerance", "0.001", "relative error tolerance of gradcheck"},
  };
  return keys;
}

class RunConfig {
public:
  RunConfig() {
    for (const auto& k : config_keys()) values_[k.name] = k.fallback;
  }

  static bool known(std::string_view key) {
    for (const auto& k : config_keys())
      if (k.name == key) return true;
    return false;
  }

  void set(const std::string& key, std::string value, const std::string& origin = "command line") {
    if (!known(key)) throw UsageError(origin + ": unknown config key '" + key + "'");
    values_[key] = std::move(value);
  }

  /// Applies `key=value` lines; blank lines and `#` comments are skipped.
  void merge_text(std::string_view text, const std::string& source) {
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const std::string where = source + ":" + std::to_string(lineno);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string s = trim(line);
      if (s.empty() || s[0] == '#') continue;
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw UsageError(where + ": expected key=value");
      set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)), where);
    }
  }

  void merge_file(const std::filesystem::path& file) { merge_text(io::read_text(file), file.string()); }

  const std::string& str(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
  }

  bool has(const std::string& key) const { return !str(key).empty(); }

  std::uint64_t u64(const std::string& key) const { return parse_number<std::uint64_t>(key, str(key)); }
  std::size_t size(const std::string& key) const { return parse_number<std::size_t>(key, str(key)); }
  double real(const std::string& key) const { return parse_number<double>(key, str(key)); }

  bool flag(const std::string& key) const {
    const std::string& v = str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError(key + ": expected true or false, got '" + v + "'");
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : items(str(key))) out.push_back(parse_number<double>(key, item));
    return out;
  }

  std::vector<std::size_t> sizes(const std::string& key) const {
    std::vector<std::size_t> out;
    for (const auto& item : items(str(key))) out.push_back(parse_number<std::size_t>(key, item));
    return out;
  }

  /// Canonical text form: every key in declaration order.
  std::string text() const {
    std::string out;
    for (const auto& k : config_keys()) out += k.name + "=" + values_.at(k.name) + "\n";
    return out;
  }

  static std::vector<std::string> items(const std::string& list) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= list.size()) {
      const auto comma = list.find(',', start);
      const auto end = comma == std::string::npos ? list.size() : comma;
      std::string item = trim(list.substr(start, end - start));
      if (!item.empty()) out.push_back(std::move(item));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    return out;
  }

private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  template <typename N> static N parse_number(const std::string& key, const std::string& text) {
    N value{};
    const char* first = text.data();
    const char* last = first + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (text.empty() || ec != std::errc{} || ptr != last) {
      throw UsageError(key + ": '" + text + "' is not a valid number");
    }
    return value;
  }

  std::map<std::string, std::string> values_;
};

/// Architecture selected by the graph.* keys.
inline AllNetConfig graph_config(const RunConfig& rc) {
  const std::string& preset = rc.str("graph.preset");
  AllNetConfig c;
  if (preset == "toy") {
    c = AllNetConfig::toy();
  } else if (preset != "full") {
    throw UsageError("graph.preset: expected full or toy, got '" + preset + "'");
  }
  auto fixed = [&](const std::string& key, std::size_t n) {
    auto v = rc.sizes(key);
    if (v.size() != n) throw UsageError(key + ": expected " + std::to_string(n) + " comma-separated values");
    return v;
  };
  if (rc.has("graph.input_size")) c.height = c.width = rc.size("graph.input_size");
  if (rc.has("graph.vgg_widths")) c.vgg.widths = rc.sizes("graph.vgg_widths");
  if (rc.has("graph.resnet_width")) c.resnet.width = rc.size("graph.resnet_width");
  if (rc.has("graph.resnet_blocks")) c.resnet.blocks = rc.size("graph.resnet_blocks");
  if (rc.has("graph.inception_stem")) c.inception.stem_width = rc.size("graph.inception_stem");
  if (rc.has("graph.inception_blocks")) c.inception.blocks = rc.size("graph.inception_blocks");
  if (rc.has("graph.inception_branches")) {
    auto v = fixed("graph.inception_branches", 4);
    std::copy(v.begin(), v.end(), c.inception.branch_widths.begin());
  }
  if (rc.has("graph.grid")) c.fusion.grid = rc.size("graph.grid");
  if (rc.has("graph.tap_width")) c.fusion.tap_width = rc.size("graph.tap_width");
  if (rc.has("graph.bridge_widths")) {
    auto v = fixed("graph.bridge_widths", 2);
    c.fusion.bridge_widths = {v[0], v[1]};
  }
  if (rc.has("graph.head_width")) c.fusion.head_width = rc.size("graph.head_width");
  if (rc.has("graph.fc_width")) c.fusion.fc_width = rc.size("graph.fc_width");
  return c;
}

inline FreezeSpec parse_freeze(const std::string& list) {
  FreezeSpec f;
  for (const auto& item : RunConfig::items(list)) {
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0 && std::isdigit(static_cast<unsigned char>(item[0]))) {
      int first = 0;
      int last = 0;
      const auto a = std::from_chars(item.data(), item.data() + dash, first);
      const auto b = std::from_chars(item.data() + dash + 1, item.data() + item.size(), last);
      if (a.ec != std::errc{} || b.ec != std::errc{} || a.ptr != item.data() + dash ||
          b.ptr != item.data() + item.size()) {
        throw UsageError("train.freeze: bad node range '" + item + "'");
      }
      f.ranges.emplace_back(first, last);
    } else {
      f.scopes.push_back(item);
    }
  }
  return f;
}

inline TrainConfig train_config(const RunConfig& rc) {
  TrainConfig t;
  t.epochs = rc.size("train.epochs");
  t.batch_size = rc.size("train.batch_size");
  t.learning_rate = rc.real("train.lr");
  t.optimizer = parse_optimizer(rc.str("train.optimizer"));
  t.seed = rc.u64("seed") + seed_offset::train;
  t.freeze = parse_freeze(rc.str("train.freeze"));
  const std::string& clip = rc.str("train.clip");
  if (clip == "none" || clip.empty()) {
    t.clip.reset();
  } else {
    t.clip = rc.real("train.clip");
  }
  t.validate();
  return t;
}

} // namespace allnet
