#include "tascforge/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace tascforge {

namespace {

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  auto end = s.find_last_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

// raw key/value view with take-tracking so leftovers reject as unknown keys
class ConfigMap {
 public:
  explicit ConfigMap(const std::string& text) {
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
      lineno++;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos)
        fail(ErrorCode::InvalidConfig,
             "line " + std::to_string(lineno) + ": expected 'key = value'");
      auto key = trim(line.substr(0, eq));
      auto value = trim(line.substr(eq + 1));
      if (key.empty()) fail(ErrorCode::InvalidConfig, "empty key on line " + std::to_string(lineno));
      if (entries_.count(key))
        fail(ErrorCode::InvalidConfig, "duplicate key '" + key + "'");
      entries_[key] = value;
    }
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string take_string(const std::string& key, const std::string& fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    taken_.insert(key);
    return it->second;
  }

  long long take_int(const std::string& key, long long fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    taken_.insert(key);
    return parse_int(it->second, key);
  }

  double take_double(const std::string& key, double fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    taken_.insert(key);
    return parse_double(it->second, key);
  }

  bool take_bool(const std::string& key, bool fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    taken_.insert(key);
    if (it->second == "true" || it->second == "on" || it->second == "1") return true;
    if (it->second == "false" || it->second == "off" || it->second == "0") return false;
    fail(ErrorCode::InvalidConfig, "key '" + key + "' expects a boolean");
  }

  void reject_unknown() const {
    for (const auto& [key, value] : entries_) {
      (void)value;
      if (!taken_.count(key))
        fail(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
    }
  }

  static long long parse_int(const std::string& s, const std::string& key) {
    long long v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      fail(ErrorCode::InvalidConfig, "key '" + key + "' expects an integer, got '" + s + "'");
    return v;
  }

  static double parse_double(const std::string& s, const std::string& key) {
    try {
      std::size_t pos = 0;
      double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidConfig, "key '" + key + "' expects a number, got '" + s + "'");
    }
  }

 private:
  std::map<std::string, std::string> entries_;
  std::set<std::string> taken_;
};

std::vector<int> parse_int_list(const std::string& s, const std::string& key) {
  std::vector<int> out;
  for (const auto& part : split(s, ','))
    out.push_back(static_cast<int>(ConfigMap::parse_int(part, key)));
  if (out.empty()) fail(ErrorCode::InvalidConfig, "key '" + key + "' expects a non-empty list");
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const std::string& key) {
  std::vector<double> out;
  for (const auto& part : split(s, ','))
    out.push_back(ConfigMap::parse_double(part, key));
  if (out.empty()) fail(ErrorCode::InvalidConfig, "key '" + key + "' expects a non-empty list");
  return out;
}

std::vector<Activation> parse_activation_list(const std::string& s) {
  std::vector<Activation> out;
  for (const auto& part : split(s, ',')) out.push_back(activation_from_name(part));
  if (out.empty()) fail(ErrorCode::InvalidConfig, "activation list is empty");
  return out;
}

// layer DSL: conv:K:F:ACT[:bn] | pool:K:S | dense:N:ACT[:bn] | dropout:P | flatten
LayerSpec parse_layer_token(const std::string& token) {
  auto parts = split(token, ':');
  if (parts.empty()) fail(ErrorCode::InvalidConfig, "empty backbone layer token");
  const auto& kind = parts[0];
  auto want = [&](std::size_t n, std::size_t m) {
    if (parts.size() < n || parts.size() > m)
      fail(ErrorCode::InvalidConfig, "malformed backbone layer '" + token + "'");
  };
  if (kind == "conv") {
    want(4, 5);
    bool bn = parts.size() == 5 && parts[4] == "bn";
    return LayerSpec::conv(static_cast<int>(ConfigMap::parse_int(parts[1], "conv kernel")),
                           static_cast<int>(ConfigMap::parse_int(parts[2], "conv filters")),
                           activation_from_name(parts[3]), bn);
  }
  if (kind == "pool") {
    want(3, 3);
    return LayerSpec::maxpool(static_cast<int>(ConfigMap::parse_int(parts[1], "pool kernel")),
                              static_cast<int>(ConfigMap::parse_int(parts[2], "pool stride")));
  }
  if (kind == "dense") {
    want(3, 4);
    bool bn = parts.size() == 4 && parts[3] == "bn";
    return LayerSpec::dense(static_cast<int>(ConfigMap::parse_int(parts[1], "dense neurons")),
                            activation_from_name(parts[2]), bn);
  }
  if (kind == "dropout") {
    want(2, 2);
    return LayerSpec::dropout(ConfigMap::parse_double(parts[1], "dropout p"));
  }
  if (kind == "flatten") {
    want(1, 1);
    return LayerSpec::flatten();
  }
  fail(ErrorCode::InvalidConfig, "unknown backbone layer kind '" + kind + "'");
}

}  // namespace

RunConfig parse_config_text(const std::string& text) {
  ConfigMap map(text);
  RunConfig cfg;

  cfg.seed = static_cast<std::uint64_t>(map.take_int("seed", 1));
  cfg.out_dir = map.take_string("out_dir", cfg.out_dir);

  cfg.data.kind = map.take_string("data.kind", cfg.data.kind);
  if (cfg.data.kind != "synthetic" && cfg.data.kind != "idx")
    fail(ErrorCode::InvalidConfig, "data.kind must be 'synthetic' or 'idx'");
  cfg.data.classes = static_cast<int>(map.take_int("data.classes", cfg.data.classes));
  cfg.data.samples_per_class =
      static_cast<int>(map.take_int("data.samples_per_class", cfg.data.samples_per_class));
  cfg.data.height = static_cast<std::size_t>(map.take_int("data.height", cfg.data.height));
  cfg.data.width = static_cast<std::size_t>(map.take_int("data.width", cfg.data.width));
  cfg.data.channels = static_cast<std::size_t>(map.take_int("data.channels", cfg.data.channels));
  cfg.data.val_fraction = map.take_double("data.val_fraction", cfg.data.val_fraction);
  cfg.data.source_images = map.take_string("data.source_images", "");
  cfg.data.source_labels = map.take_string("data.source_labels", "");
  cfg.data.target_images = map.take_string("data.target_images", "");
  cfg.data.target_labels = map.take_string("data.target_labels", "");
  if (cfg.data.classes < 2) fail(ErrorCode::InvalidConfig, "data.classes must be >= 2");
  if (cfg.data.samples_per_class < 2)
    fail(ErrorCode::InvalidConfig, "data.samples_per_class must be >= 2");
  if (!(cfg.data.val_fraction > 0.0 && cfg.data.val_fraction < 1.0))
    fail(ErrorCode::InvalidConfig, "data.val_fraction must be in (0,1)");
  if (cfg.data.kind == "idx" &&
      (cfg.data.source_images.empty() || cfg.data.source_labels.empty() ||
       cfg.data.target_images.empty() || cfg.data.target_labels.empty()))
    fail(ErrorCode::InvalidConfig, "idx data needs source/target image and label paths");

  auto backbone = map.take_string("backbone.layers", "conv:3:32:relu, pool:2:2, conv:3:32:relu");
  for (const auto& token : split(backbone, ','))
    cfg.backbone_layers.push_back(parse_layer_token(token));
  if (cfg.backbone_layers.empty())
    fail(ErrorCode::InvalidConfig, "backbone.layers must declare at least one layer");

  auto residual = map.take_string("backbone.residual", "");
  if (!residual.empty()) {
    for (const auto& group_text : split(residual, ';')) {
      std::vector<std::size_t> group;
      for (const auto& idx : split(group_text, '-'))
        group.push_back(static_cast<std::size_t>(ConfigMap::parse_int(idx, "backbone.residual")));
      if (group.size() < 2)
        fail(ErrorCode::InvalidConfig, "residual groups need at least two layer indices");
      std::sort(group.begin(), group.end());
      cfg.backbone_residual_groups.push_back(std::move(group));
    }
  }

  cfg.pretrain.epochs = static_cast<int>(map.take_int("pretrain.epochs", cfg.pretrain.epochs));
  cfg.pretrain.batch_size =
      static_cast<std::size_t>(map.take_int("pretrain.batch_size", cfg.pretrain.batch_size));
  if (cfg.pretrain.epochs < 1) fail(ErrorCode::InvalidConfig, "pretrain.epochs must be >= 1");

  // search space: one key per choice list
  cfg.space.conv_slots = static_cast<std::size_t>(map.take_int("space.conv_slots", 1));
  if (map.has("space.conv.filter_size"))
    cfg.space.conv.filter_size = parse_int_list(
        map.take_string("space.conv.filter_size", ""), "space.conv.filter_size");
  if (map.has("space.conv.num_filters"))
    cfg.space.conv.num_filters = parse_int_list(
        map.take_string("space.conv.num_filters", ""), "space.conv.num_filters");
  if (map.has("space.conv.activation"))
    cfg.space.conv.activation =
        parse_activation_list(map.take_string("space.conv.activation", ""));
  auto pool = map.take_string("space.pool", "off");
  if (pool == "off") {
    cfg.space.pool_slot = false;
  } else {
    cfg.space.pool_slot = true;
    cfg.space.pool.filter_size = parse_int_list(pool, "space.pool");
  }
  cfg.space.fc_slots = static_cast<std::size_t>(map.take_int("space.fc_slots", 2));
  if (map.has("space.fc.neurons"))
    cfg.space.fc.neurons =
        parse_int_list(map.take_string("space.fc.neurons", ""), "space.fc.neurons");
  if (map.has("space.fc.activation"))
    cfg.space.fc.activation = parse_activation_list(map.take_string("space.fc.activation", ""));
  if (map.has("space.fc.dropout"))
    cfg.space.fc.dropout =
        parse_double_list(map.take_string("space.fc.dropout", ""), "space.fc.dropout");
  cfg.space.validate();

  cfg.tune.replace_top_k =
      static_cast<std::size_t>(map.take_int("tune.replace_top_k", cfg.tune.replace_top_k));
  cfg.tune.finetune_backbone =
      map.take_bool("tune.finetune_backbone", cfg.tune.finetune_backbone);
  cfg.tune.k0 = static_cast<std::size_t>(map.take_int("bo.k0", cfg.tune.k0));
  cfg.tune.budget = static_cast<std::size_t>(map.take_int("bo.budget", cfg.tune.budget));
  cfg.tune.candidates_per_step = static_cast<std::size_t>(
      map.take_int("bo.candidates_per_step", cfg.tune.candidates_per_step));
  cfg.tune.proxy_epochs =
      static_cast<int>(map.take_int("bo.proxy_epochs", cfg.tune.proxy_epochs));
  cfg.tune.batch_size =
      static_cast<std::size_t>(map.take_int("bo.batch_size", cfg.tune.batch_size));
  if (cfg.tune.k0 < 2) fail(ErrorCode::InvalidConfig, "bo.k0 must be >= 2");
  if (cfg.tune.budget < cfg.tune.k0)
    fail(ErrorCode::InvalidConfig, "bo.budget must be >= bo.k0");
  if (cfg.tune.candidates_per_step < 1)
    fail(ErrorCode::InvalidConfig, "bo.candidates_per_step must be >= 1");
  if (cfg.tune.proxy_epochs < 1) fail(ErrorCode::InvalidConfig, "bo.proxy_epochs must be >= 1");

  cfg.prune.rate = map.take_double("prune.rate", cfg.prune.rate);
  cfg.prune.min_diff = map.take_double("prune.min_diff", cfg.prune.min_diff);
  cfg.prune.epochs_each = static_cast<int>(map.take_int("prune.epochs_each", cfg.prune.epochs_each));
  cfg.prune.eligibility_threshold = static_cast<std::size_t>(
      map.take_int("prune.eligibility_threshold", cfg.prune.eligibility_threshold));
  cfg.prune.batch_size =
      static_cast<std::size_t>(map.take_int("prune.batch_size", cfg.prune.batch_size));
  if (!(cfg.prune.rate > 0.0 && cfg.prune.rate < 1.0))
    fail(ErrorCode::InvalidConfig, "prune.rate must be in (0,1)");
  if (cfg.prune.epochs_each < 1) fail(ErrorCode::InvalidConfig, "prune.epochs_each must be >= 1");

  cfg.oracle_cap = static_cast<unsigned long long>(map.take_int("oracle.cap", cfg.oracle_cap));

  map.reject_unknown();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::InvalidConfig, "cannot open config file " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

}  // namespace tascforge
