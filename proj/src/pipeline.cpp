#include "tascforge/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "tascforge/bo.hpp"
#include "tascforge/dataio.hpp"
#include "tascforge/log.hpp"
#include "tascforge/prune.hpp"

namespace tascforge {

using nlohmann::json;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed ^ (salt * 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ull;
  }
  return hash;
}

NetworkSpec backbone_spec_from_config(const RunConfig& config) {
  NetworkSpec spec;
  spec.input_h = config.data.height;
  spec.input_w = config.data.width;
  spec.input_c = config.data.channels;
  spec.layers = config.backbone_layers;
  spec.residual_groups = config.backbone_residual_groups;
  // classifier for the source task; tuning replaces it (and more, per config)
  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::Flatten) {
    bool spatial = true;
    for (const auto& l : spec.layers)
      if (l.kind == LayerKind::Flatten) spatial = false;
    if (spatial) spec.layers.push_back(LayerSpec::flatten());
  }
  spec.layers.push_back(LayerSpec::output(config.data.classes));
  infer_shapes(spec);
  return spec;
}

NetworkSpec make_extractor(const NetworkSpec& trained_spec, std::size_t replace_top_k) {
  if (trained_spec.layers.empty() || trained_spec.layers.back().kind != LayerKind::Output)
    fail(ErrorCode::InvalidConfig, "trained checkpoint does not end in an output layer");
  std::size_t drop = 1 + replace_top_k;  // the output layer plus k more
  if (drop > trained_spec.layers.size())
    fail(ErrorCode::InvalidConfig, "tune.replace_top_k drops more layers than the backbone has");
  NetworkSpec extractor;
  extractor.input_h = trained_spec.input_h;
  extractor.input_w = trained_spec.input_w;
  extractor.input_c = trained_spec.input_c;
  const std::size_t keep = trained_spec.layers.size() - drop;
  // a trailing flatten adds nothing in front of a fresh head
  std::size_t effective = keep;
  if (effective > 0 && trained_spec.layers[effective - 1].kind == LayerKind::Flatten)
    effective--;
  for (std::size_t i = 0; i < effective; ++i) {
    auto layer = trained_spec.layers[i];
    layer.trainable = false;
    extractor.layers.push_back(layer);
  }
  for (const auto& group : trained_spec.residual_groups) {
    bool inside = group.back() < effective;
    bool outside = group.front() >= effective;
    if (inside) {
      extractor.residual_groups.push_back(group);
    } else if (!outside) {
      fail(ErrorCode::InvalidConfig, "tune.replace_top_k cuts through a residual group");
    }
  }
  if (!extractor.layers.empty()) infer_shapes(extractor);
  return extractor;
}

namespace {

struct SplitData {
  Dataset train, val;
};

SplitData make_dataset(const RunConfig& config, bool target) {
  Dataset full;
  if (config.data.kind == "synthetic") {
    std::mt19937_64 rng(derive_seed(config.seed, target ? 0x7a6765742eull : 0x736f757263ull));
    full = generate_synthetic(config.data.classes, config.data.samples_per_class,
                              config.data.height, config.data.width, config.data.channels, rng,
                              target ? SyntheticStyle::Target : SyntheticStyle::Source);
  } else {
    full = load_idx(target ? config.data.target_images : config.data.source_images,
                    target ? config.data.target_labels : config.data.source_labels);
  }
  std::mt19937_64 split_rng(derive_seed(config.seed, target ? 0x9d01ull : 0x9d02ull));
  auto [train, val] = split(full, config.data.val_fraction, split_rng);
  return {std::move(train), std::move(val)};
}

json config_to_json(const HeadConfig& config) {
  json j;
  j["conv"] = json::array();
  for (const auto& c : config.conv)
    j["conv"].push_back({{"filter_size", c.filter_size},
                         {"num_filters", c.num_filters},
                         {"activation", activation_name(c.activation)}});
  if (config.pool_size)
    j["pool_size"] = *config.pool_size;
  else
    j["pool_size"] = nullptr;
  j["fc"] = json::array();
  for (const auto& f : config.fc)
    j["fc"].push_back({{"neurons", f.neurons},
                       {"activation", activation_name(f.activation)},
                       {"dropout", f.dropout}});
  return j;
}

void write_json_file(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

json metrics_json(const NetworkSpec& spec, double accuracy) {
  auto params = count_params(spec);
  return {{"accuracy", accuracy},
          {"total_params", params.total},
          {"trainable_params", params.trainable},
          {"flops", count_flops(spec)}};
}

// Per-configuration evaluation seed: stable across tune/oracle so the same
// head always trains identically.
std::uint64_t config_seed(const RunConfig& config, const HeadConfig& head) {
  return derive_seed(config.seed, fnv1a64(to_string(head)));
}

struct HeadTrainResult {
  NetworkSpec spec;
  ModelState model;
  double accuracy = 0.0;
};

HeadTrainResult train_head(const Dataset& train_features, const Dataset& val_features,
                           const HeadConfig& head, std::uint64_t seed,
                           const TuneStageConfig& tune_cfg) {
  HeadTrainResult out;
  out.spec = build_head_spec(head, train_features.h, train_features.w, train_features.c,
                             train_features.class_count);
  infer_shapes(out.spec);
  out.model = init_model(out.spec, seed);
  auto weights = class_weights(train_features);
  TrainOptions topt;
  topt.epochs = tune_cfg.proxy_epochs;
  topt.batch_size = tune_cfg.batch_size;
  topt.shuffle_seed = seed ^ 0xd1b54a32d192ed03ull;
  out.accuracy =
      train(out.model, out.spec, train_features, val_features, weights, nullptr, nullptr, topt)
          .best_val_accuracy;
  return out;
}

HeadTrainResult train_full(const NetworkSpec& extractor, const ModelState& backbone,
                           const Dataset& train_data, const Dataset& val_data,
                           const HeadConfig& head, std::uint64_t seed,
                           const TuneStageConfig& tune_cfg) {
  // finetune_backbone path: the whole assembled network trains
  auto shapes = extractor.layers.empty() ? std::vector<LayerShape>{} : infer_shapes(extractor);
  std::size_t h = train_data.h, w = train_data.w, c = train_data.c;
  if (!shapes.empty()) {
    const auto& last = shapes.back();
    h = last.spatial ? last.h : 1;
    w = last.spatial ? last.w : 1;
    c = last.spatial ? last.c : last.units;
  }
  auto head_spec = build_head_spec(head, h, w, c, train_data.class_count);

  HeadTrainResult out;
  out.spec.input_h = train_data.h;
  out.spec.input_w = train_data.w;
  out.spec.input_c = train_data.c;
  out.spec.residual_groups = extractor.residual_groups;
  for (auto layer : extractor.layers) {
    layer.trainable = true;
    out.spec.layers.push_back(layer);
  }
  for (const auto& layer : head_spec.layers) out.spec.layers.push_back(layer);
  infer_shapes(out.spec);

  auto head_model = init_model(head_spec, seed);
  out.model.dropout_rng = head_model.dropout_rng;
  for (std::size_t i = 0; i < extractor.layers.size(); ++i)
    out.model.layers.push_back(backbone.layers[i]);
  for (auto& state : head_model.layers) out.model.layers.push_back(std::move(state));

  auto weights = class_weights(train_data);
  TrainOptions topt;
  topt.epochs = tune_cfg.proxy_epochs;
  topt.batch_size = tune_cfg.batch_size;
  topt.shuffle_seed = seed ^ 0xd1b54a32d192ed03ull;
  out.accuracy =
      train(out.model, out.spec, train_data, val_data, weights, nullptr, nullptr, topt)
          .best_val_accuracy;
  return out;
}

// extractor (frozen) + freshly trained head, as one checkpointable network
Checkpoint assemble_full(const NetworkSpec& extractor, const ModelState& backbone,
                         const HeadTrainResult& head, const Dataset& input_shape_src) {
  Checkpoint full;
  full.spec.input_h = input_shape_src.h;
  full.spec.input_w = input_shape_src.w;
  full.spec.input_c = input_shape_src.c;
  full.spec.layers = extractor.layers;
  full.spec.residual_groups = extractor.residual_groups;
  for (const auto& layer : head.spec.layers) full.spec.layers.push_back(layer);
  for (std::size_t i = 0; i < extractor.layers.size(); ++i)
    full.model.layers.push_back(backbone.layers[i]);
  for (const auto& state : head.model.layers) full.model.layers.push_back(state);
  full.model.dropout_rng = head.model.dropout_rng;
  infer_shapes(full.spec);
  return full;
}

}  // namespace

int cmd_pretrain(const RunConfig& config) {
  RunPaths paths{config.out_dir};
  std::filesystem::create_directories(paths.out_dir);

  auto data = make_dataset(config, /*target=*/false);
  auto spec = backbone_spec_from_config(config);
  auto model = init_model(spec, derive_seed(config.seed, 0x11ull));
  auto weights = class_weights(data.train);

  TrainOptions topt;
  topt.epochs = config.pretrain.epochs;
  topt.batch_size = config.pretrain.batch_size;
  topt.shuffle_seed = derive_seed(config.seed, 0x12ull);
  auto result = train(model, spec, data.train, data.val, weights, nullptr, nullptr, topt);

  save_checkpoint(paths.backbone_checkpoint().string(), spec, model);
  write_json_file(paths.pretrain_metrics(), metrics_json(spec, result.best_val_accuracy));
  log_info("pretrain: source validation accuracy " + std::to_string(result.best_val_accuracy));
  return exit_code::kOk;
}

int cmd_tune(const RunConfig& config, const std::string& backbone_path) {
  RunPaths paths{config.out_dir};
  std::filesystem::create_directories(paths.out_dir);
  auto cp = load_checkpoint(
      backbone_path.empty() ? paths.backbone_checkpoint().string() : backbone_path);

  auto data = make_dataset(config, /*target=*/true);
  auto extractor = make_extractor(cp.spec, config.tune.replace_top_k);

  Dataset train_features, val_features;
  if (!config.tune.finetune_backbone) {
    train_features = extract_features(cp.model, extractor, data.train);
    val_features = extract_features(cp.model, extractor, data.val);
  }

  ObjectiveFn objective = [&](const HeadConfig& head) {
    std::uint64_t seed = config_seed(config, head);
    if (config.tune.finetune_backbone)
      return train_full(extractor, cp.model, data.train, data.val, head, seed, config.tune)
          .accuracy;
    return train_head(train_features, val_features, head, seed, config.tune).accuracy;
  };

  std::ofstream log_out(paths.search_log());
  if (!log_out) fail(ErrorCode::IoError, "cannot write " + paths.search_log().string());
  std::size_t index = 0;
  ObservationSink sink = [&](const Observation& obs) {
    json record{{"index", index++},
                {"accuracy", obs.accuracy},
                {"epoch_budget", obs.epoch_budget},
                {"config", config_to_json(obs.config)},
                {"point", obs.point.v}};
    log_out << record.dump() << "\n";
  };

  TuneOptions topt;
  topt.k0 = config.tune.k0;
  topt.total_budget = config.tune.budget;
  topt.candidates_per_step = config.tune.candidates_per_step;
  topt.epoch_budget = config.tune.proxy_epochs;
  std::mt19937_64 rng(derive_seed(config.seed, 0x21ull));
  auto result = tune(config.space, objective, topt, rng, sink);
  log_out.close();

  // materialize the winning head deterministically (same seed as its scoring)
  Checkpoint tuned;
  double tuned_accuracy = result.best.accuracy;
  std::uint64_t seed = config_seed(config, result.best.config);
  if (config.tune.finetune_backbone) {
    auto best = train_full(extractor, cp.model, data.train, data.val, result.best.config, seed,
                           config.tune);
    tuned.spec = best.spec;
    tuned.model = best.model;
  } else {
    auto best = train_head(train_features, val_features, result.best.config, seed, config.tune);
    tuned = assemble_full(extractor, cp.model, best, data.train);
  }
  save_checkpoint(paths.tuned_checkpoint().string(), tuned.spec, tuned.model);

  json best_json{{"accuracy", tuned_accuracy},
                 {"config", config_to_json(result.best.config)},
                 {"point", result.best.point.v},
                 {"k0", result.k0},
                 {"budget", result.total_budget},
                 {"evaluations", result.history.size()}};
  auto metrics = metrics_json(tuned.spec, tuned_accuracy);
  best_json["total_params"] = metrics["total_params"];
  best_json["trainable_params"] = metrics["trainable_params"];
  best_json["flops"] = metrics["flops"];
  write_json_file(paths.best_config(), best_json);
  log_info("tune: best validation accuracy " + std::to_string(tuned_accuracy) + " with " +
           to_string(result.best.config));
  return exit_code::kOk;
}

int cmd_prune(const RunConfig& config, const std::string& model_path) {
  RunPaths paths{config.out_dir};
  std::filesystem::create_directories(paths.out_dir);
  auto cp =
      load_checkpoint(model_path.empty() ? paths.tuned_checkpoint().string() : model_path);

  // stage two finetunes the whole network while pruning
  for (auto& layer : cp.spec.layers) layer.trainable = true;

  auto data = make_dataset(config, /*target=*/true);
  auto weights = class_weights(data.train);

  SnapshotStore store;
  store.eligibility_threshold = config.prune.eligibility_threshold;
  TrainOptions topt;
  topt.epochs = config.prune.epochs_each;
  topt.batch_size = config.prune.batch_size;
  topt.shuffle_seed = derive_seed(config.seed, 0x31ull);
  auto initial =
      train(cp.model, cp.spec, data.train, data.val, weights, nullptr, &store, topt);

  const auto baseline_params = count_params(cp.spec);
  const auto baseline_flops = count_flops(cp.spec);

  PruneOptions popts;
  popts.rate = config.prune.rate;
  popts.min_diff = config.prune.min_diff;
  popts.epochs_each = config.prune.epochs_each;
  popts.eligibility_threshold = config.prune.eligibility_threshold;
  popts.batch_size = config.prune.batch_size;
  popts.seed = derive_seed(config.seed, 0x32ull);
  auto result = prune_loop(std::move(cp.model), std::move(cp.spec), data.train, data.val,
                           weights, std::move(store), initial.best_val_accuracy, popts);

  std::ofstream log_out(paths.prune_log());
  if (!log_out) fail(ErrorCode::IoError, "cannot write " + paths.prune_log().string());
  for (const auto& it : result.iterations) {
    json victims = json::object();
    for (const auto& [layer, idx] : it.victims) victims[std::to_string(layer)] = idx;
    json record{{"iteration", it.iteration},
                {"val_accuracy", it.val_accuracy},
                {"total_params", it.params.total},
                {"trainable_params", it.params.trainable},
                {"flops", it.flops},
                {"victims", victims}};
    log_out << record.dump() << "\n";
  }
  log_out.close();

  save_checkpoint(paths.pruned_checkpoint().string(), result.spec, result.model);

  auto final_params = count_params(result.spec);
  auto final_flops = count_flops(result.spec);
  json summary{{"initial_accuracy", initial.best_val_accuracy},
               {"final_accuracy", result.accuracy},
               {"iterations", result.iterations.size()},
               {"baseline_total_params", baseline_params.total},
               {"baseline_trainable_params", baseline_params.trainable},
               {"baseline_flops", baseline_flops},
               {"total_params", final_params.total},
               {"trainable_params", final_params.trainable},
               {"flops", final_flops},
               {"flop_reduction", 1.0 - static_cast<double>(final_flops) /
                                            static_cast<double>(baseline_flops)}};
  write_json_file(paths.prune_summary(), summary);
  log_info("prune: kept accuracy " + std::to_string(result.accuracy) + " over " +
           std::to_string(result.iterations.size()) + " iterations");
  return exit_code::kOk;
}

int cmd_oracle(const RunConfig& config) {
  RunPaths paths{config.out_dir};
  std::filesystem::create_directories(paths.out_dir);
  auto cp = load_checkpoint(paths.backbone_checkpoint().string());

  auto data = make_dataset(config, /*target=*/true);
  auto extractor = make_extractor(cp.spec, config.tune.replace_top_k);
  auto train_features = extract_features(cp.model, extractor, data.train);
  auto val_features = extract_features(cp.model, extractor, data.val);

  auto all = enumerate_space(config.space, config.oracle_cap);

  std::ofstream log_out(paths.oracle_log());
  if (!log_out) fail(ErrorCode::IoError, "cannot write " + paths.oracle_log().string());
  double best_acc = -1.0;
  HeadConfig best_config;
  for (std::size_t i = 0; i < all.size(); ++i) {
    double acc = 0.0;
    try {
      if (config.tune.finetune_backbone) {
        acc = train_full(extractor, cp.model, data.train, data.val, all[i],
                         config_seed(config, all[i]), config.tune)
                  .accuracy;
      } else {
        acc = train_head(train_features, val_features, all[i], config_seed(config, all[i]),
                         config.tune)
                  .accuracy;
      }
    } catch (const Error& e) {
      log_info(std::string("oracle evaluation failed, scoring 0: ") + e.what());
    }
    json record{{"index", i}, {"accuracy", acc}, {"config", config_to_json(all[i])}};
    log_out << record.dump() << "\n";
    if (acc > best_acc) {
      best_acc = acc;
      best_config = all[i];
    }
  }
  log_out.close();
  write_json_file(paths.oracle_best(),
                  {{"accuracy", best_acc},
                   {"config", config_to_json(best_config)},
                   {"evaluations", all.size()}});
  log_info("oracle: brute-force best accuracy " + std::to_string(best_acc));
  return exit_code::kOk;
}

int cmd_report(const RunConfig& config) {
  RunPaths paths{config.out_dir};
  json report = json::object();

  auto read_json = [](const std::filesystem::path& p) -> json {
    std::ifstream in(p);
    if (!in) return {};
    json j;
    in >> j;
    return j;
  };

  struct Row {
    std::string stage;
    double accuracy;
    unsigned long long total, trainable, flops;
  };
  std::vector<Row> rows;

  if (std::filesystem::exists(paths.pretrain_metrics())) {
    auto j = read_json(paths.pretrain_metrics());
    rows.push_back({"pretrained (source)", j["accuracy"], j["total_params"],
                    j["trainable_params"], j["flops"]});
  }
  if (std::filesystem::exists(paths.best_config())) {
    auto j = read_json(paths.best_config());
    rows.push_back({"tuned (target)", j["accuracy"], j["total_params"], j["trainable_params"],
                    j["flops"]});
  }
  if (std::filesystem::exists(paths.prune_summary())) {
    auto j = read_json(paths.prune_summary());
    rows.push_back({"pruned (target)", j["final_accuracy"], j["total_params"],
                    j["trainable_params"], j["flops"]});
  }
  if (rows.empty())
    fail(ErrorCode::IoError, "no run artifacts found under " + paths.out_dir.string());

  // the tuned (pre-pruning) model is the FLOP baseline
  double baseline = 0.0;
  for (const auto& row : rows)
    if (row.stage.rfind("tuned", 0) == 0) baseline = static_cast<double>(row.flops);
  if (baseline == 0.0) baseline = static_cast<double>(rows.front().flops);

  std::ostringstream table;
  table << std::left << std::setw(22) << "stage" << std::right << std::setw(10) << "accuracy"
        << std::setw(14) << "params" << std::setw(14) << "trainable" << std::setw(16)
        << "flops" << std::setw(12) << "reduction" << "\n";
  report["rows"] = json::array();
  for (const auto& row : rows) {
    double reduction = 1.0 - static_cast<double>(row.flops) / baseline;
    table << std::left << std::setw(22) << row.stage << std::right << std::setw(10)
          << std::fixed << std::setprecision(4) << row.accuracy << std::setw(14) << row.total
          << std::setw(14) << row.trainable << std::setw(16) << row.flops << std::setw(11)
          << std::setprecision(2) << reduction * 100.0 << "%" << "\n";
    report["rows"].push_back({{"stage", row.stage},
                              {"accuracy", row.accuracy},
                              {"total_params", row.total},
                              {"trainable_params", row.trainable},
                              {"flops", row.flops},
                              {"flop_reduction", reduction}});
  }

  // per-iteration prune plan, human readable
  if (std::filesystem::exists(paths.prune_log())) {
    std::ifstream in(paths.prune_log());
    std::string line;
    table << "\nprune iterations:\n";
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = json::parse(line);
      table << "  #" << j["iteration"] << " accuracy " << std::setprecision(4) << std::fixed
            << j["val_accuracy"].get<double>() << " flops " << j["flops"].get<std::uint64_t>()
            << " victims";
      for (auto& [layer, idx] : j["victims"].items()) {
        table << " layer" << layer << "[";
        for (std::size_t i = 0; i < idx.size(); ++i)
          table << (i ? "," : "") << idx[i].get<std::size_t>();
        table << "]";
      }
      table << "\n";
    }
  }

  std::ofstream text_out(paths.report_text());
  text_out << table.str();
  write_json_file(paths.report_json(), report);
  std::cout << table.str();
  return exit_code::kOk;
}

int cmd_run(const RunConfig& config) {
  if (int rc = cmd_pretrain(config); rc != exit_code::kOk) return rc;
  if (int rc = cmd_tune(config); rc != exit_code::kOk) return rc;
  if (int rc = cmd_prune(config); rc != exit_code::kOk) return rc;
  return cmd_report(config);
}

int exit_code_for(const Error& error) {
  switch (error.code()) {
    case ErrorCode::InvalidConfig:
      return exit_code::kConfigError;
    case ErrorCode::SpaceTooLarge:
      return exit_code::kCapacityError;
    default:
      return exit_code::kRuntimeError;
  }
}

}  // namespace tascforge
