#pragma once

#include <fstream>
#include <initializer_list>
#include <string>

#include <nlohmann/json.hpp>

#include "eggscan/augment.hpp"
#include "eggscan/classifier.hpp"
#include "eggscan/errors.hpp"
#include "eggscan/eval.hpp"
#include "eggscan/fusion.hpp"
#include "eggscan/patching.hpp"
#include "eggscan/rng.hpp"
#include "eggscan/synth.hpp"

namespace eggscan {

struct FusionSettings {
  double sigma = 1.0;
  double threshold = 0.5;

  void check_valid() const {
    if (!(sigma > 0.0)) throw config_error("fusion.sigma must be > 0");
    if (!(threshold >= 0.0 && threshold <= 1.0))
      throw config_error("fusion.threshold must be in [0,1]");
  }
};

// Everything a run needs, resolved before any work starts. Serialized into
// run.json so a run can be replayed from its own output.
struct PipelineConfig {
  GridConfig grid;
  AugmentSpec augment;
  TrainConfig train;
  FusionSettings fusion;
  SplitSpec split;
  SynthSpec synth;
  std::string backend = "reference";  // "reference" or cmd:"shell command"

  void check_valid() const {
    grid.check_valid();
    augment.check_valid();
    train.check_valid();
    fusion.check_valid();
    split.check_valid();
    synth.check_valid();
    if (backend != "reference" && backend.rfind("cmd:", 0) != 0)
      throw config_error("backend must be \"reference\" or \"cmd:...\"");
    if (backend.rfind("cmd:", 0) == 0 && backend.size() == 4)
      throw config_error("backend command line is empty");
  }
};

// One flag seeds every stage; streams stay independent via distinct indices.
inline void apply_master_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.synth.seed = mix_seed(seed, 1);
  cfg.augment.seed = mix_seed(seed, 2);
  cfg.train.seed = mix_seed(seed, 3);
  cfg.split.seed = mix_seed(seed, 4);
}

namespace detail {

inline void require_keys(const nlohmann::json& j, const std::string& scope,
                         std::initializer_list<const char*> allowed) {
  if (!j.is_object())
    throw config_error("config section \"" + scope + "\" must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw config_error("unknown config key: " +
                         (scope.empty() ? it.key() : scope + "." + it.key()));
  }
}

template <typename T>
void read_field(const nlohmann::json& j, const std::string& scope,
                const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return;  // absent fields keep their defaults
  try {
    out = it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw config_error("config field has wrong type: " +
                       (scope.empty() ? std::string(key) : scope + "." + key));
  }
}

}  // namespace detail

inline nlohmann::json config_to_json(const PipelineConfig& cfg) {
  nlohmann::json j;
  j["grid"] = {{"patch_size", cfg.grid.patch_size}, {"stride", cfg.grid.stride}};
  j["augment"] = {{"flip_h_prob", cfg.augment.flip_h_prob},
                  {"flip_v_prob", cfg.augment.flip_v_prob},
                  {"rotation_min_deg", cfg.augment.rotation_min_deg},
                  {"rotation_max_deg", cfg.augment.rotation_max_deg},
                  {"shift_grid", cfg.augment.shift_grid},
                  {"target_per_class", cfg.augment.target_per_class},
                  {"seed", cfg.augment.seed}};
  j["train"] = {{"learning_rate", cfg.train.learning_rate},
                {"momentum", cfg.train.momentum},
                {"batch_size", cfg.train.batch_size},
                {"max_epochs", cfg.train.max_epochs},
                {"validation_fraction", cfg.train.validation_fraction},
                {"seed", cfg.train.seed}};
  j["fusion"] = {{"sigma", cfg.fusion.sigma},
                 {"threshold", cfg.fusion.threshold}};
  j["split"] = {{"test_fraction", cfg.split.test_fraction},
                {"seed", cfg.split.seed}};
  j["synth"] = {{"width", cfg.synth.width},
                {"height", cfg.synth.height},
                {"eggs_min", cfg.synth.eggs_min},
                {"eggs_max", cfg.synth.eggs_max},
                {"class_mix",
                 {cfg.synth.class_mix[0], cfg.synth.class_mix[1],
                  cfg.synth.class_mix[2], cfg.synth.class_mix[3]}},
                {"debris_min", cfg.synth.debris_min},
                {"debris_max", cfg.synth.debris_max},
                {"noise_sigma", cfg.synth.noise_sigma},
                {"seed", cfg.synth.seed}};
  j["backend"] = cfg.backend;
  return j;
}

inline PipelineConfig parse_config(const nlohmann::json& root) {
  using detail::read_field;
  using detail::require_keys;

  // A run.json fed back in as --config replays the run it describes.
  const nlohmann::json* doc = &root;
  if (root.is_object() && root.contains("config") && root.contains("command"))
    doc = &root.at("config");
  const nlohmann::json& j = *doc;

  require_keys(j, "", {"grid", "augment", "train", "fusion", "split", "synth",
                       "backend"});
  PipelineConfig cfg;

  if (j.contains("grid")) {
    const auto& s = j.at("grid");
    require_keys(s, "grid", {"patch_size", "stride"});
    read_field(s, "grid", "patch_size", cfg.grid.patch_size);
    read_field(s, "grid", "stride", cfg.grid.stride);
  }
  if (j.contains("augment")) {
    const auto& s = j.at("augment");
    require_keys(s, "augment",
                 {"flip_h_prob", "flip_v_prob", "rotation_min_deg",
                  "rotation_max_deg", "shift_grid", "target_per_class",
                  "seed"});
    read_field(s, "augment", "flip_h_prob", cfg.augment.flip_h_prob);
    read_field(s, "augment", "flip_v_prob", cfg.augment.flip_v_prob);
    read_field(s, "augment", "rotation_min_deg", cfg.augment.rotation_min_deg);
    read_field(s, "augment", "rotation_max_deg", cfg.augment.rotation_max_deg);
    read_field(s, "augment", "shift_grid", cfg.augment.shift_grid);
    read_field(s, "augment", "target_per_class", cfg.augment.target_per_class);
    read_field(s, "augment", "seed", cfg.augment.seed);
  }
  if (j.contains("train")) {
    const auto& s = j.at("train");
    require_keys(s, "train",
                 {"learning_rate", "momentum", "batch_size", "max_epochs",
                  "validation_fraction", "seed"});
    read_field(s, "train", "learning_rate", cfg.train.learning_rate);
    read_field(s, "train", "momentum", cfg.train.momentum);
    read_field(s, "train", "batch_size", cfg.train.batch_size);
    read_field(s, "train", "max_epochs", cfg.train.max_epochs);
    read_field(s, "train", "validation_fraction",
               cfg.train.validation_fraction);
    read_field(s, "train", "seed", cfg.train.seed);
  }
  if (j.contains("fusion")) {
    const auto& s = j.at("fusion");
    require_keys(s, "fusion", {"sigma", "threshold"});
    read_field(s, "fusion", "sigma", cfg.fusion.sigma);
    read_field(s, "fusion", "threshold", cfg.fusion.threshold);
  }
  if (j.contains("split")) {
    const auto& s = j.at("split");
    require_keys(s, "split", {"test_fraction", "seed"});
    read_field(s, "split", "test_fraction", cfg.split.test_fraction);
    read_field(s, "split", "seed", cfg.split.seed);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    require_keys(s, "synth",
                 {"width", "height", "eggs_min", "eggs_max", "class_mix",
                  "debris_min", "debris_max", "noise_sigma", "seed"});
    read_field(s, "synth", "width", cfg.synth.width);
    read_field(s, "synth", "height", cfg.synth.height);
    read_field(s, "synth", "eggs_min", cfg.synth.eggs_min);
    read_field(s, "synth", "eggs_max", cfg.synth.eggs_max);
    if (s.contains("class_mix")) {
      const auto& mix = s.at("class_mix");
      if (!mix.is_array() || mix.size() != kEggClassCount)
        throw config_error(
            "config field has wrong type: synth.class_mix (need 4 numbers)");
      for (int k = 0; k < kEggClassCount; ++k) {
        if (!mix[k].is_number())
          throw config_error(
              "config field has wrong type: synth.class_mix (need 4 numbers)");
        cfg.synth.class_mix[k] = mix[k].get<double>();
      }
    }
    read_field(s, "synth", "debris_min", cfg.synth.debris_min);
    read_field(s, "synth", "debris_max", cfg.synth.debris_max);
    read_field(s, "synth", "noise_sigma", cfg.synth.noise_sigma);
    read_field(s, "synth", "seed", cfg.synth.seed);
  }
  read_field(j, "", "backend", cfg.backend);

  cfg.check_valid();
  return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config file: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw config_error("config file is not valid JSON: " + path + ": " +
                       e.what());
  }
  return parse_config(root);
}

// Every command drops one of these next to its outputs.
inline void write_run_json(const std::string& path, const std::string& command,
                           const PipelineConfig& cfg,
                           const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  j["command"] = command;
  j["config"] = config_to_json(cfg);
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = *it;
  std::ofstream out(path);
  if (!out) throw io_error("cannot write run file: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw io_error("cannot write run file: " + path);
}

}  // namespace eggscan
