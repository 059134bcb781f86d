#pragma once

#include <optional>
#include <string>

#include "json.hpp"
#include "vitbis/data.hpp"
#include "vitbis/model.hpp"
#include "vitbis/optim.hpp"

namespace vitbis {

struct TrainSettings {
  std::int64_t checkpoint_interval = 0;  // 0 writes only the final checkpoint
  std::string loss = "voxelwise";        // voxelwise | combined
  bool eval_on_train = true;
  std::optional<double> target_dice;     // recorded in the manifest when set
};

// One self-contained run description. The root seed drives every random
// stream; the data section's own seed is derived from it at run time.
struct RunConfig {
  std::int64_t version = 1;
  std::uint64_t seed = 0;
  ModelConfig model;
  OptimConfig optim;
  SyntheticSpec data;          // data.count = number of training images
  std::int64_t eval_images = 0;  // separate eval set; 0 evaluates on train
  std::optional<AugmentConfig> augment;
  TrainSettings train;

  void validate() const;
};

// Strict parse: unknown keys anywhere raise UsageError naming the key, so a
// typo cannot silently fall back to a default.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Full echo; parse_run_config(run_config_to_json(c)) reproduces c.
nlohmann::json run_config_to_json(const RunConfig& c);

}  // namespace vitbis
