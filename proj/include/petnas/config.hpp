#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "petnas/criterion.hpp"
#include "petnas/data.hpp"
#include "petnas/model.hpp"
#include "petnas/pet.hpp"
#include "petnas/train.hpp"

namespace petnas {

struct ModelSettings {
  TransformerConfig shape;
  uint64_t seed = 1;
  std::string checkpoint;  // optional: load base weights instead of seeding
  // Optional warm-up that trains the base on the task distribution before
  // freezing it, so bias-tuning a random base has something to build on.
  int pretrain_steps = 0;
  double pretrain_lr = 1e-3;
};

struct RunConfig {
  ModelSettings model;
  TaskSpec task;
  SearchSpace space;
  int budget = 0;
  CriterionMode criterion = CriterionMode::averaged;
  LoraInit lora_init = LoraInit::balanced;
  bool structured_lora_include_v = false;
  int epochs = 6;
  int batch_size = 16;
  double peak_lr = 3e-4;
  double warmup_fraction = 0.06;
  AdamSettings adam;
  std::vector<uint64_t> run_seeds = {0, 1, 2, 3, 4};

  TrainSettings train_settings(uint64_t shuffle_seed) const;
  void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::ordered_json config_to_json(const RunConfig& cfg);
RunConfig load_config(const std::string& path);

}  // namespace petnas
