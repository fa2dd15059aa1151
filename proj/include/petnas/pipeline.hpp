#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "petnas/config.hpp"
#include "petnas/criterion.hpp"
#include "petnas/train.hpp"

namespace petnas {

struct PruneResult {
  std::vector<PruneOp> applied;  // in application order
  int final_count = 0;
  bool no_op = false;  // budget >= starting count, nothing applied
};

// Applies ops in increasing criterion order (documented tie-break) until the
// parameter count drops to or below the budget.
PruneResult prune_to_budget(std::vector<PruneOp> ops, int current_count, int budget);

// Turns applied ops into masks: entries/columns/vectors flip to false and
// their values are zeroed.
void apply_prune_ops(PetSet& pets, const std::vector<PruneOp>& applied);

// Full snapshot of initial PET and classifier values; replaying it restores
// initial values bitwise, independent of mask-dependent rng draw order.
struct InitRecord {
  std::vector<std::vector<double>> bias_values;
  std::vector<std::pair<std::vector<double>, std::vector<double>>> lora_values;
  std::vector<double> head_weight;
  std::vector<double> head_bias;
};

InitRecord snapshot_init(const PetSet& pets, const Classifier& head);
// Copies recorded values back, then zeroes masked entries.
void restore_init(PetSet& pets, Classifier& head, const InitRecord& record);
// Checks surviving entries bitwise against the record and pruned entries
// against zero; throws InternalError on violation.
void verify_restoration(const PetSet& pets, const Classifier& head, const InitRecord& record);

struct PetArchEntry {
  int layer = 0;
  SiteName site = SiteName::attention_query;
  bool is_lora = false;
  bool structured = false;
  int rank = 0;  // 0 for bias entries
  std::vector<uint8_t> mask;    // bias
  std::vector<uint8_t> mask_u;  // lora
  std::vector<uint8_t> mask_v;
};

// The surviving PET architecture; together with the RunConfig it reproduces
// the retrain run exactly.
struct ArchitectureSpec {
  TransformerConfig model;
  std::vector<PetArchEntry> pets;
  int budget = 0;
  int params_initial = 0;
  int params_final = 0;
  CriterionMode criterion = CriterionMode::averaged;
  LoraInit lora_init = LoraInit::balanced;
  uint64_t model_seed = 0;
  uint64_t data_seed = 0;
  uint64_t run_seed = 0;
  double val_accuracy = 0.0;
  // stage timings in seconds; excluded from determinism comparisons
  double train_seconds = 0.0;
  double prune_seconds = 0.0;
  double retrain_seconds = 0.0;
};

nlohmann::ordered_json spec_to_json(const ArchitectureSpec& spec);
ArchitectureSpec spec_from_json(const nlohmann::json& j);

// Applies a spec's masks onto a freshly built PetSet (shape-checked).
void apply_spec_masks(PetSet& pets, const ArchitectureSpec& spec);

struct RunMetrics {
  double initial_train_loss = 0.0;
  double final_train_loss = 0.0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
  int params_initial = 0;
  int params_final = 0;
};

struct NasResult {
  ArchitectureSpec spec;
  RunMetrics metrics;
  std::vector<StepLog> initial_history;
  std::vector<StepLog> retrain_history;
  std::vector<PruneOp> scored;   // every prunable unit with its score
  std::vector<PruneOp> applied;  // the pruned prefix
  bool prune_was_no_op = false;
  InitRecord init_record;
};

// Base model and task data shared by every seed of an experiment.
struct RunContext {
  FrozenParams model;
  Splits data;
};

// Builds the base (seeded or from checkpoint), applies the optional
// pretraining warm-up, freezes it, and generates the task.
RunContext prepare_context(const RunConfig& cfg);

using Logger = std::function<void(const std::string&)>;

// The one-shot NAS pipeline: train with criterion accumulation, score,
// prune to budget, restore surviving parameters to their recorded initial
// values, retrain with a fresh optimizer, evaluate.
NasResult run_nas(const RunContext& ctx, const RunConfig& cfg, uint64_t run_seed,
                  const Logger& log = {});

enum class BaselineKind { random_mask, last_step_criterion, full };
BaselineKind baseline_kind_from_string(const std::string& s);
const char* to_string(BaselineKind kind);

// Same protocol with a different selection rule: random masks to budget,
// last-step criterion scores, or no pruning at all.
NasResult run_baseline(const RunContext& ctx, const RunConfig& cfg, uint64_t run_seed,
                       BaselineKind kind, const Logger& log = {});

// Trains all base parameters on the task distribution for a fixed number of
// steps, then re-freezes; pretrain examples avoid the validation split.
void pretrain_warmup(FrozenParams& model, const TaskSpec& task, const Splits& final_splits,
                     int steps, double lr);

}  // namespace petnas
