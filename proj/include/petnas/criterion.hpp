#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "petnas/pet.hpp"

namespace petnas {

enum class CriterionMode { averaged, last_step };

CriterionMode criterion_mode_from_string(const std::string& s);
const char* to_string(CriterionMode mode);

enum class PruneKind { whole_bias, bias_entry, lora_column, lora_entry };
const char* to_string(PruneKind kind);

enum class LoraPart { u, v };

// One candidate pruning action with its accumulated criterion score.
struct PruneOp {
  PruneKind kind = PruneKind::bias_entry;
  int pet_id = -1;
  LoraPart part = LoraPart::u;  // lora_entry only
  int index = 0;                // entry index, or column index; 0 for whole_bias
  int param_count = 0;
  double score = 0.0;

  // tie-break key: stable site order, then kind, then index
  int layer = -1;
  SiteName site = SiteName::classifier;
};

// Orders by score ascending; ties broken by (layer, site, kind, part, index).
bool prune_order_less(const PruneOp& a, const PruneOp& b);

// Per-parameter running sum of the instantaneous first-order criterion
// -theta * dL/dtheta, observed once per SGD step between backward and the
// optimizer update. The layout mirrors the PetSet: one slot per pet, bias
// entries first for bias pets, U entries then V entries for LoRA pets.
class CriterionAccumulator {
 public:
  explicit CriterionAccumulator(const PetSet& pets);

  // theta and its gradient must come from the same step.
  void observe_step(const PetSet& pets);

  int steps() const { return steps_; }
  double averaged(int pet_id, int flat_index) const;
  double last(int pet_id, int flat_index) const;
  double value(CriterionMode mode, int pet_id, int flat_index) const;

 private:
  struct Slot {
    std::vector<double> sum;
    std::vector<double> last;
  };
  std::vector<Slot> slots_;
  int steps_ = 0;
};

// Expands the accumulated criterion into one PruneOp per prunable unit,
// honoring each PET's structured/unstructured mode. Already-masked units are
// not offered again. Structured LoRA scores sum over the U column;
// include_v_columns adds the matching V column's criterion.
std::vector<PruneOp> score_ops(const CriterionAccumulator& acc, const PetSet& pets,
                               CriterionMode mode, bool include_v_columns = false);

// Same op enumeration with all scores zero; baselines assign their own.
std::vector<PruneOp> enumerate_ops(const PetSet& pets);

// Columns: pet_id, kind, index, param_count, score.
void write_scores_csv(const std::vector<PruneOp>& ops, std::ostream& out);

}  // namespace petnas
