#include "petnas/criterion.hpp"

#include <functional>
#include <ostream>
#include <tuple>

#include "petnas/errors.hpp"

namespace petnas {

CriterionMode criterion_mode_from_string(const std::string& s) {
  if (s == "averaged") return CriterionMode::averaged;
  if (s == "last_step") return CriterionMode::last_step;
  throw ConfigError("unknown criterion mode \"" + s + "\" (expected averaged|last_step)");
}

const char* to_string(CriterionMode mode) {
  return mode == CriterionMode::averaged ? "averaged" : "last_step";
}

const char* to_string(PruneKind kind) {
  switch (kind) {
    case PruneKind::whole_bias: return "whole_bias";
    case PruneKind::bias_entry: return "bias_entry";
    case PruneKind::lora_column: return "lora_column";
    case PruneKind::lora_entry: return "lora_entry";
  }
  return "?";
}

bool prune_order_less(const PruneOp& a, const PruneOp& b) {
  if (a.score != b.score) return a.score < b.score;
  return std::tuple(a.layer, static_cast<int>(a.site), static_cast<int>(a.kind),
                    static_cast<int>(a.part), a.index) <
         std::tuple(b.layer, static_cast<int>(b.site), static_cast<int>(b.kind),
                    static_cast<int>(b.part), b.index);
}

namespace {

// Per-step contribution of one tensor: sum[i] += -theta_i * g_i.
void accumulate(const Tensor& t, std::vector<double>& sum, std::vector<double>& last,
                int offset) {
  if (!t.has_grad())
    throw InternalError("criterion: no gradient for tracked PET parameter; observe_step must "
                        "run after backward");
  const auto& theta = t.values();
  const auto& g = t.grad_view();
  for (int i = 0; i < t.size(); ++i) {
    const double c = -theta[i] * g[i];
    sum[offset + i] += c;
    last[offset + i] = c;
  }
}

}  // namespace

CriterionAccumulator::CriterionAccumulator(const PetSet& pets) {
  slots_.resize(pets.pet_count());
  for (const BiasDelta& b : pets.biases) {
    slots_[b.pet_id].sum.assign(b.delta.size(), 0.0);
    slots_[b.pet_id].last.assign(b.delta.size(), 0.0);
  }
  for (const LoRAUpdate& l : pets.loras) {
    slots_[l.pet_id].sum.assign(l.u.size() + l.v.size(), 0.0);
    slots_[l.pet_id].last.assign(l.u.size() + l.v.size(), 0.0);
  }
}

void CriterionAccumulator::observe_step(const PetSet& pets) {
  for (const BiasDelta& b : pets.biases)
    accumulate(b.delta, slots_[b.pet_id].sum, slots_[b.pet_id].last, 0);
  for (const LoRAUpdate& l : pets.loras) {
    accumulate(l.u, slots_[l.pet_id].sum, slots_[l.pet_id].last, 0);
    accumulate(l.v, slots_[l.pet_id].sum, slots_[l.pet_id].last, l.u.size());
  }
  ++steps_;
}

double CriterionAccumulator::averaged(int pet_id, int flat_index) const {
  if (steps_ == 0) throw UsageError("criterion: no steps observed");
  return slots_.at(pet_id).sum.at(flat_index) / steps_;
}

double CriterionAccumulator::last(int pet_id, int flat_index) const {
  if (steps_ == 0) throw UsageError("criterion: no steps observed");
  return slots_.at(pet_id).last.at(flat_index);
}

double CriterionAccumulator::value(CriterionMode mode, int pet_id, int flat_index) const {
  return mode == CriterionMode::averaged ? averaged(pet_id, flat_index)
                                         : last(pet_id, flat_index);
}

namespace {

// Shared op enumeration; value_fn supplies each entry's criterion.
std::vector<PruneOp> build_ops(const PetSet& pets,
                               const std::function<double(int, int)>& value_fn,
                               bool include_v_columns) {
  std::vector<PruneOp> ops;

  for (const BiasDelta& b : pets.biases) {
    if (b.structured) {
      PruneOp op;
      op.kind = PruneKind::whole_bias;
      op.pet_id = b.pet_id;
      op.layer = b.site.layer;
      op.site = b.site.name;
      op.param_count = b.param_count();
      if (op.param_count == 0) continue;  // already pruned
      double s = 0.0;
      for (int i = 0; i < b.delta.size(); ++i)
        if (b.mask[i]) s += value_fn(b.pet_id, i);
      op.score = s;
      ops.push_back(op);
    } else {
      for (int i = 0; i < b.delta.size(); ++i) {
        if (!b.mask[i]) continue;
        PruneOp op;
        op.kind = PruneKind::bias_entry;
        op.pet_id = b.pet_id;
        op.index = i;
        op.layer = b.site.layer;
        op.site = b.site.name;
        op.param_count = 1;
        op.score = value_fn(b.pet_id, i);
        ops.push_back(op);
      }
    }
  }

  for (const LoRAUpdate& l : pets.loras) {
    const int out = l.out_dim(), in = l.in_dim(), r = l.rank;
    if (l.structured) {
      for (int j = 0; j < r; ++j) {
        if (!l.column_kept(j)) continue;
        PruneOp op;
        op.kind = PruneKind::lora_column;
        op.pet_id = l.pet_id;
        op.index = j;
        op.layer = l.site.layer;
        op.site = l.site.name;
        int count = 0;
        for (int i = 0; i < out; ++i) count += l.mask_u[i * r + j] ? 1 : 0;
        for (int i = 0; i < in; ++i) count += l.mask_v[i * r + j] ? 1 : 0;
        op.param_count = count;
        // the criterion sums over the U column; V's column is optional
        double s = 0.0;
        for (int i = 0; i < out; ++i)
          if (l.mask_u[i * r + j]) s += value_fn(l.pet_id, i * r + j);
        if (include_v_columns)
          for (int i = 0; i < in; ++i)
            if (l.mask_v[i * r + j]) s += value_fn(l.pet_id, out * r + i * r + j);
        op.score = s;
        ops.push_back(op);
      }
    } else {
      for (int i = 0; i < out * r; ++i) {
        if (!l.mask_u[i]) continue;
        PruneOp op;
        op.kind = PruneKind::lora_entry;
        op.pet_id = l.pet_id;
        op.part = LoraPart::u;
        op.index = i;
        op.layer = l.site.layer;
        op.site = l.site.name;
        op.param_count = 1;
        op.score = value_fn(l.pet_id, i);
        ops.push_back(op);
      }
      for (int i = 0; i < in * r; ++i) {
        if (!l.mask_v[i]) continue;
        PruneOp op;
        op.kind = PruneKind::lora_entry;
        op.pet_id = l.pet_id;
        op.part = LoraPart::v;
        op.index = i;
        op.layer = l.site.layer;
        op.site = l.site.name;
        op.param_count = 1;
        op.score = value_fn(l.pet_id, out * r + i);
        ops.push_back(op);
      }
    }
  }
  return ops;
}

}  // namespace

std::vector<PruneOp> score_ops(const CriterionAccumulator& acc, const PetSet& pets,
                               CriterionMode mode, bool include_v_columns) {
  if (acc.steps() == 0) throw UsageError("score_ops: no steps observed");
  return build_ops(
      pets, [&](int pet_id, int flat) { return acc.value(mode, pet_id, flat); },
      include_v_columns);
}

std::vector<PruneOp> enumerate_ops(const PetSet& pets) {
  return build_ops(pets, [](int, int) { return 0.0; }, false);
}

void write_scores_csv(const std::vector<PruneOp>& ops, std::ostream& out) {
  out << "pet_id,kind,index,param_count,score\n";
  char buf[64];
  for (const PruneOp& op : ops) {
    std::snprintf(buf, sizeof buf, "%.17g", op.score);
    out << op.pet_id << ',' << to_string(op.kind)
        << (op.kind == PruneKind::lora_entry ? (op.part == LoraPart::u ? ".u" : ".v") : "")
        << ',' << op.index << ',' << op.param_count << ',' << buf << '\n';
  }
}

}  // namespace petnas
