#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "petnas/criterion.hpp"
#include "petnas/model.hpp"
#include "petnas/pet.hpp"

namespace petnas {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Piecewise-linear learning rate: 0 -> peak over the warmup steps, then
// peak -> 0 at total_steps. Steps are 1-based.
struct Schedule {
  int total_steps = 1;
  double warmup_fraction = 0.06;
  double peak_lr = 3e-4;

  int warmup_steps() const;
  double lr(int step) const;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamSettings settings);

  // Applies one update using each parameter's current gradient (absent
  // buffers count as zero).
  void step(double lr);
  int steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  AdamSettings s_;
  int t_ = 0;
};

struct StepLog {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double accuracy = -1.0;  // -1 = not evaluated at this step
};

struct TrainSettings {
  int epochs = 6;
  int batch_size = 16;
  double peak_lr = 3e-4;
  double warmup_fraction = 0.06;
  AdamSettings adam;
  uint64_t shuffle_seed = 0;
};

struct TrainResult {
  std::vector<StepLog> history;
  double final_loss = 0.0;
};

using StepCallback = std::function<void(int step, const PetSet& pets)>;

// One full SGD run over the PET parameters and the classifier head. The
// frozen base is untouched. When an accumulator is given, observe_step runs
// every step after backward and before the Adam update. Throws
// DivergenceError with the step index if the loss goes non-finite.
TrainResult train(const FrozenParams& model, Classifier& head, PetSet& pets,
                  const std::vector<Example>& data, const TrainSettings& settings,
                  CriterionAccumulator* acc = nullptr, const StepCallback& callback = {});

struct EvalMetrics {
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

// End-of-training evaluation over a full split; deterministic.
EvalMetrics evaluate(const FrozenParams& model, const Classifier& head, const PetSet* pets,
                     const std::vector<Example>& split);

void write_history_csv(const std::vector<StepLog>& history, std::ostream& out);

}  // namespace petnas
