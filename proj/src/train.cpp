#include "petnas/train.hpp"

#include <cmath>
#include <ostream>

#include "petnas/errors.hpp"
#include "petnas/rng.hpp"

namespace petnas {

int Schedule::warmup_steps() const {
  const int w = static_cast<int>(std::ceil(warmup_fraction * total_steps));
  return std::max(1, std::min(w, total_steps));
}

double Schedule::lr(int step) const {
  if (step < 1 || step > total_steps)
    throw UsageError("schedule: step " + std::to_string(step) + " outside [1," +
                     std::to_string(total_steps) + "]");
  const int warmup = warmup_steps();
  if (step <= warmup) return peak_lr * step / warmup;
  if (warmup == total_steps) return peak_lr;
  return peak_lr * (total_steps - step) / (total_steps - warmup);
}

Adam::Adam(std::vector<Tensor> params, AdamSettings settings)
    : params_(std::move(params)), s_(settings) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(s_.beta1, t_);
  const double bc2 = 1.0 - std::pow(s_.beta2, t_);
  for (size_t pi = 0; pi < params_.size(); ++pi) {
    Tensor& p = params_[pi];
    auto& theta = p.values();
    const bool has_grad = p.has_grad();
    const auto& g = p.grad_view();
    auto& m = m_[pi];
    auto& v = v_[pi];
    for (int i = 0; i < p.size(); ++i) {
      const double gi = has_grad ? g[i] : 0.0;
      m[i] = s_.beta1 * m[i] + (1.0 - s_.beta1) * gi;
      v[i] = s_.beta2 * v[i] + (1.0 - s_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + s_.epsilon);
    }
  }
}

TrainResult train(const FrozenParams& model, Classifier& head, PetSet& pets,
                  const std::vector<Example>& data, const TrainSettings& settings,
                  CriterionAccumulator* acc, const StepCallback& callback) {
  if (data.empty()) throw UsageError("train: empty dataset");
  if (settings.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (settings.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");

  const int n = static_cast<int>(data.size());
  const int batches_per_epoch = (n + settings.batch_size - 1) / settings.batch_size;

  Schedule schedule;
  schedule.total_steps = settings.epochs * batches_per_epoch;
  schedule.warmup_fraction = settings.warmup_fraction;
  schedule.peak_lr = settings.peak_lr;

  std::vector<Tensor> params = pets.trainable_tensors();
  params.push_back(head.weight);
  params.push_back(head.bias);
  Adam adam(params, settings.adam);

  Rng shuffle_rng(settings.shuffle_seed);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  TrainResult result;
  result.history.reserve(schedule.total_steps);
  int step = 0;
  for (int epoch = 0; epoch < settings.epochs; ++epoch) {
    // Fisher-Yates with the deterministic rng; same seed, same batch order.
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.uniform_int(i + 1));
      std::swap(order[i], order[j]);
    }
    for (int b = 0; b < batches_per_epoch; ++b) {
      const int begin = b * settings.batch_size;
      const int end = std::min(n, begin + settings.batch_size);
      std::span<const int> batch(order.data() + begin, end - begin);
      ++step;

      Tape tape;
      ForwardResult fwd = forward(model, head, &pets, data, batch);
      const double loss = fwd.loss.item();
      if (!std::isfinite(loss))
        throw DivergenceError(step, "training diverged: non-finite loss at step " +
                                        std::to_string(step));
      tape.backward(fwd.loss);

      pets.zero_masked_grads();
      if (acc) acc->observe_step(pets);

      adam.step(schedule.lr(step));
      // callback sees raw post-update values, before masks re-zero anything
      if (callback) callback(step, pets);
      pets.apply_masks();

      for (Tensor& p : params) p.zero_grad();

      result.history.push_back({step, schedule.lr(step), loss, -1.0});
      result.final_loss = loss;
    }
  }
  return result;
}

EvalMetrics evaluate(const FrozenParams& model, const Classifier& head, const PetSet* pets,
                     const std::vector<Example>& split) {
  if (split.empty()) throw UsageError("evaluate: empty split");
  const int n = static_cast<int>(split.size());
  const int batch_size = 32;
  int correct = 0;
  double loss_sum = 0.0;
  for (int begin = 0; begin < n; begin += batch_size) {
    const int end = std::min(n, begin + batch_size);
    std::vector<int> idx(end - begin);
    for (int i = begin; i < end; ++i) idx[i - begin] = i;
    ForwardResult fwd = forward(model, head, pets, split, idx);
    loss_sum += fwd.loss.item() * (end - begin);
    const int classes = fwd.logits.cols();
    for (int i = 0; i < end - begin; ++i) {
      const double* row = fwd.logits.values().data() + i * classes;
      int best = 0;
      for (int c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
      if (best == split[begin + i].label) ++correct;
    }
  }
  return {static_cast<double>(correct) / n, loss_sum / n};
}

void write_history_csv(const std::vector<StepLog>& history, std::ostream& out) {
  out << "step,lr,loss,accuracy\n";
  char buf[96];
  for (const StepLog& log : history) {
    if (log.accuracy >= 0.0)
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g", log.step, log.lr, log.loss,
                    log.accuracy);
    else
      std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,", log.step, log.lr, log.loss);
    out << buf << '\n';
  }
}

}  // namespace petnas
