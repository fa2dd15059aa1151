#include "petnas/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <set>

#include "petnas/checkpoint.hpp"
#include "petnas/errors.hpp"

namespace petnas {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

BiasDelta& bias_by_id(PetSet& pets, int pet_id) {
  for (BiasDelta& b : pets.biases)
    if (b.pet_id == pet_id) return b;
  throw InternalError("no bias PET with id " + std::to_string(pet_id));
}

LoRAUpdate& lora_by_id(PetSet& pets, int pet_id) {
  for (LoRAUpdate& l : pets.loras)
    if (l.pet_id == pet_id) return l;
  throw InternalError("no LoRA PET with id " + std::to_string(pet_id));
}

}  // namespace

PruneResult prune_to_budget(std::vector<PruneOp> ops, int current_count, int budget) {
  if (budget < 0) throw UsageError("prune_to_budget: negative budget");
  int covered = 0;
  for (const PruneOp& op : ops) covered += op.param_count;
  if (covered != current_count)
    throw InternalError("prune ops cover " + std::to_string(covered) +
                        " parameters but the set holds " + std::to_string(current_count));

  PruneResult result;
  result.final_count = current_count;
  if (budget >= current_count) {
    result.no_op = true;
    return result;
  }
  std::sort(ops.begin(), ops.end(), prune_order_less);
  for (const PruneOp& op : ops) {
    if (result.final_count <= budget) break;
    result.applied.push_back(op);
    result.final_count -= op.param_count;
  }
  return result;
}

void apply_prune_ops(PetSet& pets, const std::vector<PruneOp>& applied) {
  for (const PruneOp& op : applied) {
    switch (op.kind) {
      case PruneKind::whole_bias: {
        BiasDelta& b = bias_by_id(pets, op.pet_id);
        std::fill(b.mask.begin(), b.mask.end(), uint8_t{0});
        break;
      }
      case PruneKind::bias_entry:
        bias_by_id(pets, op.pet_id).mask.at(op.index) = 0;
        break;
      case PruneKind::lora_column: {
        LoRAUpdate& l = lora_by_id(pets, op.pet_id);
        for (int i = 0; i < l.out_dim(); ++i) l.mask_u.at(i * l.rank + op.index) = 0;
        for (int i = 0; i < l.in_dim(); ++i) l.mask_v.at(i * l.rank + op.index) = 0;
        break;
      }
      case PruneKind::lora_entry: {
        LoRAUpdate& l = lora_by_id(pets, op.pet_id);
        (op.part == LoraPart::u ? l.mask_u : l.mask_v).at(op.index) = 0;
        break;
      }
    }
  }
  pets.apply_masks();
}

InitRecord snapshot_init(const PetSet& pets, const Classifier& head) {
  InitRecord record;
  for (const BiasDelta& b : pets.biases) record.bias_values.push_back(b.delta.values());
  for (const LoRAUpdate& l : pets.loras)
    record.lora_values.emplace_back(l.u.values(), l.v.values());
  record.head_weight = head.weight.values();
  record.head_bias = head.bias.values();
  return record;
}

void restore_init(PetSet& pets, Classifier& head, const InitRecord& record) {
  if (record.bias_values.size() != pets.biases.size() ||
      record.lora_values.size() != pets.loras.size())
    throw InternalError("init record does not match the PET set");
  for (size_t i = 0; i < pets.biases.size(); ++i)
    pets.biases[i].delta.values() = record.bias_values[i];
  for (size_t i = 0; i < pets.loras.size(); ++i) {
    pets.loras[i].u.values() = record.lora_values[i].first;
    pets.loras[i].v.values() = record.lora_values[i].second;
  }
  head.weight.values() = record.head_weight;
  head.bias.values() = record.head_bias;
  pets.apply_masks();
}

namespace {

void check_restored(const std::vector<double>& now, const std::vector<double>& recorded,
                    const std::vector<uint8_t>& mask, const std::string& what) {
  for (size_t i = 0; i < now.size(); ++i) {
    if (mask[i]) {
      if (now[i] != recorded[i])
        throw InternalError("lottery restoration violated: surviving " + what + " entry " +
                            std::to_string(i) + " differs from its initial value");
    } else if (now[i] != 0.0) {
      throw InternalError("lottery restoration violated: pruned " + what + " entry " +
                          std::to_string(i) + " is nonzero");
    }
  }
}

}  // namespace

void verify_restoration(const PetSet& pets, const Classifier& head, const InitRecord& record) {
  for (size_t i = 0; i < pets.biases.size(); ++i)
    check_restored(pets.biases[i].delta.values(), record.bias_values[i], pets.biases[i].mask,
                   pets.biases[i].site.id() + " bias delta");
  for (size_t i = 0; i < pets.loras.size(); ++i) {
    check_restored(pets.loras[i].u.values(), record.lora_values[i].first, pets.loras[i].mask_u,
                   pets.loras[i].site.id() + " U");
    check_restored(pets.loras[i].v.values(), record.lora_values[i].second, pets.loras[i].mask_v,
                   pets.loras[i].site.id() + " V");
  }
  if (head.weight.values() != record.head_weight || head.bias.values() != record.head_bias)
    throw InternalError("classifier head not restored to its initial values");
}

namespace {

nlohmann::ordered_json rle_encode(const std::vector<uint8_t>& mask) {
  nlohmann::ordered_json runs = nlohmann::ordered_json::array();
  size_t i = 0;
  while (i < mask.size()) {
    size_t j = i;
    while (j < mask.size() && mask[j] == mask[i]) ++j;
    runs.push_back({j - i, mask[i] ? 1 : 0});
    i = j;
  }
  return runs;
}

std::vector<uint8_t> rle_decode(const nlohmann::json& runs, size_t expected_len) {
  if (!runs.is_array()) throw InputError("mask rle must be an array of [count,value] pairs");
  std::vector<uint8_t> mask;
  for (const auto& run : runs) {
    if (!run.is_array() || run.size() != 2)
      throw InputError("mask rle entries must be [count,value] pairs");
    const size_t count = run[0].get<size_t>();
    const int value = run[1].get<int>();
    if (value != 0 && value != 1) throw InputError("mask rle values must be 0 or 1");
    mask.insert(mask.end(), count, static_cast<uint8_t>(value));
  }
  if (mask.size() != expected_len)
    throw InputError("mask rle decodes to " + std::to_string(mask.size()) + " entries, expected " +
                     std::to_string(expected_len));
  return mask;
}

nlohmann::ordered_json model_to_json(const TransformerConfig& cfg) {
  return {{"layers", cfg.layers},       {"hidden_dim", cfg.hidden_dim},
          {"heads", cfg.heads},         {"ffn_dim", cfg.ffn_dim},
          {"vocab_size", cfg.vocab_size}, {"max_seq_len", cfg.max_seq_len},
          {"num_classes", cfg.num_classes}};
}

TransformerConfig model_from_json(const nlohmann::json& j) {
  TransformerConfig cfg;
  cfg.layers = j.at("layers").get<int>();
  cfg.hidden_dim = j.at("hidden_dim").get<int>();
  cfg.heads = j.at("heads").get<int>();
  cfg.ffn_dim = j.at("ffn_dim").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_seq_len = j.at("max_seq_len").get<int>();
  cfg.num_classes = j.at("num_classes").get<int>();
  return cfg;
}

}  // namespace

nlohmann::ordered_json spec_to_json(const ArchitectureSpec& spec) {
  nlohmann::ordered_json j;
  j["format"] = "petnas-architecture-v1";
  j["model"] = model_to_json(spec.model);
  j["seeds"] = {{"model", spec.model_seed}, {"data", spec.data_seed}, {"run", spec.run_seed}};
  j["criterion"] = to_string(spec.criterion);
  j["lora_init"] = to_string(spec.lora_init);
  j["budget"] = spec.budget;
  j["params_initial"] = spec.params_initial;
  j["params_final"] = spec.params_final;
  j["val_accuracy"] = spec.val_accuracy;
  j["pets"] = nlohmann::ordered_json::array();
  for (const PetArchEntry& pet : spec.pets) {
    nlohmann::ordered_json p;
    p["layer"] = pet.layer;
    p["site"] = to_string(pet.site);
    p["kind"] = pet.is_lora ? "lora" : "bias";
    p["structured"] = pet.structured;
    if (pet.is_lora) {
      p["rank"] = pet.rank;
      p["mask_u_rle"] = rle_encode(pet.mask_u);
      p["mask_v_rle"] = rle_encode(pet.mask_v);
    } else {
      p["mask_rle"] = rle_encode(pet.mask);
    }
    j["pets"].push_back(std::move(p));
  }
  j["timings"] = {{"train_seconds", spec.train_seconds},
                  {"prune_seconds", spec.prune_seconds},
                  {"retrain_seconds", spec.retrain_seconds}};
  return j;
}

ArchitectureSpec spec_from_json(const nlohmann::json& j) {
  ArchitectureSpec spec;
  if (j.value("format", "") != std::string("petnas-architecture-v1"))
    throw InputError("not a petnas architecture file (missing format marker)");
  spec.model = model_from_json(j.at("model"));
  spec.model_seed = j.at("seeds").at("model").get<uint64_t>();
  spec.data_seed = j.at("seeds").at("data").get<uint64_t>();
  spec.run_seed = j.at("seeds").at("run").get<uint64_t>();
  spec.criterion = criterion_mode_from_string(j.at("criterion").get<std::string>());
  spec.lora_init = lora_init_from_string(j.at("lora_init").get<std::string>());
  spec.budget = j.at("budget").get<int>();
  spec.params_initial = j.at("params_initial").get<int>();
  spec.params_final = j.at("params_final").get<int>();
  spec.val_accuracy = j.value("val_accuracy", 0.0);
  for (const auto& p : j.at("pets")) {
    PetArchEntry pet;
    pet.layer = p.at("layer").get<int>();
    pet.site = site_from_string(p.at("site").get<std::string>());
    pet.is_lora = p.at("kind").get<std::string>() == "lora";
    pet.structured = p.at("structured").get<bool>();
    // recompute expected mask lengths from the model shape
    TransformerConfig cfg = spec.model;
    int bias_len = 0, out = 0, in = 0;
    switch (pet.site) {
      case SiteName::ffn_intermediate: bias_len = cfg.ffn_dim; out = cfg.ffn_dim; in = cfg.hidden_dim; break;
      case SiteName::ffn_output: bias_len = cfg.hidden_dim; out = cfg.hidden_dim; in = cfg.ffn_dim; break;
      default: bias_len = cfg.hidden_dim; out = cfg.hidden_dim; in = cfg.hidden_dim; break;
    }
    if (pet.is_lora) {
      pet.rank = p.at("rank").get<int>();
      pet.mask_u = rle_decode(p.at("mask_u_rle"), static_cast<size_t>(out) * pet.rank);
      pet.mask_v = rle_decode(p.at("mask_v_rle"), static_cast<size_t>(in) * pet.rank);
    } else {
      pet.mask = rle_decode(p.at("mask_rle"), bias_len);
    }
    spec.pets.push_back(std::move(pet));
  }
  if (j.contains("timings")) {
    spec.train_seconds = j["timings"].value("train_seconds", 0.0);
    spec.prune_seconds = j["timings"].value("prune_seconds", 0.0);
    spec.retrain_seconds = j["timings"].value("retrain_seconds", 0.0);
  }
  return spec;
}

void apply_spec_masks(PetSet& pets, const ArchitectureSpec& spec) {
  if (static_cast<size_t>(pets.pet_count()) != spec.pets.size())
    throw InputError("architecture spec lists " + std::to_string(spec.pets.size()) +
                     " PETs but the search space builds " + std::to_string(pets.pet_count()));
  size_t bias_i = 0, lora_i = 0;
  for (const PetArchEntry& pet : spec.pets) {
    if (pet.is_lora) {
      if (lora_i >= pets.loras.size()) throw InputError("spec/search-space LoRA mismatch");
      LoRAUpdate& l = pets.loras[lora_i++];
      if (l.site.layer != pet.layer || l.site.name != pet.site || l.rank != pet.rank ||
          l.mask_u.size() != pet.mask_u.size() || l.mask_v.size() != pet.mask_v.size())
        throw InputError("spec LoRA entry does not match the search space at " + l.site.id());
      l.mask_u = pet.mask_u;
      l.mask_v = pet.mask_v;
    } else {
      if (bias_i >= pets.biases.size()) throw InputError("spec/search-space bias mismatch");
      BiasDelta& b = pets.biases[bias_i++];
      if (b.site.layer != pet.layer || b.site.name != pet.site ||
          b.mask.size() != pet.mask.size())
        throw InputError("spec bias entry does not match the search space at " + b.site.id());
      b.mask = pet.mask;
    }
  }
  pets.apply_masks();
}

namespace {

ArchitectureSpec spec_from_pets(const PetSet& pets, const RunConfig& cfg, uint64_t run_seed) {
  ArchitectureSpec spec;
  spec.model = cfg.model.shape;
  spec.budget = cfg.budget;
  spec.criterion = cfg.criterion;
  spec.lora_init = cfg.lora_init;
  spec.model_seed = cfg.model.seed;
  spec.data_seed = cfg.task.seed;
  spec.run_seed = run_seed;
  for (const BiasDelta& b : pets.biases) {
    PetArchEntry pet;
    pet.layer = b.site.layer;
    pet.site = b.site.name;
    pet.is_lora = false;
    pet.structured = b.structured;
    pet.mask = b.mask;
    spec.pets.push_back(std::move(pet));
  }
  for (const LoRAUpdate& l : pets.loras) {
    PetArchEntry pet;
    pet.layer = l.site.layer;
    pet.site = l.site.name;
    pet.is_lora = true;
    pet.structured = l.structured;
    pet.rank = l.rank;
    pet.mask_u = l.mask_u;
    pet.mask_v = l.mask_v;
    spec.pets.push_back(std::move(pet));
  }
  return spec;
}

enum class Selection { criterion, random_mask, none };

NasResult run_pipeline(const RunContext& ctx, const RunConfig& cfg, uint64_t run_seed,
                       Selection selection, CriterionMode mode, const Logger& log) {
  cfg.validate();
  auto say = [&](const std::string& msg) {
    if (log) log("[seed " + std::to_string(run_seed) + "] " + msg);
  };

  Rng head_rng(Rng::derive(run_seed, 1));
  Rng pet_rng(Rng::derive(run_seed, 2));

  Classifier head = init_classifier(ctx.model.cfg, head_rng);
  PetSet pets = build_pets(ctx.model, cfg.space);
  init_pets(pets, cfg.lora_init, pet_rng);

  NasResult result;
  result.metrics.params_initial = pets.param_count();
  result.init_record = snapshot_init(pets, head);

  const auto t0 = Clock::now();
  double train_seconds = 0.0;
  if (selection == Selection::criterion) {
    say("training initial architecture (" + std::to_string(pets.param_count()) +
        " PET parameters)");
    CriterionAccumulator acc(pets);
    TrainResult initial =
        train(ctx.model, head, pets, ctx.data.train, cfg.train_settings(Rng::derive(run_seed, 3)),
              &acc);
    result.initial_history = std::move(initial.history);
    result.metrics.initial_train_loss = initial.final_loss;
    train_seconds = seconds_since(t0);

    say("scoring prune candidates (" + std::string(to_string(mode)) + ")");
    result.scored = score_ops(acc, pets, mode, cfg.structured_lora_include_v);
  } else if (selection == Selection::random_mask) {
    // masks do not depend on training, so the initial pass is skipped
    say("assigning random prune order");
    result.scored = enumerate_ops(pets);
    Rng mask_rng(Rng::derive(run_seed, 4));
    for (PruneOp& op : result.scored) op.score = mask_rng.uniform();
  }

  const auto t1 = Clock::now();
  bool no_op = true;
  if (selection != Selection::none) {
    PruneResult pruned = prune_to_budget(result.scored, pets.param_count(), cfg.budget);
    no_op = pruned.no_op;
    if (pruned.no_op)
      say("budget " + std::to_string(cfg.budget) + " >= " + std::to_string(pets.param_count()) +
          " parameters: no pruning performed");
    else
      say("pruned " + std::to_string(pruned.applied.size()) + " units down to " +
          std::to_string(pruned.final_count) + " parameters (budget " +
          std::to_string(cfg.budget) + ")");
    apply_prune_ops(pets, pruned.applied);
    result.applied = std::move(pruned.applied);
  } else {
    say("no pruning (full architecture)");
  }
  result.prune_was_no_op = no_op;
  const double prune_seconds = seconds_since(t1);

  // Lottery-ticket re-initialization: surviving parameters return to their
  // recorded initial values, pruned entries to zero, optimizer state fresh.
  restore_init(pets, head, result.init_record);
  verify_restoration(pets, head, result.init_record);

  const auto t2 = Clock::now();
  say("retraining pruned architecture (" + std::to_string(pets.param_count()) +
      " PET parameters)");
  TrainResult retrain =
      train(ctx.model, head, pets, ctx.data.train, cfg.train_settings(Rng::derive(run_seed, 3)));
  const double retrain_seconds = seconds_since(t2);
  result.retrain_history = std::move(retrain.history);
  result.metrics.final_train_loss = retrain.final_loss;

  EvalMetrics val = evaluate(ctx.model, head, &pets, ctx.data.val);
  result.metrics.val_accuracy = val.accuracy;
  result.metrics.val_loss = val.mean_loss;
  result.metrics.params_final = pets.param_count();
  if (!result.retrain_history.empty()) result.retrain_history.back().accuracy = val.accuracy;
  say("validation accuracy " + std::to_string(val.accuracy));

  result.spec = spec_from_pets(pets, cfg, run_seed);
  result.spec.params_initial = result.metrics.params_initial;
  result.spec.params_final = result.metrics.params_final;
  result.spec.criterion = mode;
  result.spec.val_accuracy = val.accuracy;
  result.spec.train_seconds = train_seconds;
  result.spec.prune_seconds = prune_seconds;
  result.spec.retrain_seconds = retrain_seconds;
  return result;
}

}  // namespace

NasResult run_nas(const RunContext& ctx, const RunConfig& cfg, uint64_t run_seed,
                  const Logger& log) {
  return run_pipeline(ctx, cfg, run_seed, Selection::criterion, cfg.criterion, log);
}

BaselineKind baseline_kind_from_string(const std::string& s) {
  if (s == "random") return BaselineKind::random_mask;
  if (s == "last_step") return BaselineKind::last_step_criterion;
  if (s == "full") return BaselineKind::full;
  throw ConfigError("unknown baseline kind \"" + s + "\" (expected random|last_step|full)");
}

const char* to_string(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::random_mask: return "random";
    case BaselineKind::last_step_criterion: return "last_step";
    case BaselineKind::full: return "full";
  }
  return "?";
}

NasResult run_baseline(const RunContext& ctx, const RunConfig& cfg, uint64_t run_seed,
                       BaselineKind kind, const Logger& log) {
  switch (kind) {
    case BaselineKind::random_mask:
      return run_pipeline(ctx, cfg, run_seed, Selection::random_mask, cfg.criterion, log);
    case BaselineKind::last_step_criterion:
      return run_pipeline(ctx, cfg, run_seed, Selection::criterion, CriterionMode::last_step,
                          log);
    case BaselineKind::full:
      return run_pipeline(ctx, cfg, run_seed, Selection::none, cfg.criterion, log);
  }
  throw InternalError("unreachable baseline kind");
}

void pretrain_warmup(FrozenParams& model, const TaskSpec& task, const Splits& final_splits,
                     int steps, double lr) {
  if (steps <= 0) return;
  if (task.kind == TaskKind::jsonl)
    throw ConfigError("pretraining warm-up is only available for generated tasks");

  // fresh draw from the task distribution, avoiding the validation split
  TaskSpec pretrain_task = task;
  pretrain_task.seed = Rng::derive(task.seed, 0x70726574);  // independent stream
  pretrain_task.train_size = std::max(256, task.train_size);
  pretrain_task.val_size = 1;
  Splits raw = generate_task(pretrain_task, model.cfg);
  std::set<std::vector<int>> val_seqs;
  for (const Example& ex : final_splits.val) val_seqs.insert(ex.tokens);
  std::vector<Example> data;
  for (Example& ex : raw.train)
    if (!val_seqs.count(ex.tokens)) data.push_back(std::move(ex));
  if (data.empty()) throw InternalError("pretraining set vanished after dedup");

  model.set_trainable(true);
  Rng head_rng(Rng::derive(task.seed, 0x68656164));
  Classifier head = init_classifier(model.cfg, head_rng);

  std::vector<Tensor> params = model.all_tensors();
  params.push_back(head.weight);
  params.push_back(head.bias);
  Adam adam(params, AdamSettings{});
  Schedule schedule;
  schedule.total_steps = steps;
  schedule.warmup_fraction = 0.06;
  schedule.peak_lr = lr;

  Rng shuffle_rng(Rng::derive(task.seed, 0x73687566));
  const int n = static_cast<int>(data.size());
  const int batch_size = 16;
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  int step = 0;
  while (step < steps) {
    for (int i = n - 1; i > 0; --i) {
      const int j = static_cast<int>(shuffle_rng.uniform_int(i + 1));
      std::swap(order[i], order[j]);
    }
    for (int begin = 0; begin < n && step < steps; begin += batch_size) {
      const int end = std::min(n, begin + batch_size);
      std::span<const int> batch(order.data() + begin, end - begin);
      ++step;
      Tape tape;
      ForwardResult fwd = forward(model, head, nullptr, data, batch);
      if (!std::isfinite(fwd.loss.item()))
        throw DivergenceError(step, "pretraining diverged at step " + std::to_string(step));
      tape.backward(fwd.loss);
      adam.step(schedule.lr(step));
      for (Tensor& p : params) p.zero_grad();
    }
  }
  model.set_trainable(false);
}

RunContext prepare_context(const RunConfig& cfg) {
  cfg.validate();
  RunContext ctx;
  if (!cfg.model.checkpoint.empty()) {
    ctx.model = load_checkpoint(cfg.model.checkpoint);
    if (!(ctx.model.cfg.layers == cfg.model.shape.layers &&
          ctx.model.cfg.hidden_dim == cfg.model.shape.hidden_dim &&
          ctx.model.cfg.heads == cfg.model.shape.heads &&
          ctx.model.cfg.ffn_dim == cfg.model.shape.ffn_dim &&
          ctx.model.cfg.vocab_size == cfg.model.shape.vocab_size &&
          ctx.model.cfg.max_seq_len == cfg.model.shape.max_seq_len &&
          ctx.model.cfg.num_classes == cfg.model.shape.num_classes))
    throw ConfigError("checkpoint model shape does not match config.model");
  } else {
    ctx.model = build_model(cfg.model.shape, cfg.model.seed);
  }
  ctx.data = generate_task(cfg.task, cfg.model.shape);
  if (cfg.model.pretrain_steps > 0)
    pretrain_warmup(ctx.model, cfg.task, ctx.data, cfg.model.pretrain_steps,
                    cfg.model.pretrain_lr);
  return ctx;
}

}  // namespace petnas
