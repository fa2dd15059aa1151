#include <doctest.h>

#include <filesystem>
#include <set>

#include "petnas/checkpoint.hpp"
#include "petnas/errors.hpp"
#include "petnas/pipeline.hpp"
#include "testutil.hpp"

using namespace petnas;
using namespace petnas::testutil;

namespace {

PruneOp make_op(double score, int count, int pet_id, int index) {
  PruneOp op;
  op.kind = PruneKind::bias_entry;
  op.pet_id = pet_id;
  op.index = index;
  op.param_count = count;
  op.score = score;
  op.layer = pet_id;
  op.site = SiteName::attention_query;
  return op;
}

// Small, fast pipeline configuration shared by the tests below.
RunConfig small_config() {
  RunConfig cfg;
  cfg.model.shape.layers = 1;
  cfg.model.shape.hidden_dim = 16;
  cfg.model.shape.heads = 2;
  cfg.model.shape.ffn_dim = 24;
  cfg.model.shape.vocab_size = 32;
  cfg.model.shape.max_seq_len = 8;
  cfg.model.seed = 11;
  cfg.task.kind = TaskKind::presence;
  cfg.task.train_size = 96;
  cfg.task.val_size = 32;
  cfg.task.seed = 101;
  cfg.budget = 30;  // total bias params: 16*4 + 24 + 16 + 16*2 = 136
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.peak_lr = 1e-2;
  cfg.run_seeds = {0};
  return cfg;
}

// Brute-force oracle: the applied set must be the minimal ascending-score
// prefix whose removal brings the count to or below the budget.
std::vector<PruneOp> oracle_prefix(std::vector<PruneOp> ops, int current, int budget) {
  std::sort(ops.begin(), ops.end(), prune_order_less);
  std::vector<PruneOp> applied;
  for (const PruneOp& op : ops) {
    if (current <= budget) break;
    applied.push_back(op);
    current -= op.param_count;
  }
  return applied;
}

bool same_ops(const std::vector<PruneOp>& a, const std::vector<PruneOp>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].kind != b[i].kind || a[i].pet_id != b[i].pet_id || a[i].part != b[i].part ||
        a[i].index != b[i].index)
      return false;
  }
  return true;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("prune_to_budget hand trace") {
  std::vector<PruneOp> ops = {make_op(0.1, 10, 0, 0), make_op(0.5, 10, 1, 0),
                              make_op(0.2, 10, 2, 0)};
  auto result = prune_to_budget(ops, 30, 15);
  REQUIRE(result.applied.size() == 2);
  CHECK(result.applied[0].score == 0.1);
  CHECK(result.applied[1].score == 0.2);
  CHECK(result.final_count == 10);
  CHECK(!result.no_op);
}

TEST_CASE("prune_to_budget boundaries") {
  std::vector<PruneOp> ops = {make_op(0.3, 50, 0, 0), make_op(0.1, 50, 1, 0)};

  auto exact = prune_to_budget(ops, 100, 100);
  CHECK(exact.no_op);
  CHECK(exact.applied.empty());
  CHECK(exact.final_count == 100);

  auto everything = prune_to_budget(ops, 100, 0);
  CHECK(everything.applied.size() == 2);
  CHECK(everything.final_count == 0);

  auto oversized = prune_to_budget(ops, 100, 200);
  CHECK(oversized.no_op);

  CHECK_THROWS_AS(prune_to_budget(ops, 99, 10), InternalError);  // bad coverage
}

TEST_CASE("prune_to_budget matches the brute-force oracle on random inputs") {
  Rng rng(314);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(20));
    std::vector<PruneOp> ops;
    int total = 0;
    for (int i = 0; i < n; ++i) {
      const int count = 1 + static_cast<int>(rng.uniform_int(10));
      // coarse scores so ties happen regularly
      const double score = static_cast<double>(rng.uniform_int(8)) / 4.0;
      ops.push_back(make_op(score, count, static_cast<int>(rng.uniform_int(4)), i));
      total += count;
    }
    const int budget = static_cast<int>(rng.uniform_int(total + 1));
    auto got = prune_to_budget(ops, total, budget);
    auto want = oracle_prefix(ops, total, budget);
    CHECK(same_ops(got.applied, want));
    CHECK(got.final_count <= budget);
  }
}

TEST_CASE("enumerated ops cover the parameter count exactly") {
  TransformerConfig cfg;
  cfg.layers = 2;
  auto model = build_model(cfg, 1);
  for (bool structured : {false, true}) {
    SearchSpace space;
    space.bias_structured = structured;
    space.lora_enabled = true;
    space.lora_structured = structured;
    space.lora_rank = 4;
    PetSet pets = build_pets(model, space);
    auto ops = enumerate_ops(pets);
    int covered = 0;
    for (const auto& op : ops) covered += op.param_count;
    CHECK(covered == pets.param_count());
  }
}

TEST_CASE("run_nas with budget equal to initial size reproduces plain training") {
  RunConfig cfg = small_config();
  cfg.budget = 136;  // whole search space survives
  auto ctx = prepare_context(cfg);
  auto nas = run_nas(ctx, cfg, 7);
  CHECK(nas.prune_was_no_op);
  CHECK(nas.metrics.params_final == nas.metrics.params_initial);

  // plain run with the same seed streams
  Rng head_rng(Rng::derive(7, 1));
  Rng pet_rng(Rng::derive(7, 2));
  Classifier head = init_classifier(ctx.model.cfg, head_rng);
  PetSet pets = build_pets(ctx.model, cfg.space);
  init_pets(pets, cfg.lora_init, pet_rng);
  auto plain = train(ctx.model, head, pets, ctx.data.train,
                     cfg.train_settings(Rng::derive(7, 3)));
  auto val = evaluate(ctx.model, head, &pets, ctx.data.val);

  CHECK(nas.metrics.final_train_loss == plain.final_loss);
  CHECK(nas.metrics.val_accuracy == val.accuracy);
  CHECK(nas.metrics.val_loss == val.mean_loss);
}

TEST_CASE("lottery restoration holds and pruned entries stay zero throughout") {
  RunConfig cfg = small_config();
  auto ctx = prepare_context(cfg);
  auto nas = run_nas(ctx, cfg, 3);
  CHECK(nas.metrics.params_final <= cfg.budget);
  CHECK(nas.spec.params_final <= cfg.budget);

  // reconstruct the retrain run from the returned spec and watch every step
  Rng head_rng(Rng::derive(3, 1));
  Rng pet_rng(Rng::derive(3, 2));
  Classifier head = init_classifier(ctx.model.cfg, head_rng);
  PetSet pets = build_pets(ctx.model, cfg.space);
  init_pets(pets, cfg.lora_init, pet_rng);

  // surviving entries must start from their recorded initial values
  InitRecord record = snapshot_init(pets, head);
  for (size_t i = 0; i < record.bias_values.size(); ++i)
    CHECK(record.bias_values[i] == nas.init_record.bias_values[i]);

  apply_spec_masks(pets, nas.spec);
  restore_init(pets, head, record);
  verify_restoration(pets, head, record);

  int violations = 0;
  auto watcher = [&](int, const PetSet& p) {
    for (const BiasDelta& b : p.biases)
      for (size_t i = 0; i < b.mask.size(); ++i)
        if (!b.mask[i] && b.delta.values()[i] != 0.0) ++violations;
  };
  auto retrain = train(ctx.model, head, pets, ctx.data.train,
                       cfg.train_settings(Rng::derive(3, 3)), nullptr, watcher);
  CHECK(violations == 0);

  // the reconstruction must match the pipeline's own retrain exactly
  CHECK(retrain.final_loss == nas.metrics.final_train_loss);
  auto val = evaluate(ctx.model, head, &pets, ctx.data.val);
  CHECK(val.accuracy == nas.metrics.val_accuracy);
  CHECK(val.accuracy == nas.spec.val_accuracy);
}

TEST_CASE("pipeline is deterministic") {
  RunConfig cfg = small_config();
  auto ctx = prepare_context(cfg);
  auto a = run_nas(ctx, cfg, 5);
  auto b = run_nas(ctx, cfg, 5);
  auto ja = spec_to_json(a.spec);
  auto jb = spec_to_json(b.spec);
  ja.erase("timings");
  jb.erase("timings");
  CHECK(ja.dump() == jb.dump());
  CHECK(a.metrics.val_accuracy == b.metrics.val_accuracy);
  CHECK(a.metrics.final_train_loss == b.metrics.final_train_loss);
}

TEST_CASE("greedy order: applied ops form an ascending-score prefix") {
  RunConfig cfg = small_config();
  auto ctx = prepare_context(cfg);
  auto nas = run_nas(ctx, cfg, 1);
  REQUIRE(!nas.applied.empty());
  for (size_t i = 1; i < nas.applied.size(); ++i)
    CHECK(!prune_order_less(nas.applied[i], nas.applied[i - 1]));
  // every unapplied op scores at least as high as the last applied one
  const PruneOp& last = nas.applied.back();
  std::set<std::pair<int, int>> applied_keys;
  for (const auto& op : nas.applied) applied_keys.insert({op.pet_id, op.index});
  for (const auto& op : nas.scored)
    if (!applied_keys.count({op.pet_id, op.index})) CHECK(!prune_order_less(op, last));
}

TEST_CASE("random baseline: different seeds give different masks") {
  RunConfig cfg = small_config();
  auto ctx = prepare_context(cfg);
  auto a = run_baseline(ctx, cfg, 0, BaselineKind::random_mask);
  auto b = run_baseline(ctx, cfg, 1, BaselineKind::random_mask);
  CHECK(a.metrics.params_final <= cfg.budget);
  // over 136 prunable units a mask collision has negligible probability
  bool differ = false;
  for (size_t i = 0; i < a.spec.pets.size(); ++i)
    differ = differ || a.spec.pets[i].mask != b.spec.pets[i].mask;
  CHECK(differ);
}

TEST_CASE("full baseline equals a plain training run") {
  RunConfig cfg = small_config();
  auto ctx = prepare_context(cfg);
  auto full = run_baseline(ctx, cfg, 9, BaselineKind::full);
  CHECK(full.metrics.params_final == full.metrics.params_initial);

  Rng head_rng(Rng::derive(9, 1));
  Rng pet_rng(Rng::derive(9, 2));
  Classifier head = init_classifier(ctx.model.cfg, head_rng);
  PetSet pets = build_pets(ctx.model, cfg.space);
  init_pets(pets, cfg.lora_init, pet_rng);
  auto plain = train(ctx.model, head, pets, ctx.data.train,
                     cfg.train_settings(Rng::derive(9, 3)));
  CHECK(full.metrics.final_train_loss == plain.final_loss);
}

TEST_CASE("architecture spec json round-trips") {
  RunConfig cfg = small_config();
  cfg.space.lora_enabled = true;
  cfg.space.lora_rank = 2;
  cfg.space.lora_structured = true;
  cfg.budget = 60;
  auto ctx = prepare_context(cfg);
  auto nas = run_nas(ctx, cfg, 2);

  auto j = spec_to_json(nas.spec);
  auto round = spec_from_json(nlohmann::json::parse(j.dump()));
  REQUIRE(round.pets.size() == nas.spec.pets.size());
  for (size_t i = 0; i < round.pets.size(); ++i) {
    CHECK(round.pets[i].mask == nas.spec.pets[i].mask);
    CHECK(round.pets[i].mask_u == nas.spec.pets[i].mask_u);
    CHECK(round.pets[i].mask_v == nas.spec.pets[i].mask_v);
    CHECK(round.pets[i].layer == nas.spec.pets[i].layer);
    CHECK(round.pets[i].site == nas.spec.pets[i].site);
  }
  CHECK(round.budget == nas.spec.budget);
  CHECK(round.run_seed == nas.spec.run_seed);
  CHECK(round.val_accuracy == nas.spec.val_accuracy);
}

TEST_CASE("structured lora pruning prunes whole column pairs") {
  RunConfig cfg = small_config();
  cfg.space.bias_enabled = false;
  cfg.space.lora_enabled = true;
  cfg.space.lora_rank = 4;
  cfg.space.lora_structured = true;
  cfg.space.lora_sites = {SiteName::attention_query};
  cfg.budget = 64;  // (16+16)*4 = 128 initially -> keep two columns
  auto ctx = prepare_context(cfg);
  auto nas = run_nas(ctx, cfg, 4);
  CHECK(nas.metrics.params_final == 64);
  REQUIRE(nas.spec.pets.size() == 1);
  const auto& pet = nas.spec.pets[0];
  // each column is either fully kept or fully pruned, in u and v together
  for (int j = 0; j < 4; ++j) {
    int kept_u = 0, kept_v = 0;
    for (int i = 0; i < 16; ++i) {
      kept_u += pet.mask_u[i * 4 + j];
      kept_v += pet.mask_v[i * 4 + j];
    }
    CHECK((kept_u == 0 || kept_u == 16));
    CHECK(kept_u == kept_v);
  }
}

TEST_CASE("pretraining warm-up trains the base then freezes it") {
  RunConfig cfg = small_config();
  cfg.model.pretrain_steps = 8;
  cfg.model.pretrain_lr = 1e-3;
  auto ctx = prepare_context(cfg);
  auto plain = build_model(cfg.model.shape, cfg.model.seed);
  CHECK(ctx.model.tok_emb.values() != plain.tok_emb.values());
  for (const Tensor& t : ctx.model.all_tensors()) {
    CHECK(!t.requires_grad());
    CHECK(!t.has_grad());
  }
  // deterministic
  auto ctx2 = prepare_context(cfg);
  CHECK(ctx.model.tok_emb.values() == ctx2.model.tok_emb.values());
  CHECK(ctx.model.layers[0].w1.values() == ctx2.model.layers[0].w1.values());
}

TEST_CASE("checkpoint round-trips and feeds the pipeline") {
  RunConfig cfg = small_config();
  auto ctx = prepare_context(cfg);
  const auto path = std::filesystem::temp_directory_path() / "petnas_ckpt_test.bin";
  save_checkpoint(ctx.model, path.string());
  auto loaded = load_checkpoint(path.string());
  CHECK(loaded.tok_emb.values() == ctx.model.tok_emb.values());
  CHECK(loaded.layers[0].wq.values() == ctx.model.layers[0].wq.values());
  CHECK(loaded.layers[0].ln2_bias.values() == ctx.model.layers[0].ln2_bias.values());

  RunConfig from_ckpt = cfg;
  from_ckpt.model.checkpoint = path.string();
  auto ctx2 = prepare_context(from_ckpt);
  CHECK(ctx2.model.layers[0].wq.values() == ctx.model.layers[0].wq.values());

  from_ckpt.model.shape.hidden_dim = 32;  // mismatched shape must be rejected
  from_ckpt.model.shape.heads = 4;
  CHECK_THROWS_AS(prepare_context(from_ckpt), ConfigError);
  std::filesystem::remove(path);
}

}  // TEST_SUITE
