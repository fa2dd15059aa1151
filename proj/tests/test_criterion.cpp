#include <doctest.h>

#include <sstream>

#include "petnas/criterion.hpp"
#include "petnas/errors.hpp"
#include "petnas/rng.hpp"
#include "testutil.hpp"

using namespace petnas;
using namespace petnas::testutil;

namespace {

ModuleSite bias_site(int length, int layer = 0,
                     SiteName name = SiteName::attention_query) {
  ModuleSite site;
  site.layer = layer;
  site.name = name;
  site.weight_shape = {length, length};
  site.bias_length = length;
  return site;
}

PetSet single_bias_pet(int length, bool structured) {
  PetSet pets;
  BiasDelta b;
  b.site = bias_site(length);
  b.delta = Tensor::zeros({length}, true);
  b.mask.assign(length, 1);
  b.structured = structured;
  b.pet_id = 0;
  pets.biases.push_back(std::move(b));
  return pets;
}

PetSet single_lora_pet(int out, int in, int rank, bool structured) {
  PetSet pets;
  LoRAUpdate l;
  l.site = bias_site(out);
  l.site.weight_shape = {out, in};
  l.rank = rank;
  l.u = Tensor::zeros({out, rank}, true);
  l.v = Tensor::zeros({in, rank}, true);
  l.mask_u.assign(out * rank, 1);
  l.mask_v.assign(in * rank, 1);
  l.structured = structured;
  l.pet_id = 0;
  pets.loras.push_back(std::move(l));
  return pets;
}

// Writes values and gradients directly, standing in for a backward pass.
void fake_step(PetSet& pets, const std::vector<double>& theta,
               const std::vector<double>& grad) {
  Tensor t = pets.biases[0].delta;
  t.values() = theta;
  t.grad() = grad;
}

}  // namespace

TEST_SUITE("criterion") {

TEST_CASE("zero parameter contributes zero regardless of gradient") {
  PetSet pets = single_bias_pet(3, false);
  CriterionAccumulator acc(pets);
  fake_step(pets, {0.0, 0.0, 0.0}, {5.0, -3.0, 100.0});
  acc.observe_step(pets);
  for (int i = 0; i < 3; ++i) CHECK(acc.averaged(0, i) == 0.0);
}

TEST_CASE("single parameter analytic example") {
  // L(theta) = (theta - 1)^2 at theta = 0.5
  PetSet pets = single_bias_pet(1, false);
  Tensor theta = pets.biases[0].delta;
  theta.values()[0] = 0.5;

  CriterionAccumulator acc(pets);
  {
    Tape tape;
    Tensor shift = Tensor::from_data({1}, {-1.0});
    Tensor err = add(theta, shift);
    tape.backward(sum(mul(err, err)));
  }
  CHECK(theta.grad()[0] == doctest::Approx(-1.0).epsilon(1e-15));
  acc.observe_step(pets);
  // first-order estimate of the loss change from pruning
  CHECK(acc.averaged(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

  // exact change: L(0) - L(0.5) = 1 - 0.25, larger than the estimate
  const double exact = 1.0 - 0.25;
  CHECK(exact == doctest::Approx(0.75));
  CHECK(acc.averaged(0, 0) < exact);
}

TEST_CASE("mean over steps") {
  PetSet pets = single_bias_pet(1, false);
  CriterionAccumulator acc(pets);
  fake_step(pets, {1.0}, {-0.2});
  acc.observe_step(pets);
  fake_step(pets, {1.0}, {-0.4});
  acc.observe_step(pets);
  CHECK(acc.steps() == 2);
  CHECK(acc.averaged(0, 0) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(acc.last(0, 0) == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("structured bias sums entries, unstructured splits them") {
  for (bool structured : {true, false}) {
    PetSet pets = single_bias_pet(2, structured);
    CriterionAccumulator acc(pets);
    fake_step(pets, {0.1, -0.2}, {-5.0, 1.5});  // criteria 0.5, 0.3
    acc.observe_step(pets);
    auto ops = score_ops(acc, pets, CriterionMode::averaged);
    if (structured) {
      REQUIRE(ops.size() == 1);
      CHECK(ops[0].kind == PruneKind::whole_bias);
      CHECK(ops[0].score == doctest::Approx(0.8).epsilon(1e-15));
      CHECK(ops[0].param_count == 2);
    } else {
      REQUIRE(ops.size() == 2);
      CHECK(ops[0].score == doctest::Approx(0.5).epsilon(1e-15));
      CHECK(ops[1].score == doctest::Approx(0.3).epsilon(1e-15));
      CHECK(ops[0].param_count == 1);
    }
  }
}

TEST_CASE("structured lora columns score over U, count both factors") {
  PetSet pets = single_lora_pet(3, 2, 2, true);
  LoRAUpdate& l = pets.loras[0];
  CriterionAccumulator acc(pets);
  // U criteria by entry: column 0 gets 0.4 + 0.3 + 0.2 = 0.9; column 1 gets 0.1
  l.u.values() = {0.4, 0.1, 0.3, 0.0, 0.2, 0.0};
  l.u.grad() = {-1, -1, -1, -1, -1, -1};
  l.v.values() = {1.0, 1.0, 1.0, 1.0};
  l.v.grad() = {-2.0, -2.0, -2.0, -2.0};
  acc.observe_step(pets);

  auto ops = score_ops(acc, pets, CriterionMode::averaged);
  REQUIRE(ops.size() == 2);
  CHECK(ops[0].index == 0);
  CHECK(ops[0].score == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(ops[0].param_count == 3 + 2);
  CHECK(ops[1].score == doctest::Approx(0.1).epsilon(1e-12));

  // with V columns included each column gains 2.0 * 2 entries... column sum
  auto ops_v = score_ops(acc, pets, CriterionMode::averaged, true);
  CHECK(ops_v[0].score == doctest::Approx(0.9 + 2.0 + 2.0).epsilon(1e-12));
}

TEST_CASE("unstructured lora yields one op per entry across U and V") {
  PetSet pets = single_lora_pet(3, 2, 2, false);
  CriterionAccumulator acc(pets);
  pets.loras[0].u.grad().assign(6, 0.0);
  pets.loras[0].v.grad().assign(4, 0.0);
  acc.observe_step(pets);
  auto ops = score_ops(acc, pets, CriterionMode::averaged);
  CHECK(ops.size() == 10);
  int u_count = 0, v_count = 0;
  for (const auto& op : ops) {
    CHECK(op.kind == PruneKind::lora_entry);
    CHECK(op.param_count == 1);
    (op.part == LoraPart::u ? u_count : v_count)++;
  }
  CHECK(u_count == 6);
  CHECK(v_count == 4);
}

TEST_CASE("masked entries are not offered for pruning again") {
  PetSet pets = single_bias_pet(4, false);
  pets.biases[0].mask = {1, 0, 1, 0};
  CriterionAccumulator acc(pets);
  fake_step(pets, {1, 1, 1, 1}, {1, 1, 1, 1});
  acc.observe_step(pets);
  auto ops = score_ops(acc, pets, CriterionMode::averaged);
  REQUIRE(ops.size() == 2);
  CHECK(ops[0].index == 0);
  CHECK(ops[1].index == 2);
}

TEST_CASE("structured score equals the sum of unstructured scores exactly") {
  Rng rng(88);
  PetSet s = single_bias_pet(16, true);
  PetSet u = single_bias_pet(16, false);
  CriterionAccumulator acc_s(s), acc_u(u);
  for (int step = 0; step < 5; ++step) {
    std::vector<double> theta(16), grad(16);
    for (int i = 0; i < 16; ++i) {
      theta[i] = rng.normal();
      grad[i] = rng.normal();
    }
    fake_step(s, theta, grad);
    fake_step(u, theta, grad);
    acc_s.observe_step(s);
    acc_u.observe_step(u);
  }
  auto ops_s = score_ops(acc_s, s, CriterionMode::averaged);
  auto ops_u = score_ops(acc_u, u, CriterionMode::averaged);
  double total = 0.0;
  for (const auto& op : ops_u) total += op.score;
  REQUIRE(ops_s.size() == 1);
  CHECK(ops_s[0].score == total);  // exact: same accumulator values, summation only
}

TEST_CASE("zero observed steps is a usage error") {
  PetSet pets = single_bias_pet(2, false);
  CriterionAccumulator acc(pets);
  CHECK_THROWS_AS(score_ops(acc, pets, CriterionMode::averaged), UsageError);
  CHECK_THROWS_AS(acc.averaged(0, 0), UsageError);
}

TEST_CASE("missing gradient is an internal error") {
  PetSet pets = single_bias_pet(2, false);
  CriterionAccumulator acc(pets);
  CHECK_THROWS_AS(acc.observe_step(pets), InternalError);
}

TEST_CASE("tie-break order is stable by site then kind then index") {
  PruneOp a, b;
  a.score = b.score = 0.5;
  a.layer = 0;
  b.layer = 1;
  CHECK(prune_order_less(a, b));
  b.layer = 0;
  a.index = 2;
  b.index = 3;
  CHECK(prune_order_less(a, b));
  b.index = 2;
  CHECK(!prune_order_less(a, b));
  CHECK(!prune_order_less(b, a));
}

TEST_CASE("scores csv lists one row per op") {
  PetSet pets = single_bias_pet(2, false);
  CriterionAccumulator acc(pets);
  fake_step(pets, {1.0, 2.0}, {-1.0, 0.25});
  acc.observe_step(pets);
  auto ops = score_ops(acc, pets, CriterionMode::averaged);
  std::ostringstream out;
  write_scores_csv(ops, out);
  const std::string csv = out.str();
  CHECK(csv.find("pet_id,kind,index,param_count,score") == 0);
  CHECK(csv.find("0,bias_entry,0,1,1") != std::string::npos);
  CHECK(csv.find("0,bias_entry,1,1,-0.5") != std::string::npos);
}

}  // TEST_SUITE
