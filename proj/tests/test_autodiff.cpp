#include <doctest.h>

#include <cmath>

#include "petnas/autodiff.hpp"
#include "petnas/errors.hpp"
#include "petnas/rng.hpp"
#include "testutil.hpp"

using namespace petnas;
using namespace petnas::testutil;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, bool requires_grad = true,
                     double lo = -2.0, double hi = 2.0) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (double& v : t.values()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul identity and dot product") {
  auto eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from_data({2, 2}, {3, 4, 5, 6});
  auto c = matmul(eye, b);
  CHECK(c.values() == std::vector<double>{3, 4, 5, 6});

  auto r = Tensor::from_data({1, 2}, {1, 2});
  auto col = Tensor::from_data({2, 1}, {3, 4});
  CHECK(matmul(r, col).values()[0] == doctest::Approx(11).epsilon(1e-15));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), DimensionError);
}

TEST_CASE("matmul gradient of sum(A*B) wrt A equals ones*B^T") {
  Rng rng(42);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 5}, rng, false);

  Tape tape;
  auto loss = sum(matmul(a, b));
  tape.backward(loss);

  auto fd = fd_gradient([&] { return sum(matmul(a, b)).item(); }, a);
  CHECK(max_grad_rel_error(a.grad(), fd) < 1e-6);

  // analytic form: (ones * B^T)[i,j] = sum_k B[j,k]
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double expected = 0;
      for (int k = 0; k < 5; ++k) expected += b.values()[j * 5 + k];
      CHECK(a.grad()[i * 4 + j] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("matmul backward for both operands, rectangular") {
  Rng rng(7);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({4, 5}, rng);
  auto w = random_tensor({3, 5}, rng, false);

  Tape tape;
  tape.backward(sum(mul(matmul(a, b), w)));
  for (Tensor* t : {&a, &b}) {
    auto fd = fd_gradient([&] { return sum(mul(matmul(a, b), w)).item(); }, *t);
    CHECK(max_grad_rel_error(t->grad(), fd) < 1e-6);
  }
}

TEST_CASE("matmul_nt backward for both operands, rectangular") {
  Rng rng(7);
  auto a = random_tensor({3, 4}, rng);
  auto b = random_tensor({5, 4}, rng);
  auto w = random_tensor({3, 5}, rng, false);

  Tape tape;
  tape.backward(sum(mul(matmul_nt(a, b), w)));
  for (Tensor* t : {&a, &b}) {
    auto fd = fd_gradient([&] { return sum(mul(matmul_nt(a, b), w)).item(); }, *t);
    CHECK(max_grad_rel_error(t->grad(), fd) < 1e-6);
  }
}

TEST_CASE("add identities and broadcast") {
  auto a = Tensor::from_data({3}, {1, 2, 3});
  auto z = Tensor::zeros({3});
  CHECK(add(a, z).values() == std::vector<double>{1, 2, 3});

  auto m = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto bias = Tensor::from_data({3}, {10, 20, 30});
  CHECK(add(m, bias).values() == std::vector<double>{11, 22, 33, 14, 25, 36});

  auto bad = Tensor::zeros({4});
  CHECK_THROWS_AS(add(m, bad), DimensionError);
}

TEST_CASE("broadcast add backward sums over rows") {
  Rng rng(3);
  auto m = random_tensor({4, 3}, rng);
  auto bias = random_tensor({3}, rng);
  Tape tape;
  tape.backward(sum(add(m, bias)));
  for (int j = 0; j < 3; ++j) CHECK(bias.grad()[j] == doctest::Approx(4.0));
}

TEST_CASE("relu definition") {
  auto x = Tensor::from_data({3}, {-1, 0, 2});
  CHECK(relu(x).values() == std::vector<double>{0, 0, 2});
}

TEST_CASE("gelu gradient at 0.5 matches finite difference") {
  auto x = Tensor::from_data({1}, {0.5}, true);
  Tape tape;
  tape.backward(sum(gelu(x)));
  auto fd = fd_gradient([&] { return sum(gelu(x)).item(); }, x);
  CHECK(std::fabs(x.grad()[0] - fd[0]) < 1e-6);
}

TEST_CASE("elementwise ops match finite differences on random input") {
  Rng rng(11);
  for (auto op : {0, 1, 2}) {
    auto x = random_tensor({2, 5}, rng);
    auto run = [&]() -> Tensor {
      switch (op) {
        case 0: return sum(relu(x));
        case 1: return sum(gelu(x));
        default: return sum(mul(x, x));
      }
    };
    Tape tape;
    tape.backward(run());
    auto fd = fd_gradient([&] { return run().item(); }, x);
    CHECK(max_grad_rel_error(x.grad(), fd) < 1e-4);
  }
}

TEST_CASE("softmax_cross_entropy uniform and one-hot limits") {
  auto logits = Tensor::zeros({2, 4});
  auto loss = softmax_cross_entropy(logits, {0, 3});
  CHECK(loss.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  auto sharp = Tensor::from_data({1, 3}, {100.0, 0.0, 0.0});
  CHECK(softmax_cross_entropy(sharp, {0}).item() < 1e-10);
}

TEST_CASE("softmax_cross_entropy label out of range") {
  auto logits = Tensor::zeros({1, 3});
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {3}), InputError);
  CHECK_THROWS_AS(softmax_cross_entropy(logits, {-1}), InputError);
}

TEST_CASE("softmax_cross_entropy against direct probability oracle") {
  Rng rng(19);
  auto logits = random_tensor({3, 5}, rng);
  std::vector<int> labels = {2, 0, 4};

  // brute-force oracle: unstabilized probabilities in plain double math
  double expected = 0;
  std::vector<double> expected_grad(15, 0.0);
  for (int i = 0; i < 3; ++i) {
    double z = 0;
    for (int j = 0; j < 5; ++j) z += std::exp(logits.values()[i * 5 + j]);
    const double p_label = std::exp(logits.values()[i * 5 + labels[i]]) / z;
    expected += -std::log(p_label) / 3.0;
    for (int j = 0; j < 5; ++j) {
      const double p = std::exp(logits.values()[i * 5 + j]) / z;
      expected_grad[i * 5 + j] = (p - (j == labels[i] ? 1.0 : 0.0)) / 3.0;
    }
  }

  Tape tape;
  auto loss = softmax_cross_entropy(logits, labels);
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));
  tape.backward(loss);
  CHECK(max_grad_rel_error(logits.grad(), expected_grad) < 1e-10);

  auto fd = fd_gradient([&] { return softmax_cross_entropy(logits, labels).item(); }, logits);
  CHECK(max_grad_rel_error(logits.grad(), fd) < 1e-4);
}

TEST_CASE("layer_norm constant row collapses to bias") {
  auto x = Tensor::full({2, 4}, 3.25);
  auto gain = Tensor::full({4}, 1.7);
  auto bias = Tensor::from_data({4}, {1, 2, 3, 4});
  auto y = layer_norm(x, gain, bias);
  CHECK(y.values() == std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4});
}

TEST_CASE("layer_norm two-point row") {
  auto x = Tensor::from_data({1, 2}, {1, 3});
  auto gain = Tensor::full({2}, 1.0);
  auto bias = Tensor::zeros({2});
  auto y = layer_norm(x, gain, bias, 1e-5);
  // mean 2, variance 1: (x - 2) / sqrt(1 + 1e-5)
  const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y.values()[0] == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("layer_norm backward matches finite differences") {
  Rng rng(5);
  auto x = random_tensor({3, 6}, rng);
  auto gain = random_tensor({6}, rng, true, 0.5, 1.5);
  auto bias = random_tensor({6}, rng);
  auto run = [&] { return sum(mul(layer_norm(x, gain, bias), layer_norm(x, gain, bias))); };
  Tape tape;
  tape.backward(run());
  for (Tensor* t : {&x, &gain, &bias}) {
    auto fd = fd_gradient([&] { return run().item(); }, *t);
    CHECK(max_grad_rel_error(t->grad(), fd) < 1e-5);
  }
}

TEST_CASE("softmax_rows backward matches finite differences") {
  Rng rng(23);
  auto x = random_tensor({4, 5}, rng);
  auto w = random_tensor({4, 5}, rng, false);
  auto run = [&] { return sum(mul(softmax_rows(x), w)); };
  Tape tape;
  tape.backward(run());
  auto fd = fd_gradient([&] { return run().item(); }, x);
  CHECK(max_grad_rel_error(x.grad(), fd) < 1e-4);
}

TEST_CASE("structural ops match finite differences") {
  Rng rng(31);
  auto x = random_tensor({4, 6}, rng);
  auto table = random_tensor({8, 3}, rng);
  std::vector<int> ids = {1, 5, 1, 7};

  auto run = [&] {
    auto a = slice_cols(x, 1, 3);
    auto b = slice_cols(x, 3, 3);
    auto joined = concat_cols({a, b});
    auto row = take_row(joined, 2);
    auto emb = embedding_lookup(table, ids);
    auto stacked = stack_rows({row, take_row(joined, 0)});
    return add(sum(mul(stacked, stacked)), sum(mul(emb, emb)));
  };
  Tape tape;
  tape.backward(run());
  for (Tensor* t : {&x, &table}) {
    auto fd = fd_gradient([&] { return run().item(); }, *t);
    CHECK(max_grad_rel_error(t->grad(), fd) < 1e-5);
  }
}

TEST_CASE("backward on linear and quadratic losses") {
  auto theta = Tensor::from_data({3}, {1.5, -2.0, 0.25}, true);
  {
    Tape tape;
    tape.backward(sum(theta));
    CHECK(theta.grad() == std::vector<double>{1, 1, 1});
  }
  theta.zero_grad();
  {
    Tape tape;
    tape.backward(scale(sum(mul(theta, theta)), 0.5));
    for (int i = 0; i < 3; ++i)
      CHECK(theta.grad()[i] == doctest::Approx(theta.values()[i]).epsilon(1e-15));
  }
}

TEST_CASE("backward on non-scalar is a usage error") {
  auto x = Tensor::zeros({2, 2}, true);
  Tape tape;
  auto y = scale(x, 2.0);
  CHECK_THROWS_AS(tape.backward(y), UsageError);
}

TEST_CASE("tape is single use") {
  auto x = Tensor::from_data({2}, {1, 2}, true);
  Tape tape;
  auto loss = sum(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);
}

TEST_CASE("gradient accumulation sums over multiple uses") {
  auto x = Tensor::from_data({2}, {3, 4}, true);
  Tape tape;
  auto loss = add(sum(x), sum(mul(x, x)));
  tape.backward(loss);
  // d/dx (sum x + sum x^2) = 1 + 2x
  CHECK(x.grad()[0] == doctest::Approx(7.0).epsilon(1e-15));
  CHECK(x.grad()[1] == doctest::Approx(9.0).epsilon(1e-15));
}

TEST_CASE("forward values identical with and without grad tracking") {
  Rng rng(77);
  auto x = random_tensor({3, 4}, rng, true);
  auto w = random_tensor({5, 4}, rng, true);
  auto gain = random_tensor({5}, rng, true, 0.5, 1.5);
  auto bias = random_tensor({5}, rng, true);

  auto run = [&] { return layer_norm(gelu(matmul_nt(x, w)), gain, bias); };

  std::vector<double> tracked;
  {
    Tape tape;
    tracked = run().values();
  }
  std::vector<double> untracked = run().values();
  CHECK(tracked == untracked);
}

TEST_CASE("no nested tapes") {
  Tape tape;
  CHECK_THROWS_AS(Tape(), UsageError);
}

}  // TEST_SUITE
