// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "doctest.h"
#include "permstr/numerics/grad_check.hpp"
#include "permstr/numerics/kernels.hpp"
#include "permstr/numerics/ops.hpp"
#include "permstr/numerics/tape.hpp"

using namespace permstr;
using namespace permstr::num;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, DType dtype = DType::f64,
                     double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) {
    x = dist(rng);
  }
  return Tensor::from_values(std::move(shape), v, dtype);
}

void expect_near(const std::vector<double>& got, const std::vector<double>& want, double tol) {
  REQUIRE(got.size() == want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    CHECK(std::abs(got[i] - want[i]) <= tol);
  }
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(a, eye).to_vector() == std::vector<double>{1, 2, 3, 4});

  Tensor row = Tensor::from_values({1, 2}, {1, 2});
  Tensor col = Tensor::from_values({2, 1}, {3, 4});
  CHECK(matmul(row, col).to_vector() == std::vector<double>{11});

  std::mt19937_64 rng(1);
  Tensor zero = Tensor::zeros({2, 3});
  Tensor any = random_tensor({3, 5}, rng, DType::f32);
  Tensor out = matmul(zero, any);
  CHECK(out.shape() == Shape{2, 5});
  CHECK(std::all_of(out.data<float>().begin(), out.data<float>().end(),
                    [](float v) { return v == 0.0f; }));
}

TEST_CASE("matmul rejects mismatched shapes with both shapes in the message") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 2}), Tensor::zeros({2, 2}, DType::f64)),
                  ContractError);
}

TEST_CASE("matmul is associative at f64") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 5}, rng);
    Tensor c = random_tensor({5, 2}, rng);
    expect_near(matmul(matmul(a, b), c).to_vector(), matmul(a, matmul(b, c)).to_vector(), 1e-9);
  }
}

TEST_CASE("parallel kernels agree with serial reference") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> dist(-1, 1);
  for (auto [m, k, n] : {std::array<std::size_t, 3>{1, 1, 1}, {7, 13, 5}, {64, 64, 64},
                         {33, 70, 129}, {200, 64, 192}}) {
    std::vector<double> a(m * k), b(k * n), bt(n * k), at(k * m);
    for (auto& x : a) x = dist(rng);
    for (auto& x : b) x = dist(rng);
    for (auto& x : bt) x = dist(rng);
    for (auto& x : at) x = dist(rng);
    std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5);
    kernels::gemm<double>(a, b, c1, m, k, n, true);
    kernels::reference::gemm<double>(a, b, c2, m, k, n, true);
    expect_near(c1, c2, 1e-12);
    kernels::gemm_nt<double>(a, bt, c1, m, k, n, false);
    kernels::reference::gemm_nt<double>(a, bt, c2, m, k, n, false);
    expect_near(c1, c2, 1e-12);
    kernels::gemm_tn<double>(at, b, c1, m, k, n, false);
    kernels::reference::gemm_tn<double>(at, b, c2, m, k, n, false);
    expect_near(c1, c2, 1e-12);

    std::vector<double> s1 = c1;
    std::vector<double> s2 = c1;
    kernels::softmax_rows<double>(s1, m, n);
    kernels::reference::softmax_rows<double>(s2, m, n);
    expect_near(s1, s2, 1e-14);
  }
}

TEST_CASE("softmax examples") {
  expect_near(softmax(Tensor::from_values({2}, {0, 0}, DType::f64), 0).to_vector(), {0.5, 0.5},
              1e-15);
  expect_near(softmax(Tensor::from_values({2}, {std::log(2.0), 0}, DType::f64), 0).to_vector(),
              {2.0 / 3.0, 1.0 / 3.0}, 1e-15);
  CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), DimensionError);
}

TEST_CASE("softmax sums to one along the axis and is shift invariant") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({3, 4, 5}, rng, DType::f64, -5, 5);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Tensor y = softmax(x, axis);
      std::vector<double> v = y.to_vector();
      const std::size_t len = x.dim(axis);
      std::size_t inner = 1;
      for (std::size_t i = axis + 1; i < 3; ++i) inner *= x.dim(i);
      const std::size_t outer = v.size() / (len * inner);
      for (std::size_t a = 0; a < outer; ++a) {
        for (std::size_t c = 0; c < inner; ++c) {
          double s = 0;
          for (std::size_t i = 0; i < len; ++i) {
            const double p = v[a * len * inner + i * inner + c];
            CHECK(p >= 0.0);
            s += p;
          }
          CHECK(std::abs(s - 1.0) <= 1e-6);
        }
      }
      std::vector<double> shifted = x.to_vector();
      for (auto& s : shifted) s += 17.0;
      Tensor xs = Tensor::from_values(x.shape(), shifted, DType::f64);
      expect_near(softmax(xs, axis).to_vector(), v, 1e-6);
    }
  }
}

TEST_CASE("layer_norm examples") {
  Tensor ones = Tensor::full({3}, 1.0, DType::f64);
  Tensor beta = Tensor::full({3}, 0.25, DType::f64);
  Tensor constant = Tensor::full({2, 3}, 4.0, DType::f64);
  expect_near(layer_norm(constant, ones, beta, 1e-5).to_vector(),
              std::vector<double>(6, 0.25), 1e-12);

  Tensor g2 = Tensor::full({2}, 1.0, DType::f64);
  Tensor b2 = Tensor::zeros({2}, DType::f64);
  expect_near(layer_norm(Tensor::from_values({1, 2}, {1, -1}, DType::f64), g2, b2, 1e-12)
                  .to_vector(),
              {1.0, -1.0}, 1e-9);
  // (2 - 1) / sqrt(1 + 1e-5), evaluated independently.
  const double expected = 0.9999950000374997;
  expect_near(layer_norm(Tensor::from_values({2}, {2, 0}, DType::f64), g2, b2, 1e-5).to_vector(),
              {expected, -expected}, 1e-12);

  CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 3}, DType::f64), g2, b2, 1e-5), DimensionError);
}

TEST_CASE("gelu examples") {
  Tensor x = Tensor::from_values({3}, {0, 10, 1}, DType::f64);
  auto y = gelu(x).to_vector();
  CHECK(y[0] == 0.0);
  CHECK(std::abs(y[1] - 10.0) <= 1e-6);
  // 0.5 * (1 + erf(1/sqrt(2))) from an independent erf evaluation.
  CHECK(std::abs(y[2] - 0.8413447460685429) <= 1e-12);
}

TEST_CASE("gather_rows examples and scatter-add gradient") {
  Tensor table = Tensor::from_values({3, 2}, {1, 2, 3, 4, 5, 6}, DType::f64);
  std::vector<int> ids{0, 0};
  CHECK(gather_rows(table, ids).to_vector() == std::vector<double>{1, 2, 1, 2});

  Tensor empty = gather_rows(table, std::vector<int>{});
  CHECK(empty.shape() == Shape{0, 2});

  table.set_requires_grad(true);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(gather_rows(table, std::vector<int>{2, 2}));
    tape.backward(loss);
  }
  CHECK(table.grad_vector() == std::vector<double>{0, 0, 0, 0, 2, 2});

  try {
    gather_rows(table, std::vector<int>{1, 3});
    FAIL("expected IndexError");
  } catch (const IndexError& e) {
    CHECK(std::string(e.what()).find("id 3") != std::string::npos);
  }
}

TEST_CASE("masked_cross_entropy examples") {
  const std::size_t classes = 7;
  Tensor uniform = Tensor::zeros({1, classes}, DType::f64);
  CHECK(std::abs(masked_cross_entropy(uniform, std::vector<int>{4}, -1).item() -
                 std::log(7.0)) <= 1e-12);

  Tensor confident = Tensor::zeros({1, classes}, DType::f64);
  confident.set_value(3, 1e4);
  CHECK(masked_cross_entropy(confident, std::vector<int>{3}, -1).item() <= 1e-12);

  Tensor two = Tensor::from_values({2, 3}, {0.3, -1.0, 2.0, 5.0, 1.0, 0.0}, DType::f64);
  Tensor one = Tensor::from_values({1, 3}, {0.3, -1.0, 2.0}, DType::f64);
  const int pad = 99;
  CHECK(masked_cross_entropy(two, std::vector<int>{1, pad}, pad).item() ==
        doctest::Approx(masked_cross_entropy(one, std::vector<int>{1}, pad).item()).epsilon(1e-15));

  CHECK_THROWS_AS(masked_cross_entropy(two, std::vector<int>{pad, pad}, pad), ContractError);
  CHECK_THROWS_AS(masked_cross_entropy(two, std::vector<int>{3, 0}, pad), IndexError);
}

TEST_CASE("masked_cross_entropy is invariant to row order") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cls(0, 5);
  for (int trial = 0; trial < 30; ++trial) {
    Tensor logits = random_tensor({8, 6}, rng, DType::f64, -3, 3);
    std::vector<int> targets(8);
    for (auto& t : targets) t = cls(rng);
    targets[2] = -1;
    std::vector<std::size_t> order(8);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    auto src = logits.to_vector();
    std::vector<double> permuted(src.size());
    std::vector<int> permuted_targets(8);
    for (std::size_t i = 0; i < 8; ++i) {
      std::copy_n(src.begin() + order[i] * 6, 6, permuted.begin() + i * 6);
      permuted_targets[i] = targets[order[i]];
    }
    const double a = masked_cross_entropy(logits, targets, -1).item();
    const double b =
        masked_cross_entropy(Tensor::from_values({8, 6}, permuted, DType::f64), permuted_targets,
                             -1)
            .item();
    CHECK(std::abs(a - b) <= 1e-12);
  }
}

TEST_CASE("backward examples") {
  Tensor x = Tensor::from_values({4}, {1, -2, 3, 0.5}, DType::f64).set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(x, x)));
  }
  CHECK(x.grad_vector() == std::vector<double>{2, -4, 6, 1});

  Tensor logits = Tensor::from_values({1, 3}, {0.5, -1.0, 2.0}, DType::f64);
  logits.set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(masked_cross_entropy(logits, std::vector<int>{0}, -1));
  }
  auto probs = softmax(Tensor::from_values({3}, {0.5, -1.0, 2.0}, DType::f64), 0).to_vector();
  probs[0] -= 1.0;
  expect_near(logits.grad_vector(), probs, 1e-14);

  Tensor used = Tensor::full({2}, 1.0, DType::f64).set_requires_grad(true);
  Tensor unused = Tensor::full({2}, 1.0, DType::f64).set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor other = scale(unused, 3.0);
    (void)other;
    tape.backward(sum(used));
  }
  CHECK(unused.grad_vector() == std::vector<double>{0, 0});

  Tape tape;
  TapeScope scope(tape);
  Tensor vec = scale(used, 2.0);
  CHECK_THROWS_AS(tape.backward(vec), ContractError);
}

TEST_CASE("gradients accumulate across uses and repeated backward passes agree") {
  std::mt19937_64 rng(9);
  Tensor w = random_tensor({4, 3}, rng).set_requires_grad(true);
  Tensor x = random_tensor({5, 4}, rng);
  Tape tape;
  TapeScope scope(tape);
  Tensor h = matmul(x, w);
  Tensor loss = sum(mul(gelu(h), h));
  tape.backward(loss);
  const auto first = w.grad_vector();
  w.zero_grad();
  tape.backward(loss);
  CHECK(w.grad_vector() == first);
  tape.backward(loss);
  auto doubled = first;
  for (auto& g : doubled) g *= 2;
  expect_near(w.grad_vector(), doubled, 1e-14);
}

TEST_CASE("dropout keeps expectation and routes gradient through survivors") {
  Rng rng(4);
  Tensor x = Tensor::full({1000}, 1.0, DType::f64).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  Tensor y = dropout(x, 0.25, &rng);
  const auto v = y.to_vector();
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / 1000.0;
  CHECK(std::abs(mean - 1.0) < 0.1);
  tape.backward(sum(y));
  CHECK(x.grad_vector() == v);
  CHECK(dropout(x, 0.25, nullptr).impl() == x.impl());
}

TEST_CASE("grad_check examples") {
  std::mt19937_64 rng(21);
  Tensor w = random_tensor({3, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor x = random_tensor({4, 3}, rng);
  Tensor c = random_tensor({4, 2}, rng);
  auto affine = [&] { return sum(mul(linear(x, w, b), c)); };
  CHECK(grad_check(affine, {w, b}, 1e-5) < 1e-8);

  Tensor w2 = random_tensor({2, 3}, rng);
  Tensor b2 = random_tensor({3}, rng);
  Tensor c2 = random_tensor({4, 3}, rng);
  auto mlp = [&] { return sum(mul(linear(gelu(linear(x, w, b)), w2, b2), c2)); };
  CHECK(grad_check(mlp, {w, b, w2, b2}, 1e-5) < 1e-6);

  Tensor f32 = Tensor::zeros({2});
  CHECK_THROWS_AS(grad_check([&] { return sum(f32); }, {f32}, 1e-5), ContractError);

  Tensor blow = Tensor::from_values({1}, {0.0}, DType::f64);
  auto singular = [&] {
    Tensor t = blow;
    if (blow.value(0) != 0.0) {
      return Tensor::scalar(std::nan(""), DType::f64);
    }
    return sum(t);
  };
  CHECK_THROWS_AS(grad_check(singular, {blow}, 1e-5), NumericalError);
}

TEST_CASE("grad_check of every op composite stays below 1e-6") {
  std::mt19937_64 rng(33);
  const double h = 1e-5;
  Tensor x = random_tensor({4, 6}, rng);
  Tensor y = random_tensor({4, 6}, rng);
  Tensor weights = random_tensor({4, 6}, rng);
  Tensor gamma = random_tensor({6}, rng, DType::f64, 0.5, 1.5);
  Tensor beta = random_tensor({6}, rng);

  CHECK(grad_check([&] { return sum(mul(add(x, y), weights)); }, {x, y}, h) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(mul(x, y), weights)); }, {x, y}, h) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(scale(x, -1.7), weights)); }, {x}, h) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(add_bias(x, beta), weights)); }, {x, beta}, h) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(softmax(x, 1), weights)); }, {x}, h) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(softmax(x, 0), weights)); }, {x}, h) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(layer_norm(x, gamma, beta, 1e-5), weights)); },
                   {x, gamma, beta}, h) < 1e-6);
  CHECK(grad_check([&] { return sum(mul(gelu(x), weights)); }, {x}, h) < 1e-6);

  Tensor table = random_tensor({5, 6}, rng);
  std::vector<int> ids{4, 1, 1, 0};
  CHECK(grad_check([&] { return sum(mul(gather_rows(table, ids), weights)); }, {table}, h) < 1e-6);

  std::vector<int> targets{2, -1, 5, 0};
  CHECK(grad_check([&] { return masked_cross_entropy(x, targets, -1); }, {x}, h) < 1e-6);

  Tensor q = random_tensor({2 * 3, 4}, rng);
  Tensor k = random_tensor({2 * 5, 4}, rng);
  Tensor v = random_tensor({2 * 5, 4}, rng);
  Tensor ow = random_tensor({2 * 3, 4}, rng);
  std::vector<std::uint8_t> mask(2 * 3 * 5, 1);
  mask[1] = 0;
  mask[7] = 0;
  mask[20] = 0;
  AttentionShape shape{2, 2, 3, 5};
  CHECK(grad_check([&] { return sum(mul(attention(q, k, v, shape, mask), ow)); }, {q, k, v}, h) <
        1e-6);
  CHECK(grad_check([&] { return sum(mul(attention(q, k, v, shape, {}), ow)); }, {q, k, v}, h) <
        1e-6);
}

TEST_CASE("attention masking and errors") {
  // One head, identity inputs: uniform scores average the value rows.
  Tensor q = Tensor::zeros({1, 2}, DType::f64);
  Tensor k = Tensor::from_values({3, 2}, {1, 0, 0, 1, 1, 1}, DType::f64);
  Tensor v = Tensor::from_values({3, 2}, {3, 0, 0, 6, 3, 3}, DType::f64);
  AttentionShape shape{1, 1, 1, 3};
  expect_near(attention(q, k, v, shape, {}).to_vector(), {2, 3}, 1e-12);

  std::vector<std::uint8_t> only_second{0, 1, 0};
  Tensor q2 = Tensor::from_values({1, 2}, {5, -3}, DType::f64);
  expect_near(attention(q2, k, v, shape, only_second).to_vector(), {0, 6}, 1e-12);

  std::vector<std::uint8_t> none{0, 0, 0};
  CHECK_THROWS_AS(attention(q, k, v, shape, none), ContractError);
  CHECK_THROWS_AS(attention(q, k, v, AttentionShape{1, 3, 1, 3}, {}), DimensionError);
}
