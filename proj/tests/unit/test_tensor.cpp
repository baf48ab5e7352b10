#include <doctest.h>

#include <cmath>

#include "dalign/error.hpp"
#include "dalign/tensor.hpp"
#include "unit/helpers.hpp"

using namespace dalign;
using dalign::test::gradient_error;
using dalign::test::random_tensor;

TEST_SUITE("tensor") {
  TEST_CASE("matmul by identity and by hand") {
    Rng rng(1);
    Tensor a = random_tensor({3, 3}, rng, false);
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor r = matmul(a, eye);
    for (std::size_t i = 0; i < 9; ++i) CHECK(r.at(i) == a.at(i));

    Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor ones = Tensor::from({2, 1}, {1, 1});
    Tensor p = matmul(m, ones);
    CHECK(p.shape() == Shape{2, 1});
    CHECK(p.at(0) == 3.0);
    CHECK(p.at(1) == 7.0);
  }

  TEST_CASE("matmul shape mismatch reports both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
      matmul(a, b);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[2x3]") != std::string::npos);
      CHECK(msg.find("[4x5]") != std::string::npos);
    }
  }

  TEST_CASE("matmul gradient matches finite differences within 1e-6") {
    Rng rng(2);
    Tensor a = random_tensor({5, 4}, rng);
    Tensor b = random_tensor({4, 3}, rng);
    Tensor w = random_tensor({5, 3}, rng, false);
    auto loss = [&] { return sum(mul(matmul(a, b), w)); };
    CHECK(gradient_error(loss, {a, b}) <= 1e-6);
  }

  TEST_CASE("softmax examples") {
    Tensor s = softmax(Tensor::from({2}, {0, 0}), 0, 1.0);
    CHECK(s.at(0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(s.at(1) == doctest::Approx(0.5).epsilon(1e-15));

    Tensor sharp = softmax(Tensor::from({2}, {10, 0}), 0, 1e-3);
    CHECK(std::abs(sharp.at(0) - 1.0) <= 1e-9);
    CHECK(std::abs(sharp.at(1)) <= 1e-9);

    Tensor v = softmax(Tensor::from({3}, {1, 2, 3}), 0, 1.0);
    CHECK(v.at(0) == doctest::Approx(0.09003057317038046).epsilon(1e-14));
    CHECK(v.at(1) == doctest::Approx(0.24472847105479764).epsilon(1e-14));
    CHECK(v.at(2) == doctest::Approx(0.6652409557748218).epsilon(1e-14));
  }

  TEST_CASE("softmax rejects non-positive temperature") {
    Tensor x = Tensor::from({2}, {1, 2});
    CHECK_THROWS_AS(softmax(x, 0, 0.0), ParameterError);
    CHECK_THROWS_AS(softmax(x, 0, -1.0), ParameterError);
  }

  TEST_CASE("softmax rows sum to one and stay positive") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = random_tensor({4, 7}, rng, false);
      for (std::size_t axis : {0u, 1u}) {
        Tensor s = softmax(scale(x, 30.0), axis, 0.5);
        const std::size_t rows = axis == 1 ? 4 : 7;
        for (std::size_t r = 0; r < rows; ++r) {
          double total = 0.0;
          for (std::size_t k = 0; k < (axis == 1 ? 7u : 4u); ++k) {
            const double v = axis == 1 ? s.at(r, k) : s.at(k, r);
            CHECK(v > 0.0);
            total += v;
          }
          CHECK(std::abs(total - 1.0) <= 1e-12);
        }
      }
    }
  }

  TEST_CASE("layer_norm examples") {
    Tensor g = Tensor::full({2}, 1.0);
    Tensor b = Tensor::zeros({2});
    Tensor c = layer_norm(Tensor::from({1, 2}, {5, 5}), g, b);
    CHECK(c.at(0) == 0.0);
    CHECK(c.at(1) == 0.0);
    Tensor r = layer_norm(Tensor::from({1, 2}, {1, 3}), g, b);
    CHECK(r.at(0) == doctest::Approx(-0.9999950000374997).epsilon(1e-14));
    CHECK(r.at(1) == doctest::Approx(0.9999950000374997).epsilon(1e-14));
    CHECK(std::abs(r.at(0) + 1.0) <= 1e-4);
  }

  TEST_CASE("layer_norm gradient") {
    Rng rng(4);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor g = random_tensor({6}, rng);
    Tensor b = random_tensor({6}, rng);
    Tensor w = random_tensor({3, 6}, rng, false);
    auto loss = [&] { return sum(mul(layer_norm(x, g, b), w)); };
    CHECK(gradient_error(loss, {x, g, b}) <= 1e-6);
  }

  TEST_CASE("cross_entropy examples") {
    std::vector<std::size_t> label{2};
    Tensor uniform = Tensor::zeros({1, 4});
    CHECK(cross_entropy(uniform, label).item() == doctest::Approx(std::log(4.0)).epsilon(1e-14));

    Tensor confident = Tensor::from({1, 4}, {0, 0, 1e6, 0});
    CHECK(cross_entropy(confident, label).item() <= 1e-12);

    Tensor l = Tensor::from({2, 3}, {1, 2, 3, 1, 0, -1});
    std::vector<std::size_t> labels{2, 0};
    CHECK(cross_entropy(l, labels).item() == doctest::Approx(0.40760596444438046).epsilon(1e-14));
  }

  TEST_CASE("cross_entropy label out of range") {
    std::vector<std::size_t> bad{4};
    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 4}), bad), IndexError);
  }

  TEST_CASE("l2_normalize examples") {
    Tensor v = l2_normalize(Tensor::from({1, 2}, {3, 4}), 1);
    CHECK(v.at(0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(v.at(1) == doctest::Approx(0.8).epsilon(1e-15));
    Tensor u = l2_normalize(Tensor::from({1, 3}, {0, 1, 0}), 1);
    CHECK(u.at(0) == 0.0);
    CHECK(u.at(1) == 1.0);
    Tensor z = l2_normalize(Tensor::zeros({1, 3}), 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(z.at(i) == 0.0);
    CHECK(z.all_finite());
  }

  TEST_CASE("backward contract and simple gradients") {
    Tensor x = Tensor::from({3}, {1, -2, 0.5}, true);
    CHECK_THROWS_AS(mul(x, x).backward(), ContractError);

    sum(x).backward();
    for (double g : x.grad()) CHECK(g == 1.0);

    x.zero_grad();
    Tensor xx = reshape(x, {1, 3});
    matmul(xx, transpose(xx)).backward();
    const auto g = x.grad();
    CHECK(g[0] == 2.0);
    CHECK(g[1] == -4.0);
    CHECK(g[2] == 1.0);
  }

  TEST_CASE("fan-out accumulates and backward is linear") {
    Rng rng(5);
    Tensor x = random_tensor({4}, rng);
    auto f = [&] { return sum(exp(x)); };
    auto g = [&] { return sum(mul(x, x)); };
    x.zero_grad();
    f().backward();
    const auto gf = x.grad();
    x.zero_grad();
    g().backward();
    const auto gg = x.grad();
    x.zero_grad();
    add(f(), g()).backward();
    const auto gsum = x.grad();
    for (std::size_t i = 0; i < 4; ++i) CHECK(gsum[i] == doctest::Approx(gf[i] + gg[i]).epsilon(1e-14));
  }

  TEST_CASE("every differentiable op matches finite differences on random inputs") {
    Rng rng(6);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({3, 4}, rng);
    Tensor bias = random_tensor({4}, rng);
    Tensor s = random_tensor({1}, rng);
    Tensor w = random_tensor({3, 4}, rng, false);
    const std::vector<std::size_t> rows{2, 0, 2};
    const std::vector<std::size_t> labels{1, 3, 0};
    auto dot = [&](const Tensor& t) { return sum(mul(t, w)); };

    CHECK(gradient_error([&] { return dot(add(a, b)); }, {a, b}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(sub(a, b)); }, {a, b}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(mul(a, b)); }, {a, b}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(scale(a, -1.7)); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(add_row(a, bias)); }, {a, bias}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(mul_scalar(a, reshape(s, {}))); }, {a, s}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(exp(a)); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(gelu(scale(a, 3.0))); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return mean(mul(a, a)); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(softmax(a, 1, 0.3)); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(softmax(a, 0, 2.0)); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(l2_normalize(a, 1)); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(l2_normalize(a, 0)); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return cross_entropy(scale(a, 2.0), labels); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return dot(transpose(transpose(a))); }, {a}) <= 1e-4);
    CHECK(gradient_error([&] { return sum(mul(gather_rows(a, rows), b)); }, {a, b}) <= 1e-4);
    CHECK(gradient_error([&] { return sum(mul(mean_rows(a, rows), bias)); }, {a, bias}) <= 1e-4);
    CHECK(gradient_error(
              [&] {
                std::vector<Tensor> parts{mean_rows(a, rows), reshape(bias, {1, 4})};
                return sum(mul(stack_rows(parts), stack_rows(parts)));
              },
              {a, bias}) <= 1e-4);
  }

  TEST_CASE("causal attention gradient and masking") {
    Rng rng(7);
    const std::size_t batch = 2, seq = 4, width = 6, heads = 2;
    Tensor qkv = random_tensor({batch * seq, 3 * width}, rng);
    Tensor w = random_tensor({batch * seq, width}, rng, false);
    const std::vector<std::size_t> lengths{4, 3};
    auto loss = [&] { return sum(mul(causal_self_attention(qkv, batch, seq, heads, lengths), w)); };
    CHECK(gradient_error(loss, {qkv}) <= 1e-4);

    // Row 1 of example 0 sees only positions 0 and 1.
    Tensor before = causal_self_attention(qkv, batch, seq, heads, lengths);
    auto data = qkv.mutable_data();
    for (std::size_t j = 0; j < 3 * width; ++j) data[3 * 3 * width + j] += 5.0;
    Tensor after = causal_self_attention(qkv, batch, seq, heads, lengths);
    for (std::size_t j = 0; j < width; ++j) CHECK(before.at(1, j) == after.at(1, j));
  }

  TEST_CASE("ops are bit-deterministic") {
    Rng r1(8), r2(8);
    Tensor a1 = random_tensor({6, 5}, r1), a2 = random_tensor({6, 5}, r2);
    Tensor b1 = random_tensor({5, 7}, r1), b2 = random_tensor({5, 7}, r2);
    Tensor y1 = softmax(gelu(matmul(a1, b1)), 1, 0.7);
    Tensor y2 = softmax(gelu(matmul(a2, b2)), 1, 0.7);
    CHECK(std::vector<double>(y1.data().begin(), y1.data().end()) ==
          std::vector<double>(y2.data().begin(), y2.data().end()));
  }

  TEST_CASE("no-grad mode records nothing") {
    Tensor x = Tensor::from({2}, {1, 2}, true);
    NoGradGuard g;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }

  TEST_CASE("mean_rows of an empty set is a contract error") {
    std::vector<std::size_t> none;
    CHECK_THROWS_AS(mean_rows(Tensor::zeros({2, 2}), none), ContractError);
  }
}
