#include <doctest.h>

#include <cmath>
#include <random>

#include "gtrans/tensor.hpp"
#include "oracles.hpp"

using namespace gtrans;

namespace {

// Deterministic pseudo-random scalar weights so the checked loss exercises
// every output entry with distinct sensitivities.
Tensor probe_weights(const std::vector<int>& shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  return randu(shape, -1.0, 1.0, rng);
}

Scalar weighted_sum(const Tensor& t, const Tensor& w) {
  Scalar s = 0;
  for (int64_t i = 0; i < t.size(); ++i) s += t[i] * w[i];
  return s;
}

// Checks autograd gradients of `forward` against central differences for each
// listed input tensor.
template <typename Forward>
void check_grads(Forward&& forward, std::vector<Var> inputs, double tol = 1e-6) {
  Var loss = forward();
  REQUIRE(loss.val().size() == 1);
  for (Var& v : inputs) v.zero_grad();
  backward(loss);
  for (Var& v : inputs) {
    REQUIRE_FALSE(v.grad().empty());
    for (int64_t i = 0; i < v.val().size(); ++i) {
      double numeric = oracle::numeric_grad([&] { return forward().val()[0]; }, v.val(), i, 1e-5);
      double analytic = v.grad()[i];
      INFO("entry " << i << " analytic=" << analytic << " numeric=" << numeric);
      CHECK(oracle::rel_err(analytic, numeric) < tol);
    }
  }
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("matmul matches loop reference") {
  std::mt19937_64 rng(1);
  Var a(randu({3, 4}, -1, 1, rng));
  Var b(randu({4, 5}, -1, 1, rng));
  Tensor out = matmul(a, b).val();
  oracle::Mat ref = oracle::matmul(oracle::from_tensor(a.val()), oracle::from_tensor(b.val()));
  for (int64_t i = 0; i < out.size(); ++i)
    CHECK(out[i] == doctest::Approx(ref.v[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("softmax columns are distributions") {
  std::mt19937_64 rng(2);
  Var x(randu({7, 5}, -3, 3, rng));
  Tensor y = softmax_cols(x).val();
  for (int c = 0; c < 5; ++c) {
    Scalar s = 0;
    for (int r = 0; r < 7; ++r) {
      CHECK(y.at(r, c) >= 0.0);
      s += y.at(r, c);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("elementwise and linear op gradients") {
  std::mt19937_64 rng(3);
  Var a(randu({3, 4}, -1, 1, rng), true);
  Var b(randu({3, 4}, -1, 1, rng), true);
  Var m(randu({4, 3}, -1, 1, rng), true);
  Tensor w34 = probe_weights({3, 3}, 7);

  SUBCASE("add/sub/mul/scale") {
    check_grads([&] {
      Var h = mul(add(a, b), sub(a, scale(b, 0.3)));
      return sum_all(h);
    }, {a, b});
  }
  SUBCASE("matmul/transpose") {
    check_grads([&] {
      Var h = matmul(a, m);  // (3,3)
      Var loss = sum_all(mul(transpose(h), Var(w34)));
      return loss;
    }, {a, m});
  }
  SUBCASE("relu") {
    check_grads([&] { return sum_all(mul(relu(a), Var(probe_weights({3, 4}, 9)))); }, {a});
  }
  SUBCASE("row/col broadcast adds") {
    Var rv(randu({4}, -1, 1, rng), true);
    Var cv(randu({3}, -1, 1, rng), true);
    check_grads([&] {
      return sum_all(mul(add_colvec(add_rowvec(a, rv), cv), Var(probe_weights({3, 4}, 11))));
    }, {a, rv, cv});
  }
}

TEST_CASE("softmax and layer norm gradients") {
  std::mt19937_64 rng(4);
  Var x(randu({5, 3}, -2, 2, rng), true);
  Var gain(randu({5}, 0.5, 1.5, rng), true);
  Var off(randu({5}, -0.5, 0.5, rng), true);
  Tensor w = probe_weights({5, 3}, 13);

  SUBCASE("softmax_cols") {
    check_grads([&] { return sum_all(mul(softmax_cols(x), Var(w))); }, {x}, 1e-5);
  }
  SUBCASE("softmax_rows") {
    check_grads([&] { return sum_all(mul(softmax_rows(x), Var(w))); }, {x}, 1e-5);
  }
  SUBCASE("layer_norm_cols") {
    check_grads([&] { return sum_all(mul(layer_norm_cols(x, gain, off), Var(w))); },
                {x, gain, off}, 1e-5);
  }
}

TEST_CASE("shape transforms gradients") {
  std::mt19937_64 rng(5);
  Var x(randu({2, 6}, -1, 1, rng), true);
  SUBCASE("reshape") {
    check_grads([&] { return sum_all(mul(reshape(x, {3, 4}), Var(probe_weights({3, 4}, 17)))); },
                {x});
  }
  SUBCASE("slice and concat") {
    check_grads([&] {
      Var left = slice_cols(x, 0, 2);
      Var right = slice_cols(x, 2, 6);
      Var joined = concat_cols({right, left});
      return sum_all(mul(joined, Var(probe_weights({2, 6}, 19))));
    }, {x});
  }
  SUBCASE("slice_image") {
    Var batch(randu({2, 3, 2, 2}, -1, 1, rng), true);
    check_grads([&] {
      Var img = slice_image(batch, 1);
      return sum_all(mul(img, Var(probe_weights({3, 4}, 23))));
    }, {batch});
  }
}

TEST_CASE("conv2d forward matches direct convolution") {
  std::mt19937_64 rng(6);
  Var x(randu({1, 2, 5, 5}, -1, 1, rng));
  Var w(randu({3, 2, 3, 3}, -1, 1, rng));
  Var bias(randu({3}, -1, 1, rng));
  Tensor out = conv2d(x, w, bias, 2, 1).val();
  REQUIRE(out.shape() == std::vector<int>{1, 3, 3, 3});
  // direct nested-loop convolution
  for (int co = 0; co < 3; ++co)
    for (int oi = 0; oi < 3; ++oi)
      for (int oj = 0; oj < 3; ++oj) {
        double s = bias.val()[co];
        for (int ci = 0; ci < 2; ++ci)
          for (int ki = 0; ki < 3; ++ki)
            for (int kj = 0; kj < 3; ++kj) {
              int ii = oi * 2 + ki - 1, jj = oj * 2 + kj - 1;
              if (ii < 0 || ii >= 5 || jj < 0 || jj >= 5) continue;
              s += x.val()[(ci * 5 + ii) * 5 + jj] * w.val()[((co * 2 + ci) * 3 + ki) * 3 + kj];
            }
        CHECK(out[(co * 3 + oi) * 3 + oj] == doctest::Approx(s).epsilon(1e-12));
      }
}

TEST_CASE("conv2d gradients") {
  std::mt19937_64 rng(7);
  Var x(randu({2, 2, 4, 4}, -1, 1, rng), true);
  Var w(randu({3, 2, 3, 3}, -1, 1, rng), true);
  Var bias(randu({3}, -0.5, 0.5, rng), true);
  check_grads([&] {
    Var y = conv2d(x, w, bias, 1, 1);
    return sum_all(mul(y, Var(probe_weights(y.val().shape(), 29))));
  }, {x, w, bias}, 1e-5);
}

TEST_CASE("batch_norm2d gradients in training mode") {
  std::mt19937_64 rng(8);
  Var x(randu({2, 3, 3, 3}, -1, 1, rng), true);
  Var gamma(randu({3}, 0.5, 1.5, rng), true);
  Var beta(randu({3}, -0.5, 0.5, rng), true);
  check_grads([&] {
    Tensor rm = Tensor::zeros({3});  // fresh buffers: the check re-runs forward
    Tensor rv = Tensor::full({3}, 1.0);
    Var y = batch_norm2d(x, gamma, beta, rm, rv, true);
    return sum_all(mul(y, Var(probe_weights(y.val().shape(), 31))));
  }, {x, gamma, beta}, 1e-4);
}

TEST_CASE("batch_norm2d eval mode uses running statistics") {
  std::mt19937_64 rng(9);
  Var x(randu({2, 2, 2, 2}, -1, 1, rng), true);
  Var gamma(Tensor::full({2}, 1.0), true);
  Var beta(Tensor::zeros({2}), true);
  Tensor rm({2}, std::vector<Scalar>{0.5, -0.5});
  Tensor rv({2}, std::vector<Scalar>{4.0, 0.25});
  Tensor y = batch_norm2d(x, gamma, beta, rm, rv, false).val();
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 2; ++c)
      for (int i = 0; i < 4; ++i) {
        double xv = x.val()[(n * 2 + c) * 4 + i];
        double expect = (xv - rm[c]) / std::sqrt(rv[c] + 1e-5);
        CHECK(y[(n * 2 + c) * 4 + i] == doctest::Approx(expect).epsilon(1e-10));
      }
  // eval-mode gradients
  check_grads([&] {
    Var out = batch_norm2d(x, gamma, beta, rm, rv, false);
    return sum_all(mul(out, Var(probe_weights(out.val().shape(), 37))));
  }, {x, gamma, beta}, 1e-5);
}

TEST_CASE("max_pool2d forward and gradient") {
  std::mt19937_64 rng(10);
  Var x(randu({1, 1, 4, 4}, -1, 1, rng), true);
  Tensor y = max_pool2d(x, 2, 2, 0).val();
  REQUIRE(y.shape() == std::vector<int>{1, 1, 2, 2});
  CHECK(y[0] == doctest::Approx(std::max({x.val()[0], x.val()[1], x.val()[4], x.val()[5]})));
  check_grads([&] {
    Var out = max_pool2d(x, 2, 2, 0);
    return sum_all(mul(out, Var(probe_weights(out.val().shape(), 41))));
  }, {x}, 1e-5);
}

TEST_CASE("gradient accumulates when a value is used twice") {
  Var x(Tensor({1}, std::vector<Scalar>{3.0}), true);
  Var y = mul(x, x);  // d/dx = 2x = 6
  backward(y);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("NoGradGuard suppresses tape recording") {
  Var x(Tensor({1}, std::vector<Scalar>{2.0}), true);
  NoGradGuard ng;
  Var y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.node()->inputs.empty());
}

TEST_CASE("shape mismatches raise ShapeError") {
  Var a(Tensor::zeros({2, 3}));
  Var b(Tensor::zeros({3, 2}));
  CHECK_THROWS_AS((void)add(a, b), ShapeError);
  CHECK_THROWS_AS((void)matmul(a, a), ShapeError);
}

}  // TEST_SUITE
