// Copyright (C) 2026 The cgaze Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "cgaze/autograd.hpp"
#include "cgaze/kernels.hpp"
#include "cgaze/optim.hpp"
#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/reference.hpp"

using namespace cgaze;
namespace k = cgaze::kernels;

namespace {

double max_abs_diff(const Tensor& a, const ref::DT& b) {
  REQUIRE(a.shape() == b.shape);
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b.v[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor shape invariants") {
  Tensor t({2, 3, 4, 5});
  CHECK(t.size() == 120);
  CHECK(numel(t.shape()) == static_cast<int64_t>(t.size()));
  CHECK(t.dim(-1) == 5);
  CHECK_THROWS_AS(Tensor({2, 0}), ConfigError);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1}), ConfigError);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0f, 2.0f}), ConfigError);
  CHECK(t.reshaped({6, 20}).size() == 120);
  CHECK_THROWS_AS(t.reshaped({7, 20}), ConfigError);
}

TEST_CASE("conv2d identity scale") {
  Tensor x({1, 1, 4, 4}, 1.0f), w({1, 1, 1, 1}, 2.0f), b({1}, 0.0f);
  Tensor y = k::conv2d(x, w, &b, k::conv_params_for(1, 1));
  CHECK(y.shape() == Shape{1, 1, 4, 4});
  for (float v : y.values()) CHECK(v == 2.0f);
}

TEST_CASE("conv2d depthwise delta kernel is identity") {
  std::mt19937_64 rng(3);
  Tensor x = gradcheck::random_tensor({1, 2, 8, 8}, rng);
  Tensor w({2, 1, 7, 7}, 0.0f);
  w.at(0, 0, 3, 3) = 1.0f;
  w.at(1, 0, 3, 3) = 1.0f;
  Tensor y = k::conv2d(x, w, nullptr, k::conv_params_for(7, 1, 2));
  CHECK(y.bit_equal(x));
}

TEST_CASE("conv2d matches nested-loop oracle") {
  std::mt19937_64 rng(11);
  Tensor x = gradcheck::random_tensor({1, 3, 16, 16}, rng);
  Tensor w = gradcheck::random_tensor({8, 3, 4, 4}, rng);
  Tensor b = gradcheck::random_tensor({8}, rng);
  Tensor y = k::conv2d(x, w, &b, k::conv_params_for(4, 4));
  CHECK(y.shape() == Shape{1, 8, 4, 4});
  const ref::DT rb = ref::DT::from(b);
  CHECK(max_abs_diff(y, ref::conv2d(ref::DT::from(x), ref::DT::from(w), &rb, 4, 0, 1)) < 1e-5);

  SUBCASE("all dispatch paths") {
    struct Case { int c, o, k, s, g, hw; };
    for (Case c : {Case{4, 6, 1, 1, 1, 9}, Case{6, 6, 7, 1, 6, 10}, Case{4, 8, 2, 2, 1, 8},
                   Case{4, 4, 3, 1, 2, 7}, Case{3, 5, 3, 1, 1, 5}}) {
      Tensor xi = gradcheck::random_tensor({2, c.c, c.hw, c.hw}, rng);
      Tensor wi = gradcheck::random_tensor({c.o, c.c / c.g, c.k, c.k}, rng);
      const auto p = k::conv_params_for(c.k, c.s, c.g);
      Tensor yi = k::conv2d(xi, wi, nullptr, p);
      CHECK(max_abs_diff(yi, ref::conv2d(ref::DT::from(xi), ref::DT::from(wi), nullptr, p.stride,
                                         p.pad, p.groups)) < 1e-5);
    }
  }
}

TEST_CASE("conv2d shape errors name both shapes") {
  Tensor x({1, 3, 8, 8}), w({4, 2, 3, 3});
  try {
    k::conv2d(x, w, nullptr, k::conv_params_for(3, 1));
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,3,8,8)") != std::string::npos);
    CHECK(msg.find("(4,2,3,3)") != std::string::npos);
  }
  CHECK_THROWS_AS(k::conv2d(Tensor({1, 3, 8, 8}), Tensor({4, 1, 3, 3}), nullptr, k::conv_params_for(3, 1, 2)),
                  ConfigError);
}

TEST_CASE("linear") {
  Tensor x({1, 2}, {1.0f, 2.0f});
  Tensor w({3, 2}, {1, 0, 0, 1, 1, 1});
  Tensor b({3}, {0, 0, 1});
  Tensor y = k::linear(x, w, &b);
  CHECK(y.shape() == Shape{1, 3});
  CHECK(y[0] == 1.0f);
  CHECK(y[1] == 2.0f);
  CHECK(y[2] == 4.0f);

  Tensor eye({2, 2}, {1, 0, 0, 1});
  CHECK(k::linear(x, eye, nullptr).bit_equal(x));

  std::mt19937_64 rng(5);
  Tensor xr = gradcheck::random_tensor({4, 10}, rng), wr = gradcheck::random_tensor({7, 10}, rng);
  CHECK(max_abs_diff(k::linear(xr, wr, nullptr), ref::linear(ref::DT::from(xr), ref::DT::from(wr), nullptr)) < 1e-6);
  CHECK_THROWS_AS(k::linear(Tensor({2, 3}), wr, nullptr), ConfigError);
}

TEST_CASE("layer_norm") {
  Tensor g({3}, 1.0f), b({3}, 0.0f);
  Tensor y = k::layer_norm(Tensor({1, 3}, {1, 2, 3}), g, b, k::NormAxis::Last, nullptr);
  CHECK(y[0] == doctest::Approx(-1.2247).epsilon(1e-3));
  CHECK(y[1] == doctest::Approx(0.0).epsilon(1e-3));
  CHECK(y[2] == doctest::Approx(1.2247).epsilon(1e-3));

  Tensor c = k::layer_norm(Tensor({2, 3, 2, 2}, 4.0f), g, b, k::NormAxis::Channel, nullptr);
  for (float v : c.values()) CHECK(v == 0.0f);

  std::mt19937_64 rng(2);
  Tensor x = gradcheck::random_tensor({2, 5, 3, 4}, rng);
  Tensor gg = gradcheck::random_tensor({5}, rng), bb = gradcheck::random_tensor({5}, rng);
  Tensor yc = k::layer_norm(x, gg, bb, k::NormAxis::Channel, nullptr);
  CHECK(yc.shape() == x.shape());
  CHECK(max_abs_diff(yc, ref::layer_norm(ref::DT::from(x), ref::DT::from(gg), ref::DT::from(bb), true)) < 1e-5);
}

TEST_CASE("batch_norm") {
  Tensor g({1}, 1.0f), b({1}, 0.0f), rm({1}, 0.0f), rv({1}, 1.0f);
  Tensor x({2, 1}, {0.0f, 2.0f});
  k::BatchStats stats;
  Tensor y = k::batch_norm(x, g, b, rm, rv, true, nullptr, &stats);
  CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-3));
  k::update_running_stats(rm, rv, stats);
  CHECK(rm[0] == doctest::Approx(0.1f));
  CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));  // unbiased batch variance 2

  Tensor eval_in({3, 1}, {-1.0f, 0.5f, 7.0f});
  Tensor rm0({1}, 0.0f), rv1({1}, 1.0f);
  Tensor e = k::batch_norm(eval_in, g, b, rm0, rv1, false, nullptr, nullptr);
  for (size_t i = 0; i < e.size(); ++i) CHECK(e[i] == doctest::Approx(eval_in[i]).epsilon(1e-5));

  SUBCASE("single-element training batch is permitted") {
    Tensor one({1, 1}, {3.0f});
    Tensor r = k::batch_norm(one, g, b, rm0, rv1, true, nullptr, &stats);
    CHECK(r[0] == 0.0f);
    CHECK(std::isfinite(r[0]));
  }
}

TEST_CASE("activations") {
  Tensor z({1}, 0.0f);
  CHECK(k::gelu(z)[0] == 0.0f);
  CHECK(k::gelu(Tensor({1}, 1.0f))[0] == doctest::Approx(0.8412).epsilon(1e-3));
  CHECK(k::leaky_relu(Tensor({1}, -1.0f), 0.01f)[0] == doctest::Approx(-0.01f));
  CHECK(k::leaky_relu(Tensor({1}, 2.0f))[0] == 2.0f);
}

TEST_CASE("grn") {
  std::mt19937_64 rng(8);
  Tensor x = gradcheck::random_tensor({2, 4, 3, 3}, rng);
  Tensor zero({4}, 0.0f);
  CHECK(k::grn(x, zero, zero, nullptr).bit_equal(x));

  // channel 0 has spatial norm 1, channel 1 has 3: mean 2, scales 0.5 and 1.5
  Tensor t({1, 2, 1, 2}, {0.6f, 0.8f, 1.8f, 2.4f});
  Tensor one({2}, 1.0f), z2({2}, 0.0f);
  Tensor y = k::grn(t, one, z2, nullptr);
  CHECK(y[0] == doctest::Approx(0.6 * 0.5 + 0.6).epsilon(1e-5));
  CHECK(y[1] == doctest::Approx(0.8 * 0.5 + 0.8).epsilon(1e-5));
  CHECK(y[2] == doctest::Approx(1.8 * 1.5 + 1.8).epsilon(1e-5));
  CHECK(y[3] == doctest::Approx(2.4 * 1.5 + 2.4).epsilon(1e-5));
}

TEST_CASE("global_avg_pool") {
  CHECK(k::global_avg_pool(Tensor({1, 1, 3, 3}, 5.0f))[0] == 5.0f);
  CHECK(k::global_avg_pool(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}))[0] == 2.5f);
  std::mt19937_64 rng(9);
  Tensor x = gradcheck::random_tensor({3, 4, 5, 6}, rng);
  CHECK(max_abs_diff(k::global_avg_pool(x), ref::gap(ref::DT::from(x))) < 1e-6);
}

TEST_CASE("l1_loss") {
  Tensor p({2}, {1.0f, 2.0f}), t({2}, 0.0f);
  CHECK(k::l1_loss(p, p) == 0.0);
  CHECK(k::l1_loss(p, t) == doctest::Approx(1.5));
  Tensor g = k::l1_loss_grad(Tensor({3}, {1.0f, -2.0f, 0.5f}), Tensor({3}, {0.0f, 0.0f, 0.5f}));
  CHECK(g[0] == doctest::Approx(1.0 / 3));
  CHECK(g[1] == doctest::Approx(-1.0 / 3));
  CHECK(g[2] == 0.0f);
  CHECK_THROWS_AS(k::l1_loss(p, Tensor({3})), ConfigError);
}

TEST_CASE("masked_mse") {
  Tensor p({2}, {1.0f, 1.0f}), t({2}, 0.0f), m({2}, {1.0f, 0.0f});
  CHECK(k::masked_mse(p, t, m) == doctest::Approx(1.0));
  CHECK(k::masked_mse(p, p, m) == 0.0);
  CHECK_THROWS_WITH_AS(k::masked_mse(p, t, Tensor({2}, 0.0f)), doctest::Contains("empty mask"), DataError);

  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = gradcheck::random_tensor({2, 3, 4, 4}, rng), b = gradcheck::random_tensor({2, 3, 4, 4}, rng);
    Tensor mask({2, 1, 4, 4});
    std::bernoulli_distribution coin(0.4);
    for (float& v : mask.values()) v = coin(rng);
    mask[0] = 1.0f;
    double s = 0.0;
    int64_t n = 0;
    for (int i = 0; i < 2; ++i)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x)
            if (mask.at(i, 0, y, x) != 0.0f) {
              const double d = static_cast<double>(a.at(i, c, y, x)) - b.at(i, c, y, x);
              s += d * d;
              ++n;
            }
    CHECK(k::mask_count(a.shape(), mask) == n);
    CHECK(k::masked_mse(a, b, mask) == doctest::Approx(s / n).epsilon(1e-6));

    // unmasked positions influence neither the value nor the gradient
    Tensor a2 = a;
    for (int i = 0; i < 2; ++i)
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x)
            if (mask.at(i, 0, y, x) == 0.0f) a2.at(i, c, y, x) += 10.0f;
    CHECK(k::masked_mse(a2, b, mask) == k::masked_mse(a, b, mask));
    CHECK(k::masked_mse_grad(a2, b, mask).bit_equal(k::masked_mse_grad(a, b, mask)));
  }
}

TEST_CASE("optimizer") {
  SUBCASE("zero gradient and no decay leaves the value") {
    Parameter p("w", Tensor({3}, {1, 2, 3}));
    p.grad = Tensor({3}, 0.0f);
    AdamW opt(AdamWConfig{0.9f, 0.999f, 1e-8f, 0.0f});
    opt.step({&p}, 0.1f);
    CHECK(p.value.bit_equal(Tensor({3}, {1, 2, 3})));
  }
  SUBCASE("first step moves by lr") {
    Parameter p("w", Tensor({1}, {1.0f}));
    p.grad = Tensor({1}, {1.0f});
    AdamW opt(AdamWConfig{0.9f, 0.999f, 1e-8f, 0.0f});
    opt.step({&p}, 0.1f);
    CHECK(p.value[0] == doctest::Approx(0.9).epsilon(1e-5));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("decoupled weight decay on the default config") {
    Parameter p("w", Tensor({1}, {1.0f}));
    p.grad = Tensor({1}, {1.0f});
    AdamW opt;
    opt.step({&p}, 0.1f);
    CHECK(p.value[0] == doctest::Approx(1.0 * (1 - 0.1 * 0.05) - 0.1).epsilon(1e-5));
  }
  SUBCASE("frozen parameter untouched") {
    Parameter p("w", Tensor({2}, {1, 2}));
    p.trainable = false;
    p.grad = Tensor({2}, {5, 5});
    AdamW opt;
    opt.step({&p}, 0.1f);
    CHECK(p.value.bit_equal(Tensor({2}, {1, 2})));
  }
  SUBCASE("missing gradient names the parameter") {
    Parameter p("stages.1.0.adapter.fc_up.weight", Tensor({2}));
    AdamW opt;
    CHECK_THROWS_WITH_AS(opt.step({&p}, 0.1f), doctest::Contains("stages.1.0.adapter.fc_up.weight"), ConfigError);
  }
  SUBCASE("state roundtrip continues identically") {
    Parameter a("w", Tensor({2}, {1, -1})), b("w", Tensor({2}, {1, -1}));
    AdamW oa, ob;
    for (int i = 0; i < 3; ++i) {
      a.grad = Tensor({2}, {0.3f, -0.2f});
      oa.step({&a}, 0.01f);
    }
    b.value = a.value;
    ob.load_state(oa.state());
    a.grad = b.grad = Tensor({2}, {0.1f, 0.4f});
    oa.step({&a}, 0.01f);
    ob.step({&b}, 0.01f);
    CHECK(a.value.bit_equal(b.value));
  }
}

TEST_CASE("autograd tape honours freezing") {
  Parameter w("w", Tensor({2, 3}, 0.5f)), f("f", Tensor({2}, 1.0f));
  f.trainable = false;
  ag::Tape tape;
  auto x = ag::constant(Tensor({4, 3}, 1.0f));
  auto y = ag::linear(x, tape.param(w), tape.param(f));
  ag::backward(ag::masked_mse(y, ag::constant(Tensor({4, 2}, 0.0f)), Tensor({4, 2}, 1.0f)));
  CHECK(tape.grad_of(w) != nullptr);
  CHECK(tape.grad_of(f) == nullptr);

  ag::Tape frozen(false);
  auto z = ag::linear(x, frozen.param(w), frozen.param(f));
  CHECK_FALSE(z->requires_grad);
}

TEST_CASE("gradients match finite differences") {
  for (const auto& suite : gradcheck::all_suites()) {
    for (uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = suite.run(seed);
      INFO(suite.name << " seed " << seed << " rel_err " << r.rel_err);
      CHECK(r.rel_err < gradcheck::kTolerance);
      CHECK(r.coords > 0);
    }
  }
}
