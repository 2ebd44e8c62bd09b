/*
 * Copyright 2026 The ginigcn Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#include <gtest/gtest.h>

#include <ginigcn/gini.hpp>
#include <ginigcn/random.hpp>

#include "support/oracles.hpp"

using namespace ginigcn;

namespace {

std::vector<double> random_vector(std::size_t n, Rng& rng)
{
  std::vector<double> v(n);
  for (double& x : v)
    x = uniform(rng, -5.0, 5.0);
  return v;
}

double g_of(const std::vector<double>& v) { return gini(std::span<const double>(v)).value; }

} // namespace

TEST(Gini, ClosedFormValues)
{
  EXPECT_EQ(g_of({1, 1, 1, 1}), 0.0);
  EXPECT_NEAR(g_of({0, 0, 0, 1}), 0.75, 1e-12);
  EXPECT_NEAR(g_of({1, 2, 3}), 2.0 / 9.0, 1e-12);
  EXPECT_EQ(g_of({-1, 2}), g_of({1, 2}));
  EXPECT_EQ(g_of({7}), 0.0);
}

TEST(Gini, AllZeroIsDegenerate)
{
  const std::vector<double> z{0, 0, 0};
  auto r = gini(std::span<const double>(z));
  EXPECT_EQ(r.value, 0.0);
  EXPECT_TRUE(r.degenerate);
  EXPECT_THROW(gini(std::span<const double>()), std::invalid_argument);
}

TEST(Gini, InvariancesAndRange)
{
  Rng rng = make_rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + uniform_index(rng, 50);
    auto v = random_vector(n, rng);
    const double g = g_of(v);
    EXPECT_GE(g, 0.0);
    EXPECT_LE(g, (static_cast<double>(n) - 1.0) / static_cast<double>(n) + 1e-15);

    const double c = uniform(rng, 0.01, 100.0) * (uniform01(rng) < 0.5 ? -1.0 : 1.0);
    auto scaled = v;
    for (double& x : scaled)
      x *= c;
    EXPECT_NEAR(g_of(scaled), g, 1e-12);

    auto flipped = v;
    for (double& x : flipped)
      if (uniform01(rng) < 0.5)
        x = -x;
    EXPECT_NEAR(g_of(flipped), g, 1e-12);

    auto shuffled = v;
    shuffle(shuffled, rng);
    EXPECT_NEAR(g_of(shuffled), g, 1e-12);
  }
}

TEST(Gini, MatchesDoubleSumOracle)
{
  Rng rng = make_rng(22);
  for (std::size_t n : {1, 2, 3, 10, 100, 1000}) {
    auto v = random_vector(n, rng);
    EXPECT_NEAR(g_of(v), oracle::gini_double_sum(v), 1e-12) << n;
  }
}

TEST(GiniGradient, MatchesFiniteDifferences)
{
  const std::vector<double> w{1, 2, 3};
  auto g = gini_gradient(w);
  auto fd = oracle::fd_gradient([](const std::vector<double>& v) { return oracle::gini_double_sum(v); }, w);
  for (std::size_t k = 0; k < w.size(); ++k)
    EXPECT_NEAR(g[k], fd[k], 1e-6 * std::max(1.0, std::abs(fd[k])));

  Rng rng = make_rng(23);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = random_vector(12, rng);
    auto a = gini_gradient(v);
    auto n = oracle::fd_gradient(
      [](const std::vector<double>& x) { return oracle::gini_double_sum(x); }, v, 1e-7);
    for (std::size_t k = 0; k < v.size(); ++k)
      EXPECT_NEAR(a[k], n[k], 1e-5 * std::max(1e-3, std::abs(n[k])));
  }
}

TEST(GiniGradient, EulerRelationAndHomogeneity)
{
  Rng rng = make_rng(24);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(8);
    for (double& x : v)
      x = 1.0 + uniform(rng, -0.01, 0.01); // near-uniform, tie-free
    auto g = gini_gradient(v);
    double euler = 0.0;
    for (std::size_t k = 0; k < v.size(); ++k)
      euler += v[k] * g[k];
    EXPECT_NEAR(euler, 0.0, 1e-12);

    const double c = uniform(rng, 0.5, 4.0);
    auto scaled = v;
    for (double& x : scaled)
      x *= c;
    auto gs = gini_gradient(scaled);
    for (std::size_t k = 0; k < v.size(); ++k)
      EXPECT_NEAR(gs[k], g[k] / c, 1e-12 * std::max(1.0, std::abs(g[k])));
  }
}

TEST(GiniGradient, AutogradAgreesWithClosedForm)
{
  Rng rng = make_rng(25);
  for (int trial = 0; trial < 100; ++trial) {
    auto v = random_vector(10, rng);
    Tensor t(2, 5);
    t.data = v;
    Var w = parameter(t);
    Var g = gini(w);
    EXPECT_NEAR(g->item(), g_of(v), 1e-14);
    backward(g);
    auto closed = gini_gradient(v);
    for (std::size_t k = 0; k < v.size(); ++k)
      EXPECT_NEAR(w->grad[k], closed[k], 1e-12);
    EXPECT_LT(grad_check([](const Var& x) { return gini(x); }, t), 1e-5);
  }
}

TEST(RegularizedLoss, HandExamples)
{
  auto s = [](double v) { return constant(Tensor::scalar(v)); };
  GiniConfig cfg;
  cfg.m = 0.0;
  EXPECT_EQ(regularized_loss(s(1.7), s(0.3), s(0.4), cfg).first->item(), 1.7);

  cfg.m = 10.0;
  EXPECT_NEAR(regularized_loss(s(1.7), s(1.0), s(1.0), cfg).first->item(), 1.7, 1e-15);

  cfg.m = 2.0;
  auto [val, report] = regularized_loss(s(1.0), s(0.5), s(0.5), cfg);
  EXPECT_NEAR(val->item(), 4.0, 1e-12);
  EXPECT_NEAR(report.g_effective, 0.5, 1e-15);
  EXPECT_NEAR(report.regularized_loss, regularized_value(1.0, 0.5, cfg), 1e-12);
}

TEST(RegularizedLoss, FloorBoundsTheDivisor)
{
  auto s = [](double v) { return constant(Tensor::scalar(v)); };
  GiniConfig cfg;
  cfg.m = 2.0;
  cfg.g_floor = 0.1;
  EXPECT_NEAR(regularized_loss(s(1.0), s(0.0), s(0.5), cfg).first->item(), 100.0, 1e-9);
  EXPECT_THROW(regularized_loss(s(-1.0), s(0.5), s(0.5), cfg), std::invalid_argument);
}

TEST(RegularizedLoss, NonIncreasingInGini)
{
  GiniConfig cfg;
  double prev = std::numeric_limits<double>::infinity();
  for (int k = 0; k <= 100; ++k) {
    const double g = k / 100.0;
    const double v = regularized_value(2.5, g, cfg);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(RegularizedLoss, GradientReachesAllInputs)
{
  GiniConfig cfg;
  cfg.m = 3.0;
  Var l = parameter(Tensor::scalar(0.8));
  Var a = parameter(Tensor::scalar(0.4));
  Var b = parameter(Tensor::scalar(0.6));
  backward(regularized_loss(l, a, b, cfg).first);
  const double ge = std::sqrt(0.4 * 0.6);
  EXPECT_NEAR(l->grad[0], std::pow(ge, -3.0), 1e-12);
  EXPECT_NEAR(a->grad[0], -1.5 * 0.8 * std::pow(ge, -3.0) / 0.4, 1e-10);
  EXPECT_NEAR(b->grad[0], -1.5 * 0.8 * std::pow(ge, -3.0) / 0.6, 1e-10);
}

TEST(LayerBlocks, ExtremeAndInvariantCases)
{
  const std::size_t h = 4, t = 3;
  Var uniform_w = constant(Tensor(2 * h, t, 0.7));
  auto [u1, u2] = layer_gini_blocks(uniform_w, h);
  EXPECT_EQ(u1->item(), 0.0);
  EXPECT_EQ(u2->item(), 0.0);

  Tensor w(2 * h, t, 0.0);
  w(1, 2) = 5.0;
  for (std::size_t r = h; r < 2 * h; ++r)
    for (std::size_t c = 0; c < t; ++c)
      w(r, c) = -2.0;
  auto [m1, m2] = layer_gini_blocks(constant(w), h);
  const double nm = static_cast<double>(h * t);
  EXPECT_NEAR(m1->item(), (nm - 1.0) / nm, 1e-12);
  EXPECT_EQ(m2->item(), 0.0);

  Rng rng = make_rng(26);
  Tensor r(2 * h, t);
  for (double& v : r.data)
    v = uniform(rng, -1, 1);
  Tensor r3 = r;
  for (double& v : r3.data)
    v *= 3.0;
  auto [a1, a2] = layer_gini_blocks(constant(r), h);
  auto [b1, b2] = layer_gini_blocks(constant(r3), h);
  EXPECT_NEAR(a1->item(), b1->item(), 1e-12);
  EXPECT_NEAR(a2->item(), b2->item(), 1e-12);

  EXPECT_THROW(layer_gini_blocks(constant(Tensor(5, 2)), 2), std::invalid_argument);
}
