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

#pragma once

// Gini coefficient of weight magnitudes and the Gini-divided training loss.
//
// With a = |w| sorted ascending (0-based positions k), the double sum
// sum_i sum_j |a_i - a_j| equals 2 * sum_k (2k - n + 1) a_k, so
//
//   g = sum_k (2k - n + 1) a_k / (n * sum_k a_k)
//
// which is O(n log n) and linear in a for a fixed ordering.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace ginigcn {

struct GiniConfig {
  double m = 10.0;
  double g_floor = 1e-6;

  void validate() const
  {
    if (!(m >= 0.0))
      throw std::invalid_argument("GiniConfig: m must be nonnegative");
    if (!(g_floor > 0.0 && g_floor < 1.0))
      throw std::invalid_argument("GiniConfig: g_floor must lie in (0, 1)");
  }
};

struct GiniValue {
  double value = 0.0;
  // All magnitudes zero: the coefficient is undefined and reported as 0.
  bool degenerate = false;
};

namespace detail {

// Ascending order of |w|, stable so that ties keep index order.
inline std::vector<std::size_t> magnitude_order(std::span<const double> w)
{
  std::vector<std::size_t> idx(w.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(w[a]) < std::abs(w[b]); });
  return idx;
}

// Per-element coefficient (2k - n + 1) of the sorted form, indexed by the
// original position.
inline std::vector<double> rank_coefficients(std::span<const double> w)
{
  const auto order = magnitude_order(w);
  const double n = static_cast<double>(w.size());
  std::vector<double> c(w.size());
  for (std::size_t k = 0; k < order.size(); ++k)
    c[order[k]] = 2.0 * static_cast<double>(k) - n + 1.0;
  return c;
}

// Sorted-form numerator sum_k (2k - n + 1) a_(k), evaluated by pairing the
// k-th smallest with the k-th largest magnitude. Every pair contributes a
// nonnegative amount, so equal magnitudes give exactly 0.
inline double sorted_numerator(std::span<const double> w)
{
  std::vector<double> a(w.size());
  std::transform(w.begin(), w.end(), a.begin(), [](double v) { return std::abs(v); });
  std::sort(a.begin(), a.end());
  const std::size_t n = a.size();
  double num = 0.0;
  for (std::size_t k = 0; k < n / 2; ++k)
    num += static_cast<double>(n - 1 - 2 * k) * (a[n - 1 - k] - a[k]);
  return num;
}

} // namespace detail

inline GiniValue gini(std::span<const double> w)
{
  if (w.empty())
    throw std::invalid_argument("gini: empty weight vector");
  double total = 0.0;
  for (double v : w)
    total += std::abs(v);
  if (total == 0.0)
    return {0.0, true};
  const double num = detail::sorted_numerator(w);
  return {num / (static_cast<double>(w.size()) * total), false};
}

/// Closed-form dg/dw. With N = sum_k c_k |w_k| and S = sum_k |w_k|,
/// dg/d|w_k| = (c_k S - N) / (n S^2), times sign(w_k) (0 at w_k = 0).
/// Exact at tie-free points; at ties the stable ordering picks one
/// subgradient. A degenerate vector gets the zero vector.
inline std::vector<double> gini_gradient(std::span<const double> w)
{
  if (w.empty())
    throw std::invalid_argument("gini_gradient: empty weight vector");
  const auto c = detail::rank_coefficients(w);
  double num = 0.0, total = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    num += c[k] * std::abs(w[k]);
    total += std::abs(w[k]);
  }
  std::vector<double> grad(w.size(), 0.0);
  if (total == 0.0)
    return grad;
  const double n = static_cast<double>(w.size());
  for (std::size_t k = 0; k < w.size(); ++k) {
    const double sign = w[k] > 0.0 ? 1.0 : (w[k] < 0.0 ? -1.0 : 0.0);
    grad[k] = sign * (c[k] * total - num) / (n * total * total);
  }
  return grad;
}

/// Differentiable Gini over every entry of w, built from abs, a constant
/// rank-coefficient dot product, a sum and a division. A degenerate input
/// yields a constant 0.
inline Var gini(const Var& w)
{
  const auto& values = w->value.data;
  if (values.empty())
    throw std::invalid_argument("gini: empty weight tensor");
  Var a = abs(w);
  Tensor coeffs(w->value.rows, w->value.cols);
  const auto c = detail::rank_coefficients(values);
  std::copy(c.begin(), c.end(), coeffs.data.begin());

  Var total = sum(a);
  if (total->item() == 0.0)
    return constant(Tensor::scalar(0.0));
  Var num = dot_const(a, std::move(coeffs));
  // Same quantity, summed pairwise so that ties cancel exactly; the backward
  // pass of dot_const does not read this value.
  num->value[0] = detail::sorted_numerator(values);

  // Nearest pair of distinct sorted magnitudes: the ordering is only
  // locally constant while perturbations stay below this.
  std::vector<double> mags(values.size());
  std::transform(values.begin(), values.end(), mags.begin(), [](double v) { return std::abs(v); });
  std::sort(mags.begin(), mags.end());
  for (std::size_t k = 1; k < mags.size(); ++k)
    if (mags[k] != mags[k - 1])
      num->kink_margin = std::min(num->kink_margin, mags[k] - mags[k - 1]);

  return div(num, scale(total, static_cast<double>(values.size())));
}

/// Gini of the mean-aggregation rows [0, H) and the max-aggregation rows
/// [H, 2H) of the output weights, each flattened across all targets.
inline std::pair<Var, Var> layer_gini_blocks(const Var& out_weight, std::size_t block_rows)
{
  if (block_rows == 0 || out_weight->value.rows != 2 * block_rows)
    throw std::invalid_argument("layer_gini_blocks: expected " + std::to_string(2 * block_rows) +
                                " rows, got " + std::to_string(out_weight->value.rows));
  return {gini(slice_rows(out_weight, 0, block_rows)),
          gini(slice_rows(out_weight, block_rows, 2 * block_rows))};
}

struct RegularizerReport {
  double g_mean_block = 0.0;
  double g_max_block = 0.0;
  double g_effective = 0.0;
  double raw_loss = 0.0;
  double regularized_loss = 0.0;
};

/// raw / max(g_effective, g_floor)^m as a plain number.
inline double regularized_value(double raw, double g_effective, const GiniConfig& cfg)
{
  return raw * std::exp(-cfg.m * std::log(std::max(g_effective, cfg.g_floor)));
}

/// L / max(sqrt(g_mean * g_max), g_floor)^m, evaluated in log space as
/// L * exp(-m/2 * log(max(g_mean * g_max, g_floor^2))).
inline std::pair<Var, RegularizerReport> regularized_loss(const Var& loss, const Var& g_mean_block,
                                                          const Var& g_max_block,
                                                          const GiniConfig& cfg)
{
  cfg.validate();
  if (!loss->is_scalar() || !g_mean_block->is_scalar() || !g_max_block->is_scalar())
    throw std::invalid_argument("regularized_loss: expected scalar inputs");
  if (loss->item() < 0.0)
    throw std::invalid_argument("regularized_loss: loss must be nonnegative");

  RegularizerReport report;
  report.g_mean_block = g_mean_block->item();
  report.g_max_block = g_max_block->item();
  report.g_effective = std::sqrt(report.g_mean_block * report.g_max_block);
  report.raw_loss = loss->item();

  Var result;
  if (cfg.m == 0.0) {
    result = loss;
  } else {
    Var product = clamp_min(mul(g_mean_block, g_max_block), cfg.g_floor * cfg.g_floor);
    Var divisor = exp(scale(log(product), -0.5 * cfg.m));
    result = mul(loss, divisor);
  }
  report.regularized_loss = result->item();
  return {result, report};
}

} // namespace ginigcn
