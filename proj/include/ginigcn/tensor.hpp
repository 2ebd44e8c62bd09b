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

// Minimal reverse-mode automatic differentiation over dense row-major
// double matrices. Vectors are 1 x n, scalars 1 x 1. There is no
// broadcasting except the row-wise bias in linear().

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace ginigcn {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0)
    : rows(r), cols(c), data(r * c, fill)
  { }
  Tensor(std::size_t r, std::size_t c, std::initializer_list<double> values)
    : rows(r), cols(c), data(values)
  {
    if (data.size() != r * c)
      throw std::invalid_argument("Tensor: initializer size does not match shape");
  }

  static Tensor row(std::vector<double> values)
  {
    Tensor t;
    t.rows = 1;
    t.cols = values.size();
    t.data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return Tensor(1, 1, v); }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  double& operator[](std::size_t k) { return data[k]; }
  double operator[](std::size_t k) const { return data[k]; }

  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  std::string shape_str() const
  {
    return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")";
  }

  bool operator==(const Tensor&) const = default;
};

/// One vertex of the computation graph.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward_fn;
  // Distance of the forward inputs from the nearest non-differentiable
  // point of this op (relu/abs at 0, max near-ties, clamp edge, sort ties).
  double kink_margin = std::numeric_limits<double>::infinity();

  bool is_leaf() const { return parents.empty(); }
  bool is_scalar() const { return value.rows == 1 && value.cols == 1; }
  double item() const { return value.data.at(0); }
};

using Var = std::shared_ptr<Node>;

inline Var constant(Tensor value)
{
  auto n = std::make_shared<Node>();
  n->grad = Tensor(value.rows, value.cols);
  n->value = std::move(value);
  return n;
}

inline Var parameter(Tensor value)
{
  Var n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

inline void zero_grad(const Var& v)
{
  std::fill(v->grad.data.begin(), v->grad.data.end(), 0.0);
}

namespace detail {

inline Var make_op(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn)
{
  auto n = std::make_shared<Node>();
  n->grad = Tensor(value.rows, value.cols);
  n->value = std::move(value);
  for (const auto& p : parents)
    n->requires_grad = n->requires_grad || p->requires_grad;
  if (n->requires_grad)
    n->backward_fn = std::move(fn);
  n->parents = std::move(parents);
  return n;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op)
{
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
}

// out (n x m) += a (n x k) * b (k x m)
inline void gemm_nn(const Tensor& a, const Tensor& b, Tensor& out)
{
  const std::size_t n = a.rows, k = a.cols, m = b.cols;
  for (std::size_t i = 0; i < n; ++i) {
    double* o = &out.data[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data[i * k + p];
      if (av == 0.0)
        continue;
      const double* br = &b.data[p * m];
      for (std::size_t j = 0; j < m; ++j)
        o[j] += av * br[j];
    }
  }
}

// out (n x k) += g (n x m) * b^T, b is (k x m)
inline void gemm_nt(const Tensor& g, const Tensor& b, Tensor& out)
{
  const std::size_t n = g.rows, m = g.cols, k = b.rows;
  for (std::size_t i = 0; i < n; ++i) {
    const double* gr = &g.data[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double* br = &b.data[p * m];
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j)
        s += gr[j] * br[j];
      out.data[i * k + p] += s;
    }
  }
}

// out (k x m) += a^T * g, a is (n x k), g is (n x m)
inline void gemm_tn(const Tensor& a, const Tensor& g, Tensor& out)
{
  const std::size_t n = a.rows, k = a.cols, m = g.cols;
  for (std::size_t i = 0; i < n; ++i) {
    const double* gr = &g.data[i * m];
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.data[i * k + p];
      if (av == 0.0)
        continue;
      double* o = &out.data[p * m];
      for (std::size_t j = 0; j < m; ++j)
        o[j] += av * gr[j];
    }
  }
}

template <typename F, typename D>
Var unary(const Var& x, F f, D dfdx)
{
  Tensor out(x->value.rows, x->value.cols);
  for (std::size_t k = 0; k < out.size(); ++k)
    out.data[k] = f(x->value.data[k]);
  return make_op(std::move(out), {x}, [dfdx](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad)
      return;
    for (std::size_t k = 0; k < self.grad.size(); ++k)
      p.grad.data[k] += self.grad.data[k] * dfdx(p.value.data[k], self.value.data[k]);
  });
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic (same shape only)

inline Var add(const Var& a, const Var& b)
{
  detail::require_same_shape(a->value, b->value, "add");
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k)
    out.data[k] += b->value.data[k];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    for (auto& p : self.parents)
      if (p->requires_grad)
        for (std::size_t k = 0; k < self.grad.size(); ++k)
          p->grad.data[k] += self.grad.data[k];
  });
}

inline Var sub(const Var& a, const Var& b)
{
  detail::require_same_shape(a->value, b->value, "sub");
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k)
    out.data[k] -= b->value.data[k];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      if (pa.requires_grad)
        pa.grad.data[k] += self.grad.data[k];
      if (pb.requires_grad)
        pb.grad.data[k] -= self.grad.data[k];
    }
  });
}

inline Var mul(const Var& a, const Var& b)
{
  detail::require_same_shape(a->value, b->value, "mul");
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k)
    out.data[k] *= b->value.data[k];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      if (pa.requires_grad)
        pa.grad.data[k] += self.grad.data[k] * pb.value.data[k];
      if (pb.requires_grad)
        pb.grad.data[k] += self.grad.data[k] * pa.value.data[k];
    }
  });
}

inline Var div(const Var& a, const Var& b)
{
  detail::require_same_shape(a->value, b->value, "div");
  Tensor out = a->value;
  for (std::size_t k = 0; k < out.size(); ++k)
    out.data[k] /= b->value.data[k];
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      const double bv = pb.value.data[k];
      if (pa.requires_grad)
        pa.grad.data[k] += self.grad.data[k] / bv;
      if (pb.requires_grad)
        pb.grad.data[k] -= self.grad.data[k] * self.value.data[k] / bv;
    }
  });
}

inline Var scale(const Var& x, double c)
{
  return detail::unary(
    x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Var square(const Var& x)
{
  return detail::unary(
    x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

inline Var exp(const Var& x)
{
  return detail::unary(
    x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Var log(const Var& x)
{
  return detail::unary(
    x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Var sqrt(const Var& x)
{
  return detail::unary(
    x, [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

/// max(x, lo) elementwise; the gradient at x == lo goes to x.
inline Var clamp_min(const Var& x, double lo)
{
  Var out = detail::unary(
    x, [lo](double v) { return v < lo ? lo : v; },
    [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
  for (double v : x->value.data)
    out->kink_margin = std::min(out->kink_margin, std::abs(v - lo));
  return out;
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, tanh, abs };

inline Var activation(const Var& x, Activation kind)
{
  Var out;
  switch (kind) {
  case Activation::relu:
    out = detail::unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
    break;
  case Activation::tanh:
    return detail::unary(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
  case Activation::abs:
    out = detail::unary(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    break;
  }
  for (double v : x->value.data)
    out->kink_margin = std::min(out->kink_margin, std::abs(v));
  return out;
}

inline Var relu(const Var& x) { return activation(x, Activation::relu); }
inline Var tanh(const Var& x) { return activation(x, Activation::tanh); }
inline Var abs(const Var& x) { return activation(x, Activation::abs); }

// ---------------------------------------------------------------------------
// Linear algebra

inline Var matmul(const Var& a, const Var& b)
{
  if (a->value.cols != b->value.rows)
    throw std::invalid_argument("matmul: shape mismatch " + a->value.shape_str() + " * " +
                                b->value.shape_str());
  Tensor out(a->value.rows, b->value.cols);
  detail::gemm_nn(a->value, b->value, out);
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad)
      detail::gemm_nt(self.grad, pb.value, pa.grad);
    if (pb.requires_grad)
      detail::gemm_tn(pa.value, self.grad, pb.grad);
  });
}

/// xW + b with b (1 x d_out) added to every row.
inline Var linear(const Var& x, const Var& w, const Var& b)
{
  const Tensor& xv = x->value;
  const Tensor& wv = w->value;
  const Tensor& bv = b->value;
  if (xv.cols != wv.rows || bv.rows != 1 || bv.cols != wv.cols)
    throw std::invalid_argument("linear: shape mismatch x" + xv.shape_str() + " W" +
                                wv.shape_str() + " b" + bv.shape_str());
  Tensor out(xv.rows, wv.cols);
  for (std::size_t i = 0; i < out.rows; ++i)
    std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + i * out.cols);
  detail::gemm_nn(xv, wv, out);
  return detail::make_op(std::move(out), {x, w, b}, [](Node& self) {
    Node& px = *self.parents[0];
    Node& pw = *self.parents[1];
    Node& pb = *self.parents[2];
    if (px.requires_grad)
      detail::gemm_nt(self.grad, pw.value, px.grad);
    if (pw.requires_grad)
      detail::gemm_tn(px.value, self.grad, pw.grad);
    if (pb.requires_grad)
      for (std::size_t i = 0; i < self.grad.rows; ++i)
        for (std::size_t j = 0; j < self.grad.cols; ++j)
          pb.grad.data[j] += self.grad(i, j);
  });
}

/// [a | b] along columns; row counts must agree.
inline Var concat_cols(const Var& a, const Var& b)
{
  const Tensor& av = a->value;
  const Tensor& bv = b->value;
  if (av.rows != bv.rows)
    throw std::invalid_argument("concat_cols: row mismatch");
  Tensor out(av.rows, av.cols + bv.cols);
  for (std::size_t i = 0; i < av.rows; ++i) {
    std::copy_n(&av.data[i * av.cols], av.cols, &out.data[i * out.cols]);
    std::copy_n(bv.data.data() + i * bv.cols, bv.cols, &out.data[i * out.cols + av.cols]);
  }
  return detail::make_op(std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t ca = pa.value.cols, cb = pb.value.cols;
    for (std::size_t i = 0; i < self.grad.rows; ++i) {
      if (pa.requires_grad)
        for (std::size_t j = 0; j < ca; ++j)
          pa.grad.data[i * ca + j] += self.grad(i, j);
      if (pb.requires_grad)
        for (std::size_t j = 0; j < cb; ++j)
          pb.grad.data[i * cb + j] += self.grad(i, ca + j);
    }
  });
}

/// Rows [begin, end).
inline Var slice_rows(const Var& x, std::size_t begin, std::size_t end)
{
  const Tensor& xv = x->value;
  if (begin > end || end > xv.rows)
    throw std::invalid_argument("slice_rows: range out of bounds");
  Tensor out(end - begin, xv.cols);
  std::copy(xv.data.begin() + begin * xv.cols, xv.data.begin() + end * xv.cols,
            out.data.begin());
  return detail::make_op(std::move(out), {x}, [begin](Node& self) {
    Node& p = *self.parents[0];
    const std::size_t off = begin * p.value.cols;
    for (std::size_t k = 0; k < self.grad.size(); ++k)
      p.grad.data[off + k] += self.grad.data[k];
  });
}

// ---------------------------------------------------------------------------
// Reductions

enum class Reduction { sum, mean };

inline Var reduce(const Var& x, Reduction kind)
{
  double s = 0.0;
  for (double v : x->value.data)
    s += v;
  const double n = static_cast<double>(x->value.size());
  const double factor = (kind == Reduction::mean && n > 0) ? 1.0 / n : 1.0;
  return detail::make_op(Tensor::scalar(s * factor), {x}, [factor](Node& self) {
    Node& p = *self.parents[0];
    const double g = self.grad.data[0] * factor;
    for (double& d : p.grad.data)
      d += g;
  });
}

inline Var sum(const Var& x) { return reduce(x, Reduction::sum); }
inline Var mean(const Var& x) { return reduce(x, Reduction::mean); }

/// sum_k c_k x_k for a constant coefficient tensor c of the same shape.
inline Var dot_const(const Var& x, Tensor coeffs)
{
  detail::require_same_shape(x->value, coeffs, "dot_const");
  double s = 0.0;
  for (std::size_t k = 0; k < coeffs.size(); ++k)
    s += coeffs.data[k] * x->value.data[k];
  return detail::make_op(Tensor::scalar(s), {x}, [c = std::move(coeffs)](Node& self) {
    Node& p = *self.parents[0];
    const double g = self.grad.data[0];
    for (std::size_t k = 0; k < c.size(); ++k)
      p.grad.data[k] += g * c.data[k];
  });
}

// ---------------------------------------------------------------------------
// Graph operations

using IndexSets = std::vector<std::vector<std::size_t>>;

/// Row v of the result is the sum of x_u over u in neighbors[v].
inline Var neighbor_sum(const Var& x, const IndexSets& neighbors)
{
  const Tensor& xv = x->value;
  if (neighbors.size() != xv.rows)
    throw std::invalid_argument("neighbor_sum: adjacency has " +
                                std::to_string(neighbors.size()) + " rows, input has " +
                                std::to_string(xv.rows));
  const std::size_t d = xv.cols;
  Tensor out(xv.rows, d);
  for (std::size_t v = 0; v < neighbors.size(); ++v)
    for (std::size_t u : neighbors[v]) {
      if (u >= xv.rows)
        throw std::invalid_argument("neighbor_sum: neighbor index out of range");
      for (std::size_t c = 0; c < d; ++c)
        out.data[v * d + c] += xv.data[u * d + c];
    }
  return detail::make_op(std::move(out), {x}, [neighbors](Node& self) {
    Node& p = *self.parents[0];
    const std::size_t d = self.grad.cols;
    for (std::size_t v = 0; v < neighbors.size(); ++v)
      for (std::size_t u : neighbors[v])
        for (std::size_t c = 0; c < d; ++c)
          p.grad.data[u * d + c] += self.grad.data[v * d + c];
  });
}

enum class Aggregation { mean, max };

/// Row s of the result aggregates the rows of x listed in segments[s].
/// Max routes the gradient to the first row (in segment order) holding the
/// maximum; segments built in ascending order therefore tie-break toward the
/// lowest row index.
inline Var segment_aggregate(const Var& x, const IndexSets& segments, Aggregation kind)
{
  const Tensor& xv = x->value;
  const std::size_t d = xv.cols;
  std::vector<char> seen(xv.rows, 0);
  for (const auto& seg : segments) {
    if (seg.empty())
      throw std::invalid_argument("segment_aggregate: empty segment");
    for (std::size_t r : seg) {
      if (r >= xv.rows || seen[r])
        throw std::invalid_argument("segment_aggregate: segments must partition the rows");
      seen[r] = 1;
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw std::invalid_argument("segment_aggregate: segments must partition the rows");

  Tensor out(segments.size(), d);
  if (kind == Aggregation::mean) {
    for (std::size_t s = 0; s < segments.size(); ++s) {
      for (std::size_t r : segments[s])
        for (std::size_t c = 0; c < d; ++c)
          out(s, c) += xv(r, c);
      const double inv = 1.0 / static_cast<double>(segments[s].size());
      for (std::size_t c = 0; c < d; ++c)
        out(s, c) *= inv;
    }
    return detail::make_op(std::move(out), {x}, [segments](Node& self) {
      Node& p = *self.parents[0];
      const std::size_t d = self.grad.cols;
      for (std::size_t s = 0; s < segments.size(); ++s) {
        const double inv = 1.0 / static_cast<double>(segments[s].size());
        for (std::size_t r : segments[s])
          for (std::size_t c = 0; c < d; ++c)
            p.grad.data[r * d + c] += self.grad.data[s * d + c] * inv;
      }
    });
  }

  std::vector<std::size_t> argmax(segments.size() * d);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < segments.size(); ++s)
    for (std::size_t c = 0; c < d; ++c) {
      std::size_t best = segments[s].front();
      for (std::size_t r : segments[s])
        if (xv(r, c) > xv(best, c))
          best = r;
      const double top = xv(best, c);
      for (std::size_t r : segments[s])
        if (xv(r, c) != top)
          margin = std::min(margin, top - xv(r, c));
      argmax[s * d + c] = best;
      out(s, c) = top;
    }
  Var node = detail::make_op(std::move(out), {x}, [argmax](Node& self) {
    Node& p = *self.parents[0];
    const std::size_t d = self.grad.cols;
    for (std::size_t k = 0; k < argmax.size(); ++k)
      p.grad.data[argmax[k] * d + k % d] += self.grad.data[k];
  });
  node->kink_margin = margin;
  return node;
}

// ---------------------------------------------------------------------------
// Batch normalization

enum class Mode { train, eval };

struct BatchNormState {
  Var gamma;
  Var beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  static BatchNormState identity(std::size_t features)
  {
    BatchNormState s;
    s.gamma = parameter(Tensor(1, features, 1.0));
    s.beta = parameter(Tensor(1, features, 0.0));
    s.running_mean.assign(features, 0.0);
    s.running_var.assign(features, 1.0);
    return s;
  }
};

namespace detail {

inline void check_bn_shapes(const Tensor& x, const BatchNormState& s)
{
  const std::size_t d = x.cols;
  if (s.gamma->value.size() != d || s.beta->value.size() != d || s.running_mean.size() != d ||
      s.running_var.size() != d)
    throw std::invalid_argument("batch_norm: state has wrong feature count for input " +
                                x.shape_str());
}

} // namespace detail

/// Eval mode: normalize by the running statistics; state is not touched.
inline Var batch_norm(const Var& x, const BatchNormState& state)
{
  detail::check_bn_shapes(x->value, state);
  const Tensor& xv = x->value;
  const std::size_t n = xv.rows, d = xv.cols;
  std::vector<double> inv_std(d);
  for (std::size_t c = 0; c < d; ++c)
    inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
  Tensor xhat(n, d), out(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      xhat(i, c) = (xv(i, c) - state.running_mean[c]) * inv_std[c];
      out(i, c) = state.gamma->value[c] * xhat(i, c) + state.beta->value[c];
    }
  return detail::make_op(std::move(out), {x, state.gamma, state.beta},
                         [inv_std, xhat = std::move(xhat)](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const std::size_t n = self.grad.rows, d = self.grad.cols;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        const double g = self.grad(i, c);
        if (px.requires_grad)
          px.grad(i, c) += g * pg.value[c] * inv_std[c];
        if (pg.requires_grad)
          pg.grad[c] += g * xhat(i, c);
        if (pb.requires_grad)
          pb.grad[c] += g;
      }
  });
}

/// Train mode normalizes by the biased batch statistics and folds them into
/// the running statistics; eval mode defers to the const overload.
inline Var batch_norm(const Var& x, BatchNormState& state, Mode mode)
{
  if (mode == Mode::eval)
    return batch_norm(x, static_cast<const BatchNormState&>(state));
  detail::check_bn_shapes(x->value, state);
  const Tensor& xv = x->value;
  const std::size_t n = xv.rows, d = xv.cols;
  if (n < 2)
    throw std::invalid_argument("batch_norm: train mode needs at least 2 rows, got " +
                                std::to_string(n));
  std::vector<double> mu(d, 0.0), var(d, 0.0), inv_std(d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c)
      mu[c] += xv(i, c);
  for (auto& m : mu)
    m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const double t = xv(i, c) - mu[c];
      var[c] += t * t;
    }
  for (std::size_t c = 0; c < d; ++c) {
    var[c] /= static_cast<double>(n);
    inv_std[c] = 1.0 / std::sqrt(var[c] + state.epsilon);
    state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
    state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * var[c];
  }
  Tensor xhat(n, d), out(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      xhat(i, c) = (xv(i, c) - mu[c]) * inv_std[c];
      out(i, c) = state.gamma->value[c] * xhat(i, c) + state.beta->value[c];
    }
  return detail::make_op(std::move(out), {x, state.gamma, state.beta},
                         [inv_std, xhat = std::move(xhat)](Node& self) {
    Node& px = *self.parents[0];
    Node& pg = *self.parents[1];
    Node& pb = *self.parents[2];
    const std::size_t n = self.grad.rows, d = self.grad.cols;
    const double nn = static_cast<double>(n);
    for (std::size_t c = 0; c < d; ++c) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        sum_g += self.grad(i, c);
        sum_gx += self.grad(i, c) * xhat(i, c);
      }
      if (pg.requires_grad)
        pg.grad[c] += sum_gx;
      if (pb.requires_grad)
        pb.grad[c] += sum_g;
      if (px.requires_grad) {
        const double k = pg.value[c] * inv_std[c] / nn;
        for (std::size_t i = 0; i < n; ++i)
          px.grad(i, c) += k * (nn * self.grad(i, c) - sum_g - xhat(i, c) * sum_gx);
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Backward pass

namespace detail {

// Reverse topological order (root first) of the nodes that require grad.
inline std::vector<Node*> reverse_topological(Node* root)
{
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second)
        stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  std::reverse(order.begin(), order.end());
  return order;
}

} // namespace detail

/// Populates grad on every requires_grad ancestor of a scalar root.
/// Intermediate grads are recomputed per call; leaf grads accumulate.
inline void backward(const Var& root)
{
  if (!root->is_scalar())
    throw std::invalid_argument("backward: root must be scalar, got " + root->value.shape_str());
  if (!root->requires_grad)
    return;
  auto order = detail::reverse_topological(root.get());
  for (Node* n : order)
    if (!n->is_leaf())
      std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
  root->grad.data[0] += 1.0;
  for (Node* n : order)
    if (n->backward_fn)
      n->backward_fn(*n);
}

/// Smallest kink margin over the graph below root.
inline double kink_margin(const Var& root)
{
  double m = std::numeric_limits<double>::infinity();
  std::unordered_set<const Node*> visited{root.get()};
  std::vector<const Node*> stack{root.get()};
  while (!stack.empty()) {
    const Node* n = stack.back();
    stack.pop_back();
    m = std::min(m, n->kink_margin);
    for (const auto& p : n->parents)
      if (visited.insert(p.get()).second)
        stack.push_back(p.get());
  }
  return m;
}

// ---------------------------------------------------------------------------
// Finite-difference checking

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double denominator_floor = 0.0;
  Tensor analytic;
  Tensor numeric;
};

/// Compares the reverse-mode gradient of f at x0 with central differences.
/// Relative error per element uses max(|analytic|, |numeric|, floor) with
/// floor = max(1e-8, 1e-6 |f(x0)|). Rounding limits a central difference to
/// roughly 1e-16 |f| / step, about 1e-11 |f| at the default step, so smaller
/// gradient entries are compared against the floor instead of themselves.
inline GradCheckResult grad_check_detailed(const std::function<Var(const Var&)>& f,
                                           const Tensor& x0, double step = 1e-5)
{
  GradCheckResult r;
  Var x = parameter(x0);
  Var y = f(x);
  if (!y->is_scalar())
    throw std::invalid_argument("grad_check: function must return a scalar");
  backward(y);
  r.denominator_floor = std::max(1e-8, 1e-6 * std::abs(y->item()));
  r.analytic = x->grad;
  r.numeric = Tensor(x0.rows, x0.cols);
  for (std::size_t k = 0; k < x0.size(); ++k) {
    Tensor xp = x0, xm = x0;
    xp.data[k] += step;
    xm.data[k] -= step;
    const double fp = f(constant(std::move(xp)))->item();
    const double fm = f(constant(std::move(xm)))->item();
    r.numeric.data[k] = (fp - fm) / (2.0 * step);
    const double a = r.analytic.data[k], nmr = r.numeric.data[k];
    const double denom = std::max({std::abs(a), std::abs(nmr), r.denominator_floor});
    const double err = std::abs(a - nmr) / denom;
    if (!(err <= r.max_relative_error)) {
      r.max_relative_error = err;
      r.worst_index = k;
    }
  }
  return r;
}

inline double grad_check(const std::function<Var(const Var&)>& f, const Tensor& x0,
                         double step = 1e-5)
{
  return grad_check_detailed(f, x0, step).max_relative_error;
}

} // namespace ginigcn
