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

// Invariant checks run by `ginigcn selftest`. Each check is small enough
// that the whole suite finishes in a few seconds.

#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <ginigcn/ginigcn.hpp>

namespace ginigcn::cli {

struct SelfTestCase {
  std::string name;
  std::function<bool(std::string&)> run; // fills a detail message
};

namespace selftest_detail {

inline std::string num(double v)
{
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

inline std::vector<MolecularGraph> sample_graphs(std::size_t n, std::uint64_t seed)
{
  ToySpec spec;
  spec.num_molecules = n;
  spec.seed = seed;
  return generate_graphs(spec);
}

inline ModelConfig sample_config()
{
  ModelConfig c;
  c.num_conv_layers = 2;
  c.conv_hidden = 8;
  c.targets = {"oxygen_count", "size", "branch_count"};
  c.seed = 5;
  return c;
}

inline MolecularGraph permuted(const MolecularGraph& g, const std::vector<std::size_t>& perm)
{
  MolecularGraph h = g;
  for (std::size_t k = 0; k < g.num_atoms(); ++k)
    h.atoms[perm[k]] = g.atoms[k];
  for (auto& b : h.bonds) {
    b.i = perm[b.i];
    b.j = perm[b.j];
  }
  return h;
}

} // namespace selftest_detail

inline std::vector<SelfTestCase> selftest_cases()
{
  using namespace selftest_detail;
  std::vector<SelfTestCase> cases;

  cases.push_back({"gini_closed_forms", [](std::string& msg) {
    const std::vector<double> a{1, 1, 1, 1}, b{0, 0, 0, 1}, c{1, 2, 3};
    const double ga = gini(std::span<const double>(a)).value;
    const double gb = gini(std::span<const double>(b)).value;
    const double gc = gini(std::span<const double>(c)).value;
    msg = "g=" + num(ga) + "," + num(gb) + "," + num(gc);
    return ga == 0.0 && std::abs(gb - 0.75) <= 1e-12 && std::abs(gc - 2.0 / 9.0) <= 1e-12;
  }});

  cases.push_back({"gini_scale_sign_invariance", [](std::string& msg) {
    Rng rng = make_rng(1);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
      std::vector<double> v(20), w(20);
      const double s = uniform(rng, -10.0, 10.0);
      for (std::size_t k = 0; k < v.size(); ++k) {
        v[k] = uniform(rng, -1.0, 1.0);
        w[k] = v[k] * s;
      }
      worst = std::max(worst, std::abs(gini(std::span<const double>(v)).value -
                                        gini(std::span<const double>(w)).value));
    }
    msg = "max diff " + num(worst);
    return worst <= 1e-12;
  }});

  cases.push_back({"gini_gradient_vs_autograd", [](std::string& msg) {
    Rng rng = make_rng(2);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
      Tensor x(1, 12);
      for (double& v : x.data)
        v = uniform(rng, -2.0, 2.0);
      Var p = parameter(x);
      backward(gini(p));
      const auto closed = gini_gradient(x.data);
      for (std::size_t k = 0; k < closed.size(); ++k)
        worst = std::max(worst, std::abs(closed[k] - p->grad[k]));
    }
    msg = "max diff " + num(worst);
    return worst <= 1e-12;
  }});

  cases.push_back({"primitive_gradients", [](std::string& msg) {
    Rng rng = make_rng(3);
    Tensor w(3, 2);
    for (double& v : w.data)
      v = uniform(rng, -1.0, 1.0);
    auto f = [&](const Var& x) {
      Var h = tanh(linear(x, constant(w), constant(Tensor(1, 2, 0.1))));
      return mean(square(segment_aggregate(h, {{0, 1}, {2, 3}}, Aggregation::mean)));
    };
    Tensor x(4, 3);
    for (double& v : x.data)
      v = uniform(rng, -1.0, 1.0);
    const double err = grad_check(f, x);
    msg = "max rel err " + num(err);
    return err < 1e-4;
  }});

  cases.push_back({"prediction_permutation_invariance", [](std::string& msg) {
    Model m = init_model(sample_config());
    Rng rng = make_rng(4);
    double worst = 0.0;
    for (const auto& g : sample_graphs(30, 4)) {
      const Tensor a = predict(m, g);
      const Tensor b = predict(m, permuted(g, random_permutation(g.num_atoms(), rng)));
      for (std::size_t k = 0; k < a.size(); ++k)
        worst = std::max(worst, std::abs(a[k] - b[k]));
    }
    msg = "max diff " + num(worst);
    return worst < 1e-9;
  }});

  cases.push_back({"attribution_completeness", [](std::string& msg) {
    Model m = init_model(sample_config());
    double worst = 0.0;
    for (const auto& g : sample_graphs(30, 5))
      for (std::size_t j = 0; j < 3; ++j) {
        const auto map = contribution_terms(m, g, j);
        worst = std::max(worst, std::abs(map.term_sum() + map.bias - map.prediction));
      }
    msg = "max residual " + num(worst);
    return worst < 1e-9;
  }});

  cases.push_back({"checkpoint_round_trip", [](std::string& msg) {
    Model m = init_model(sample_config());
    const auto gs = sample_graphs(20, 6);
    const Checkpoint c = checkpoint_from_string(checkpoint_to_string(m, std::nullopt));
    const bool same = predict(m, gs) == predict(c.model, gs);
    msg = same ? "bit-identical predictions" : "predictions differ";
    return same;
  }});

  cases.push_back({"dataset_round_trip", [](std::string& msg) {
    const auto gs = sample_graphs(50, 7);
    const bool same = parse_graph_file(serialize_dataset(gs)) == gs;
    msg = same ? "50 records identical" : "records differ";
    return same;
  }});

  cases.push_back({"kfold_partition", [](std::string& msg) {
    const auto folds = kfold_split(23, 5, 8);
    std::vector<int> hits(23, 0);
    std::size_t lo = 23, hi = 0;
    for (const auto& f : folds) {
      lo = std::min(lo, f.size());
      hi = std::max(hi, f.size());
      for (auto i : f)
        ++hits[i];
    }
    const bool ok = std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }) &&
                    hi - lo <= 1;
    msg = "sizes " + std::to_string(lo) + ".." + std::to_string(hi);
    return ok;
  }});

  cases.push_back({"spearman_hand_value", [](std::string& msg) {
    const double r = rank_correlation(std::vector<double>{1, 2, 3}, std::vector<double>{1, 3, 2});
    msg = "rho " + num(r);
    return std::abs(r - 0.5) < 1e-15;
  }});

  cases.push_back({"regularized_loss_hand_value", [](std::string& msg) {
    GiniConfig cfg;
    cfg.m = 2.0;
    auto s = [](double v) { return constant(Tensor::scalar(v)); };
    const double v = regularized_loss(s(1.0), s(0.5), s(0.5), cfg).first->item();
    msg = "value " + num(v);
    return std::abs(v - 4.0) < 1e-12;
  }});

  return cases;
}

/// Runs every case, writes a TSV table and returns the number of failures.
inline int run_selftest(std::ostream& os)
{
  int failures = 0;
  os << "check\tresult\tdetail\n";
  for (const auto& c : selftest_cases()) {
    std::string msg;
    bool ok = false;
    try {
      ok = c.run(msg);
    } catch (const std::exception& e) {
      msg = std::string("exception: ") + e.what();
    }
    failures += ok ? 0 : 1;
    os << c.name << '\t' << (ok ? "PASS" : "FAIL") << '\t' << msg << '\n';
  }
  return failures;
}

} // namespace ginigcn::cli
