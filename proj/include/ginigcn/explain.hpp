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

// Attribution for the explainable variant and condensed Fukui comparison.
//
// Because the fingerprint already holds tanh(f(x_i)), a prediction splits
// exactly into bias_j + sum_i w_ij * tanh(f(x_i)).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "model.hpp"
#include "molecule.hpp"

namespace ginigcn {

enum class Block { mean, max };

inline const char* block_name(Block b) { return b == Block::mean ? "mean" : "max"; }

struct ContributionTerm {
  std::size_t rep = 0; // representation (channel) index within its block
  Block block = Block::mean;
  double weight = 0.0;
  double activation = 0.0; // tanh(f(x_i))
  double value = 0.0;      // weight * activation
};

struct AttributionMap {
  std::string molecule_id;
  std::string target;
  double bias = 0.0;
  double prediction = 0.0; // model output, standardized units
  std::vector<ContributionTerm> terms; // sorted by |value| descending
  std::vector<double> atom_scores;     // empty until per_atom_map

  double term_sum() const
  {
    double s = 0.0;
    for (const auto& t : terms)
      s += t.value;
    return s;
  }
};

namespace detail {

inline void require_explainable(const Model& model, const char* op)
{
  if (model.config.variant != Variant::explainable)
    throw std::invalid_argument(std::string(op) + ": model is not the explainable variant");
}

} // namespace detail

inline AttributionMap contribution_terms(const Model& model, const MolecularGraph& g,
                                         std::size_t target)
{
  detail::require_explainable(model, "contribution_terms");
  if (target >= model.config.targets.size())
    throw std::out_of_range("contribution_terms: target index out of range");
  const ForwardPass fp = forward(model, make_batch(g), Mode::eval);
  const Tensor& fpv = fp.fingerprint->value;
  const Tensor& w = model.out_weight->value;
  const std::size_t hidden = model.config.conv_hidden;

  AttributionMap map;
  map.molecule_id = g.id;
  map.target = model.config.targets[target];
  map.bias = model.out_bias->value[target];
  map.prediction = fp.output->value(0, target);
  for (std::size_t i = 0; i < fpv.cols; ++i) {
    ContributionTerm t;
    t.block = i < hidden ? Block::mean : Block::max;
    t.rep = i < hidden ? i : i - hidden;
    t.weight = w(i, target);
    t.activation = fpv(0, i);
    t.value = t.weight * t.activation;
    map.terms.push_back(t);
  }
  std::stable_sort(map.terms.begin(), map.terms.end(),
                   [](const ContributionTerm& a, const ContributionTerm& b) {
                     return std::abs(a.value) > std::abs(b.value);
                   });
  return map;
}

/// Adds per-atom scores: the mean block spreads w_ij * x_ki / N over every
/// atom, the max block credits w_ij * x_ki to the argmax atom (lowest index
/// on ties). x are the pre-tanh last-layer node outputs.
inline AttributionMap per_atom_map(const Model& model, const MolecularGraph& g, std::size_t target)
{
  AttributionMap map = contribution_terms(model, g, target);
  const ForwardPass fp = forward(model, make_batch(g), Mode::eval);
  const Tensor& x = fp.node_reps->value;
  const Tensor& w = model.out_weight->value;
  const std::size_t n = x.rows, hidden = model.config.conv_hidden;
  const double inv_n = 1.0 / static_cast<double>(n);

  map.atom_scores.assign(n, 0.0);
  for (std::size_t i = 0; i < hidden; ++i) {
    const double w_mean = w(i, target);
    const double w_max = w(hidden + i, target);
    std::size_t best = 0;
    for (std::size_t k = 0; k < n; ++k) {
      map.atom_scores[k] += w_mean * x(k, i) * inv_n;
      if (x(k, i) > x(best, i))
        best = k;
    }
    map.atom_scores[best] += w_max * x(best, i);
  }
  return map;
}

/// Smallest set of rows of column `target` of the output weights whose
/// |w| mass reaches mass_fraction of the column total; ties by index.
inline std::vector<std::size_t> top_representations(const Model& model, std::size_t target,
                                                    double mass_fraction = 0.9)
{
  if (!(mass_fraction > 0.0 && mass_fraction <= 1.0))
    throw std::invalid_argument("top_representations: mass_fraction must lie in (0, 1]");
  const Tensor& w = model.out_weight->value;
  if (target >= w.cols)
    throw std::out_of_range("top_representations: target index out of range");
  std::vector<std::size_t> idx(w.rows);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::abs(w(a, target)) > std::abs(w(b, target));
  });
  // total summed in the same order so that fraction 1.0 stops exactly at the
  // last nonzero weight
  double total = 0.0;
  for (std::size_t i : idx)
    total += std::abs(w(i, target));
  if (total == 0.0)
    throw std::invalid_argument("top_representations: output column is all zero");
  std::vector<std::size_t> out;
  double acc = 0.0;
  for (std::size_t i : idx) {
    if (acc >= mass_fraction * total)
      break;
    acc += std::abs(w(i, target));
    out.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Condensed Fukui functions and rank correlation

struct FukuiRecord {
  std::vector<double> f_minus;
  std::vector<double> f_plus;
};

/// f- = rho(N) - rho(N-1), f+ = rho(N+1) - rho(N), per atom.
inline FukuiRecord condensed_fukui(std::span<const double> rho_n, std::span<const double> rho_n_minus,
                                   std::span<const double> rho_n_plus)
{
  if (rho_n.size() != rho_n_minus.size() || rho_n.size() != rho_n_plus.size())
    throw std::invalid_argument("condensed_fukui: population vectors differ in length");
  FukuiRecord r;
  for (std::size_t k = 0; k < rho_n.size(); ++k) {
    r.f_minus.push_back(rho_n[k] - rho_n_minus[k]);
    r.f_plus.push_back(rho_n_plus[k] - rho_n[k]);
  }
  return r;
}

/// 1-based ranks with ties sharing their average rank.
inline std::vector<double> average_ranks(std::span<const double> v)
{
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t s = 0; s < idx.size();) {
    std::size_t e = s;
    while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[s]])
      ++e;
    const double r = 0.5 * static_cast<double>(s + e) + 1.0;
    for (std::size_t k = s; k <= e; ++k)
      ranks[idx[k]] = r;
    s = e + 1;
  }
  return ranks;
}

/// Spearman coefficient: Pearson correlation of the average-rank vectors.
inline double rank_correlation(std::span<const double> a, std::span<const double> b)
{
  if (a.size() != b.size())
    throw std::invalid_argument("rank_correlation: length mismatch");
  if (a.size() < 2)
    throw std::invalid_argument("rank_correlation: need at least 2 values");
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double mean = (n + 1.0) / 2.0;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t k = 0; k < ra.size(); ++k) {
    sab += (ra[k] - mean) * (rb[k] - mean);
    saa += (ra[k] - mean) * (ra[k] - mean);
    sbb += (rb[k] - mean) * (rb[k] - mean);
  }
  if (saa == 0.0 || sbb == 0.0)
    throw std::invalid_argument("rank_correlation: constant input has no ranking");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

enum class Polarity { f_minus, f_plus };

inline Polarity polarity_from_name(const std::string& s)
{
  if (s == "f_minus")
    return Polarity::f_minus;
  if (s == "f_plus")
    return Polarity::f_plus;
  throw std::invalid_argument("unknown polarity '" + s + "' (expected f_minus or f_plus)");
}

struct FukuiComparison {
  std::vector<std::string> ids;
  std::vector<double> spearman;
  double mean = 0.0;
};

/// Spearman between per-atom scores and the chosen Fukui polarity for each
/// molecule, plus their mean.
inline FukuiComparison fukui_compare(const Model& model, std::span<const MolecularGraph> graphs,
                                     std::size_t target, Polarity polarity)
{
  if (graphs.empty())
    throw std::invalid_argument("fukui_compare: no molecules");
  FukuiComparison out;
  for (const auto& g : graphs) {
    if (!g.fukui)
      throw std::invalid_argument("fukui_compare: molecule '" + g.id + "' has no fukui data");
    if (g.num_atoms() < 2)
      throw std::invalid_argument("fukui_compare: molecule '" + g.id + "' has fewer than 2 atoms");
  }
  for (const auto& g : graphs) {
    const AttributionMap map = per_atom_map(model, g, target);
    std::vector<double> f;
    for (const auto& p : *g.fukui)
      f.push_back(polarity == Polarity::f_minus ? p.f_minus : p.f_plus);
    double rho;
    try {
      rho = rank_correlation(map.atom_scores, f);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("fukui_compare: molecule '" + g.id + "': " + e.what());
    }
    out.ids.push_back(g.id);
    out.spearman.push_back(rho);
    out.mean += rho;
  }
  out.mean /= static_cast<double>(out.spearman.size());
  return out;
}

// ---------------------------------------------------------------------------
// Output documents

inline constexpr int kAttributionFormatVersion = 1;

inline nlohmann::json attribution_to_json(const AttributionMap& map)
{
  nlohmann::json j;
  j["format_version"] = kAttributionFormatVersion;
  j["molecule_id"] = map.molecule_id;
  j["target"] = map.target;
  j["bias"] = map.bias;
  j["prediction"] = map.prediction;
  j["terms"] = nlohmann::json::array();
  for (const auto& t : map.terms)
    j["terms"].push_back({{"rep", t.rep},
                          {"block", block_name(t.block)},
                          {"weight", t.weight},
                          {"activation", t.activation},
                          {"value", t.value}});
  j["atom_scores"] = map.atom_scores;
  return j;
}

} // namespace ginigcn
