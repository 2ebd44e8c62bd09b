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

// Synthetic heavy-atom molecules with targets computed from the graph.

#include <array>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "molecule.hpp"
#include "random.hpp"

namespace ginigcn {

enum class PlantedTarget { oxygen_count, size, branch_count };

inline const char* planted_name(PlantedTarget t)
{
  switch (t) {
  case PlantedTarget::oxygen_count: return "oxygen_count";
  case PlantedTarget::size: return "size";
  case PlantedTarget::branch_count: return "branch_count";
  }
  return "?";
}

inline PlantedTarget planted_from_name(const std::string& s)
{
  for (auto t : {PlantedTarget::oxygen_count, PlantedTarget::size, PlantedTarget::branch_count})
    if (s == planted_name(t))
      return t;
  throw std::invalid_argument("unknown planted target '" + s + "'");
}

struct ToySpec {
  std::size_t num_molecules = 100;
  std::size_t max_heavy_atoms = 9;
  // weights for C, N, O, F
  std::array<double, 4> element_weights{0.6, 0.15, 0.2, 0.05};
  std::uint64_t seed = 0;
  std::vector<PlantedTarget> targets{PlantedTarget::oxygen_count, PlantedTarget::size,
                                     PlantedTarget::branch_count};
  double double_bond_probability = 0.15;
  double ring_probability = 0.35;

  void validate() const
  {
    if (max_heavy_atoms < 1)
      throw std::invalid_argument("ToySpec: max_heavy_atoms must be >= 1");
    double total = 0.0;
    for (double w : element_weights) {
      if (w < 0.0)
        throw std::invalid_argument("ToySpec: element weights must be nonnegative");
      total += w;
    }
    if (total <= 0.0)
      throw std::invalid_argument("ToySpec: element weights are all zero");
  }
};

/// Planted value computed from the graph itself. branch_count is the number
/// of atoms bonded to three or more heavy atoms.
inline double planted_value(const MolecularGraph& g, PlantedTarget t)
{
  switch (t) {
  case PlantedTarget::oxygen_count: {
    double n = 0.0;
    for (const auto& a : g.atoms)
      n += a.element == Element::O ? 1.0 : 0.0;
    return n;
  }
  case PlantedTarget::size:
    return static_cast<double>(g.num_atoms());
  case PlantedTarget::branch_count: {
    double n = 0.0;
    for (auto d : g.degrees())
      n += d >= 3 ? 1.0 : 0.0;
    return n;
  }
  }
  return 0.0;
}

namespace detail {

inline Element draw_element(const ToySpec& spec, Rng& rng)
{
  static constexpr std::array<Element, 4> kHeavy{Element::C, Element::N, Element::O, Element::F};
  double total = 0.0;
  for (double w : spec.element_weights)
    total += w;
  double u = uniform01(rng) * total;
  for (std::size_t k = 0; k < kHeavy.size(); ++k) {
    if (u < spec.element_weights[k])
      return kHeavy[k];
    u -= spec.element_weights[k];
  }
  return Element::C;
}

} // namespace detail

inline MolecularGraph generate_molecule(const ToySpec& spec, Rng& rng, std::string id)
{
  MolecularGraph g;
  g.id = std::move(id);
  const std::size_t n = 1 + uniform_index(rng, spec.max_heavy_atoms);
  std::vector<int> free;   // remaining valence
  std::vector<int> degree; // heavy neighbors

  g.atoms.push_back({detail::draw_element(spec, rng), 0, false});
  free.push_back(standard_valence(g.atoms[0].element));
  degree.push_back(0);

  for (std::size_t k = 1; k < n; ++k) {
    std::vector<std::size_t> open;
    for (std::size_t a = 0; a < g.atoms.size(); ++a)
      if (free[a] >= 1 && degree[a] < 4)
        open.push_back(a);
    if (open.empty())
      break;
    const Element e = detail::draw_element(spec, rng);
    const std::size_t parent = open[uniform_index(rng, open.size())];
    int order = 1;
    if (free[parent] >= 2 && standard_valence(e) >= 2 &&
        uniform01(rng) < spec.double_bond_probability)
      order = 2;
    g.atoms.push_back({e, 0, false});
    free.push_back(standard_valence(e) - order);
    degree.push_back(1);
    free[parent] -= order;
    ++degree[parent];
    g.bonds.push_back({parent, k, order == 2 ? BondOrder::double_ : BondOrder::single});
  }

  if (g.atoms.size() >= 3 && uniform01(rng) < spec.ring_probability) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t a = 0; a < g.atoms.size(); ++a)
      for (std::size_t b = a + 1; b < g.atoms.size(); ++b) {
        if (free[a] < 1 || free[b] < 1 || degree[a] >= 4 || degree[b] >= 4)
          continue;
        bool bonded = false;
        for (const auto& bd : g.bonds)
          bonded = bonded || (bd.i == a && bd.j == b) || (bd.i == b && bd.j == a);
        if (!bonded)
          pairs.emplace_back(a, b);
      }
    if (!pairs.empty()) {
      auto [a, b] = pairs[uniform_index(rng, pairs.size())];
      g.bonds.push_back({a, b, BondOrder::single});
      --free[a];
      --free[b];
      ++degree[a];
      ++degree[b];
    }
  }

  for (std::size_t a = 0; a < g.atoms.size(); ++a)
    g.atoms[a].implicit_hydrogens = free[a];
  for (auto t : spec.targets)
    g.targets[planted_name(t)] = planted_value(g, t);
  g.validate();
  return g;
}

inline std::vector<MolecularGraph> generate_graphs(const ToySpec& spec)
{
  spec.validate();
  Rng rng = make_rng(spec.seed, 0x746f79ULL);
  std::vector<MolecularGraph> out;
  out.reserve(spec.num_molecules);
  char id[32];
  for (std::size_t i = 0; i < spec.num_molecules; ++i) {
    std::snprintf(id, sizeof id, "toy-%06zu", i);
    out.push_back(generate_molecule(spec, rng, id));
  }
  return out;
}

/// Dataset file content for the spec.
inline std::string generate(const ToySpec& spec)
{
  return serialize_dataset(generate_graphs(spec));
}

} // namespace ginigcn
