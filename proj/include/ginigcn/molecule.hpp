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

// Molecular graphs: the line-delimited dataset format, a small SMILES
// subset, atom featurization and k-fold splitting.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "random.hpp"
#include "tensor.hpp"

namespace ginigcn {

class ParseError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class Element : std::uint8_t { H, C, N, O, F };

inline constexpr std::array<Element, 5> kElements{Element::H, Element::C, Element::N,
                                                  Element::O, Element::F};

inline const char* element_symbol(Element e)
{
  switch (e) {
  case Element::H: return "H";
  case Element::C: return "C";
  case Element::N: return "N";
  case Element::O: return "O";
  case Element::F: return "F";
  }
  return "?";
}

inline std::optional<Element> element_from_symbol(std::string_view s)
{
  for (Element e : kElements)
    if (s == element_symbol(e))
      return e;
  return std::nullopt;
}

inline int standard_valence(Element e)
{
  switch (e) {
  case Element::H: return 1;
  case Element::C: return 4;
  case Element::N: return 3;
  case Element::O: return 2;
  case Element::F: return 1;
  }
  return 0;
}

enum class BondOrder : std::uint8_t { single = 1, double_ = 2, triple = 3, aromatic = 4 };

struct Atom {
  Element element = Element::C;
  int implicit_hydrogens = 0;
  bool aromatic = false;

  bool operator==(const Atom&) const = default;
};

struct Bond {
  std::size_t i = 0;
  std::size_t j = 0;
  BondOrder order = BondOrder::single;

  bool operator==(const Bond&) const = default;
};

struct FukuiPair {
  double f_minus = 0.0;
  double f_plus = 0.0;

  bool operator==(const FukuiPair&) const = default;
};

struct MolecularGraph {
  std::string id;
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::map<std::string, double> targets;
  std::optional<std::vector<FukuiPair>> fukui;

  std::size_t num_atoms() const { return atoms.size(); }

  /// Throws ParseError when an invariant is violated.
  void validate() const
  {
    if (atoms.empty())
      throw ParseError("molecule '" + id + "' has no atoms");
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& b : bonds) {
      if (b.i >= atoms.size() || b.j >= atoms.size())
        throw ParseError("bond index out of range (" + std::to_string(b.i) + ", " +
                         std::to_string(b.j) + ") for " + std::to_string(atoms.size()) +
                         " atoms");
      if (b.i == b.j)
        throw ParseError("bond endpoints must be distinct (atom " + std::to_string(b.i) + ")");
      if (!seen.insert(std::minmax(b.i, b.j)).second)
        throw ParseError("duplicate bond (" + std::to_string(b.i) + ", " + std::to_string(b.j) +
                         ")");
    }
    for (const auto& a : atoms)
      if (a.implicit_hydrogens < 0)
        throw ParseError("negative implicit hydrogen count in '" + id + "'");
    if (fukui && fukui->size() != atoms.size())
      throw ParseError("fukui has " + std::to_string(fukui->size()) + " entries for " +
                       std::to_string(atoms.size()) + " atoms");
  }

  /// Sorted neighbor lists; symmetric by construction.
  IndexSets adjacency() const
  {
    IndexSets adj(atoms.size());
    for (const auto& b : bonds) {
      adj[b.i].push_back(b.j);
      adj[b.j].push_back(b.i);
    }
    for (auto& a : adj)
      std::sort(a.begin(), a.end());
    return adj;
  }

  std::vector<std::size_t> degrees() const
  {
    std::vector<std::size_t> d(atoms.size(), 0);
    for (const auto& b : bonds) {
      ++d[b.i];
      ++d[b.j];
    }
    return d;
  }

  bool operator==(const MolecularGraph&) const = default;
};

/// Implicit hydrogens left by the standard valence after the explicit bonds.
/// An aromatic bond counts as one; an aromatic C or N additionally spends one
/// valence on its pi bond.
inline int valence_hydrogens(const MolecularGraph& g, std::size_t atom)
{
  int used = 0;
  for (const auto& b : g.bonds) {
    if (b.i != atom && b.j != atom)
      continue;
    used += b.order == BondOrder::aromatic ? 1 : static_cast<int>(b.order);
  }
  const Atom& a = g.atoms[atom];
  if (a.aromatic && (a.element == Element::C || a.element == Element::N))
    used += 1;
  return standard_valence(a.element) - used;
}

// ---------------------------------------------------------------------------
// Dataset file format

inline nlohmann::json graph_to_json(const MolecularGraph& g)
{
  nlohmann::json j;
  j["id"] = g.id;
  j["atoms"] = nlohmann::json::array();
  for (const auto& a : g.atoms)
    j["atoms"].push_back({{"element", element_symbol(a.element)},
                          {"aromatic", a.aromatic},
                          {"implicit_h", a.implicit_hydrogens}});
  j["bonds"] = nlohmann::json::array();
  for (const auto& b : g.bonds) {
    if (b.order == BondOrder::aromatic)
      j["bonds"].push_back({b.i, b.j, 1.5});
    else
      j["bonds"].push_back({b.i, b.j, static_cast<int>(b.order)});
  }
  j["targets"] = nlohmann::json::object();
  for (const auto& [k, v] : g.targets)
    j["targets"][k] = v;
  if (g.fukui) {
    j["fukui"] = nlohmann::json::array();
    for (const auto& f : *g.fukui)
      j["fukui"].push_back({f.f_minus, f.f_plus});
  }
  return j;
}

/// One dataset line, without the trailing newline.
inline std::string serialize_graph(const MolecularGraph& g)
{
  return graph_to_json(g).dump();
}

inline std::string serialize_dataset(const std::vector<MolecularGraph>& graphs)
{
  std::string out;
  for (const auto& g : graphs) {
    out += serialize_graph(g);
    out += '\n';
  }
  return out;
}

namespace detail {

inline BondOrder bond_order_from_json(const nlohmann::json& o)
{
  if (o.is_string()) {
    if (o.get<std::string>() == "aromatic")
      return BondOrder::aromatic;
    throw ParseError("unknown bond order '" + o.get<std::string>() + "'");
  }
  if (!o.is_number())
    throw ParseError("bond order must be a number or \"aromatic\"");
  const double v = o.get<double>();
  if (v == 1.0) return BondOrder::single;
  if (v == 2.0) return BondOrder::double_;
  if (v == 3.0) return BondOrder::triple;
  if (v == 1.5) return BondOrder::aromatic;
  throw ParseError("unsupported bond order " + o.dump());
}

} // namespace detail

inline MolecularGraph graph_from_json(const nlohmann::json& j)
{
  if (!j.is_object())
    throw ParseError("record is not an object");
  MolecularGraph g;
  if (!j.contains("id") || !j["id"].is_string())
    throw ParseError("missing string field 'id'");
  g.id = j["id"].get<std::string>();
  if (!j.contains("atoms") || !j["atoms"].is_array())
    throw ParseError("missing array field 'atoms'");

  std::vector<bool> explicit_h;
  for (const auto& a : j["atoms"]) {
    if (!a.is_object() || !a.contains("element") || !a["element"].is_string())
      throw ParseError("atom entry needs a string 'element'");
    const auto sym = a["element"].get<std::string>();
    auto e = element_from_symbol(sym);
    if (!e)
      throw ParseError("unsupported element '" + sym + "'");
    Atom atom;
    atom.element = *e;
    if (a.contains("aromatic"))
      atom.aromatic = a["aromatic"].get<bool>();
    const bool has_h = a.contains("implicit_h");
    if (has_h) {
      if (!a["implicit_h"].is_number_integer())
        throw ParseError("implicit_h must be an integer");
      atom.implicit_hydrogens = a["implicit_h"].get<int>();
    }
    explicit_h.push_back(has_h);
    g.atoms.push_back(atom);
  }

  if (j.contains("bonds")) {
    if (!j["bonds"].is_array())
      throw ParseError("'bonds' must be an array");
    for (const auto& b : j["bonds"]) {
      if (!b.is_array() || b.size() != 3 || !b[0].is_number_integer() ||
          !b[1].is_number_integer())
        throw ParseError("bond entry must be [i, j, order]");
      const auto i = b[0].get<long long>();
      const auto k = b[1].get<long long>();
      if (i < 0 || k < 0)
        throw ParseError("bond index out of range");
      g.bonds.push_back({static_cast<std::size_t>(i), static_cast<std::size_t>(k),
                         detail::bond_order_from_json(b[2])});
    }
  }

  if (j.contains("targets")) {
    if (!j["targets"].is_object())
      throw ParseError("'targets' must be an object");
    for (const auto& [k, v] : j["targets"].items()) {
      if (v.is_null())
        continue;
      if (!v.is_number())
        throw ParseError("target '" + k + "' is not a number");
      g.targets[k] = v.get<double>();
    }
  }

  if (j.contains("fukui") && !j["fukui"].is_null()) {
    std::vector<FukuiPair> f;
    for (const auto& e : j["fukui"]) {
      if (!e.is_array())
        throw ParseError("fukui entry must be an array");
      if (e.size() == 2) {
        f.push_back({e[0].get<double>(), e[1].get<double>()});
      } else if (e.size() == 3) {
        // population triple (rho(N-1), rho(N), rho(N+1))
        const double lo = e[0].get<double>(), mid = e[1].get<double>(), hi = e[2].get<double>();
        f.push_back({mid - lo, hi - mid});
      } else {
        throw ParseError("fukui entry must be [f_minus, f_plus] or a population triple");
      }
    }
    g.fukui = std::move(f);
  }

  g.validate();
  for (std::size_t k = 0; k < g.atoms.size(); ++k)
    if (!explicit_h[k]) {
      g.atoms[k].implicit_hydrogens = valence_hydrogens(g, k);
      if (g.atoms[k].implicit_hydrogens < 0)
        throw ParseError("valence exceeded at atom " + std::to_string(k));
    }
  return g;
}

/// Parses a dataset document. Blank lines and lines starting with '#' are
/// skipped. Errors carry the 1-based line number.
inline std::vector<MolecularGraph> parse_graph_file(std::string_view text)
{
  std::vector<MolecularGraph> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos)
      end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r')
      line.remove_suffix(1);
    const auto first = line.find_first_not_of(" \t");
    if (first == std::string_view::npos || line[first] == '#')
      continue;
    try {
      auto j = nlohmann::json::parse(line);
      out.push_back(graph_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed record: " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<MolecularGraph> load_dataset(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open dataset '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_graph_file(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// SMILES subset: C N O F, aromatic c n o, bonds - = #, branches, ring
// closure digits 1-9. Hydrogens are implicit.

inline MolecularGraph parse_smiles_subset(std::string_view s, std::string id = {})
{
  MolecularGraph g;
  g.id = id.empty() ? std::string(s) : std::move(id);

  std::optional<std::size_t> prev;
  std::vector<std::size_t> branch_stack;
  std::optional<BondOrder> pending;
  std::array<std::optional<std::pair<std::size_t, std::optional<BondOrder>>>, 10> rings{};

  auto bond_between = [&](std::size_t a, std::size_t b, std::optional<BondOrder> explicit_order) {
    BondOrder order = BondOrder::single;
    if (explicit_order)
      order = *explicit_order;
    else if (g.atoms[a].aromatic && g.atoms[b].aromatic)
      order = BondOrder::aromatic;
    for (const auto& e : g.bonds)
      if ((e.i == a && e.j == b) || (e.i == b && e.j == a))
        throw ParseError("duplicate bond in SMILES '" + std::string(s) + "'");
    if (a == b)
      throw ParseError("ring closure onto the same atom in '" + std::string(s) + "'");
    g.bonds.push_back({a, b, order});
  };

  for (std::size_t pos = 0; pos < s.size(); ++pos) {
    const char c = s[pos];
    std::optional<Element> elem;
    bool aromatic = false;
    switch (c) {
    case 'C': elem = Element::C; break;
    case 'N': elem = Element::N; break;
    case 'O': elem = Element::O; break;
    case 'F': elem = Element::F; break;
    case 'c': elem = Element::C; aromatic = true; break;
    case 'n': elem = Element::N; aromatic = true; break;
    case 'o': elem = Element::O; aromatic = true; break;
    default: break;
    }
    if (elem) {
      g.atoms.push_back({*elem, 0, aromatic});
      const std::size_t idx = g.atoms.size() - 1;
      if (prev)
        bond_between(*prev, idx, pending);
      else if (pending)
        throw ParseError("bond symbol without a preceding atom at position " +
                         std::to_string(pos));
      pending.reset();
      prev = idx;
      continue;
    }
    switch (c) {
    case '-': pending = BondOrder::single; break;
    case '=': pending = BondOrder::double_; break;
    case '#': pending = BondOrder::triple; break;
    case '(':
      if (!prev)
        throw ParseError("branch without a preceding atom at position " + std::to_string(pos));
      branch_stack.push_back(*prev);
      break;
    case ')':
      if (branch_stack.empty())
        throw ParseError("unmatched ')' at position " + std::to_string(pos));
      prev = branch_stack.back();
      branch_stack.pop_back();
      break;
    default:
      if (c >= '1' && c <= '9') {
        if (!prev)
          throw ParseError("ring closure without a preceding atom at position " +
                           std::to_string(pos));
        auto& slot = rings[static_cast<std::size_t>(c - '0')];
        if (slot) {
          auto order = pending ? pending : slot->second;
          bond_between(slot->first, *prev, order);
          slot.reset();
        } else {
          slot = std::make_pair(*prev, pending);
        }
        pending.reset();
      } else {
        throw ParseError(std::string("unsupported character '") + c + "' at position " +
                         std::to_string(pos));
      }
    }
  }
  if (!branch_stack.empty())
    throw ParseError("unmatched '(' in '" + std::string(s) + "'");
  for (std::size_t d = 1; d < rings.size(); ++d)
    if (rings[d])
      throw ParseError("unmatched ring-closure digit " + std::to_string(d));
  if (pending)
    throw ParseError("dangling bond symbol at end of '" + std::string(s) + "'");
  if (g.atoms.empty())
    throw ParseError("empty SMILES");

  for (std::size_t k = 0; k < g.atoms.size(); ++k) {
    const int h = valence_hydrogens(g, k);
    if (h < 0)
      throw ParseError("valence violation at atom " + std::to_string(k) + " (" +
                       element_symbol(g.atoms[k].element) + ")");
    g.atoms[k].implicit_hydrogens = h;
  }
  g.validate();
  return g;
}

// ---------------------------------------------------------------------------
// Featurization

inline constexpr std::size_t kFeatureDim = 16;

/// Row layout: element one-hot H,C,N,O,F (5) | heavy degree 0-4 (5) |
/// aromatic (1) | implicit hydrogens 0-4 (5).
inline Tensor featurize(const MolecularGraph& g)
{
  Tensor x(g.num_atoms(), kFeatureDim);
  const auto deg = g.degrees();
  for (std::size_t k = 0; k < g.num_atoms(); ++k) {
    const Atom& a = g.atoms[k];
    if (deg[k] > 4)
      throw std::invalid_argument("featurize: atom " + std::to_string(k) + " of '" + g.id +
                                  "' has degree " + std::to_string(deg[k]) + " > 4");
    if (a.implicit_hydrogens < 0 || a.implicit_hydrogens > 4)
      throw std::invalid_argument("featurize: atom " + std::to_string(k) + " of '" + g.id +
                                  "' has " + std::to_string(a.implicit_hydrogens) +
                                  " implicit hydrogens, outside 0-4");
    x(k, static_cast<std::size_t>(a.element)) = 1.0;
    x(k, 5 + deg[k]) = 1.0;
    x(k, 10) = a.aromatic ? 1.0 : 0.0;
    x(k, 11 + static_cast<std::size_t>(a.implicit_hydrogens)) = 1.0;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Cross-validation folds

/// k disjoint folds partitioning 0..n-1 with sizes differing by at most one.
inline std::vector<std::vector<std::size_t>> kfold_split(std::size_t n, std::size_t k,
                                                         std::uint64_t seed)
{
  if (k < 2 || k > n)
    throw std::invalid_argument("kfold_split: need 2 <= k <= n, got k=" + std::to_string(k) +
                                ", n=" + std::to_string(n));
  Rng rng = make_rng(seed, 0x6b666f6c64ULL);
  auto perm = random_permutation(n, rng);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < n; ++i)
    folds[i % k].push_back(perm[i]);
  for (auto& f : folds)
    std::sort(f.begin(), f.end());
  return folds;
}

} // namespace ginigcn
