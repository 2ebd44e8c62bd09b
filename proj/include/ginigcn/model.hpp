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

// Multi-task fingerprint-convolution network.
//
//   h' = ReLU(BN(h_v W_self + (sum_{u in N(v)} h_u) W_nbr + b))   per conv layer
//   fp = [tanh(mean_v h_v) | tanh(max_v h_v)]              per molecule
//
// explainable: y = fp W_out + b_out
// reference:   y = ReLU(BN(fp W_int + b_int)) W_out + b_out

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "molecule.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace ginigcn {

enum class Variant { reference, explainable };

inline const char* variant_name(Variant v)
{
  return v == Variant::explainable ? "explainable" : "reference";
}

inline Variant variant_from_name(const std::string& s)
{
  if (s == "explainable")
    return Variant::explainable;
  if (s == "reference")
    return Variant::reference;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

struct ModelConfig {
  std::size_t num_conv_layers = 3;
  std::size_t conv_hidden = 64;
  std::size_t intermediate_dim = 128;
  std::vector<std::string> targets;
  Variant variant = Variant::explainable;
  std::uint64_t seed = 0;

  std::size_t fingerprint_dim() const { return 2 * conv_hidden; }

  void validate() const
  {
    if (num_conv_layers < 1)
      throw std::invalid_argument("ModelConfig: num_conv_layers must be >= 1");
    if (conv_hidden < 1)
      throw std::invalid_argument("ModelConfig: conv_hidden must be >= 1");
    if (targets.empty())
      throw std::invalid_argument("ModelConfig: targets must be nonempty");
    if (variant == Variant::reference && intermediate_dim < 1)
      throw std::invalid_argument("ModelConfig: intermediate_dim must be >= 1");
  }

  bool operator==(const ModelConfig&) const = default;
};

/// Fingerprint convolution with separate self and neighbor-sum weights.
struct ConvLayer {
  Var self_weight;
  Var neighbor_weight;
  Var bias;
  BatchNormState norm;
};

/// Affine map followed by batch norm (and ReLU in forward()).
struct DenseLayer {
  Var weight;
  Var bias;
  BatchNormState norm;
};

struct Model {
  ModelConfig config;
  std::vector<ConvLayer> conv;
  std::optional<DenseLayer> intermediate; // reference variant only
  Var out_weight;                         // rows = fingerprint (or intermediate), cols = targets
  Var out_bias;

  /// Every trainable tensor by stable name, as pointers so that callers can
  /// substitute a tensor (finite-difference checks) or load values.
  std::vector<std::pair<std::string, Var*>> named_parameters()
  {
    std::vector<std::pair<std::string, Var*>> out;
    auto add_norm = [&](const std::string& prefix, BatchNormState& n) {
      out.emplace_back(prefix + ".norm.gamma", &n.gamma);
      out.emplace_back(prefix + ".norm.beta", &n.beta);
    };
    for (std::size_t i = 0; i < conv.size(); ++i) {
      const std::string prefix = "conv." + std::to_string(i);
      out.emplace_back(prefix + ".self_weight", &conv[i].self_weight);
      out.emplace_back(prefix + ".neighbor_weight", &conv[i].neighbor_weight);
      out.emplace_back(prefix + ".bias", &conv[i].bias);
      add_norm(prefix, conv[i].norm);
    }
    if (intermediate) {
      out.emplace_back("intermediate.weight", &intermediate->weight);
      out.emplace_back("intermediate.bias", &intermediate->bias);
      add_norm("intermediate", intermediate->norm);
    }
    out.emplace_back("output.weight", &out_weight);
    out.emplace_back("output.bias", &out_bias);
    return out;
  }

  std::vector<Var> parameters()
  {
    std::vector<Var> out;
    for (auto& [name, p] : named_parameters())
      out.push_back(*p);
    return out;
  }

  std::vector<std::pair<std::string, BatchNormState*>> named_norms()
  {
    std::vector<std::pair<std::string, BatchNormState*>> out;
    for (std::size_t i = 0; i < conv.size(); ++i)
      out.emplace_back("conv." + std::to_string(i) + ".norm", &conv[i].norm);
    if (intermediate)
      out.emplace_back("intermediate.norm", &intermediate->norm);
    return out;
  }

  std::size_t parameter_count() const
  {
    std::size_t n = 0;
    for (auto& [name, p] : const_cast<Model*>(this)->named_parameters())
      n += (*p)->value.size();
    return n;
  }

  std::size_t target_index(const std::string& name) const
  {
    for (std::size_t j = 0; j < config.targets.size(); ++j)
      if (config.targets[j] == name)
        return j;
    std::string avail;
    for (const auto& t : config.targets)
      avail += (avail.empty() ? "" : ", ") + t;
    throw std::invalid_argument("unknown target '" + name + "' (available: " + avail + ")");
  }
};

namespace detail {

inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng)
{
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(fan_in, fan_out);
  for (double& v : w.data)
    v = uniform(rng, -a, a);
  return w;
}

inline DenseLayer make_dense(std::size_t in, std::size_t out, Rng& rng)
{
  return {parameter(glorot_uniform(in, out, rng)), parameter(Tensor(1, out)),
          BatchNormState::identity(out)};
}

inline ConvLayer make_conv(std::size_t in, std::size_t out, Rng& rng)
{
  ConvLayer l;
  l.self_weight = parameter(glorot_uniform(in, out, rng));
  l.neighbor_weight = parameter(glorot_uniform(in, out, rng));
  l.bias = parameter(Tensor(1, out));
  l.norm = BatchNormState::identity(out);
  return l;
}

} // namespace detail

inline Model init_model(const ModelConfig& cfg)
{
  cfg.validate();
  Rng rng = make_rng(cfg.seed, 0x6d6f64656cULL);
  Model m;
  m.config = cfg;
  std::size_t in = kFeatureDim;
  for (std::size_t l = 0; l < cfg.num_conv_layers; ++l) {
    m.conv.push_back(detail::make_conv(in, cfg.conv_hidden, rng));
    in = cfg.conv_hidden;
  }
  std::size_t head_in = cfg.fingerprint_dim();
  if (cfg.variant == Variant::reference) {
    m.intermediate = detail::make_dense(head_in, cfg.intermediate_dim, rng);
    head_in = cfg.intermediate_dim;
  }
  m.out_weight = parameter(detail::glorot_uniform(head_in, cfg.targets.size(), rng));
  m.out_bias = parameter(Tensor(1, cfg.targets.size()));
  return m;
}

// ---------------------------------------------------------------------------
// Batching

/// Disjoint union of molecules: stacked node features, global neighbor
/// lists and one ascending row segment per molecule.
struct GraphBatch {
  Tensor features;
  IndexSets neighbors;
  IndexSets segments;

  std::size_t num_molecules() const { return segments.size(); }
};

inline GraphBatch make_batch(std::span<const MolecularGraph* const> graphs)
{
  GraphBatch b;
  std::size_t total = 0;
  for (const auto* g : graphs)
    total += g->num_atoms();
  b.features = Tensor(total, kFeatureDim);
  b.neighbors.reserve(total);
  std::size_t offset = 0;
  for (const auto* g : graphs) {
    if (g->num_atoms() == 0)
      throw std::invalid_argument("make_batch: molecule '" + g->id + "' has no atoms");
    Tensor x = featurize(*g);
    std::copy(x.data.begin(), x.data.end(), b.features.data.begin() + offset * kFeatureDim);
    std::vector<std::size_t> seg;
    for (auto& nb : g->adjacency()) {
      for (auto& u : nb)
        u += offset;
      seg.push_back(offset + seg.size());
      b.neighbors.push_back(std::move(nb));
    }
    b.segments.push_back(std::move(seg));
    offset += g->num_atoms();
  }
  return b;
}

inline GraphBatch make_batch(std::span<const MolecularGraph> graphs)
{
  std::vector<const MolecularGraph*> ptrs;
  for (const auto& g : graphs)
    ptrs.push_back(&g);
  return make_batch(std::span<const MolecularGraph* const>(ptrs));
}

inline GraphBatch make_batch(const MolecularGraph& g)
{
  const MolecularGraph* p = &g;
  return make_batch(std::span<const MolecularGraph* const>(&p, 1));
}

// ---------------------------------------------------------------------------
// Forward pass

struct ForwardPass {
  Var node_reps;   // last conv layer output (post-ReLU, pre-aggregation)
  Var fingerprint; // molecules x 2H, tanh applied
  Var output;      // molecules x T
};

namespace detail {

inline Var apply_norm(const Var& x, BatchNormState& s, Mode mode) { return batch_norm(x, s, mode); }

inline Var apply_norm(const Var& x, const BatchNormState& s, Mode mode)
{
  if (mode == Mode::train)
    throw std::logic_error("train-mode forward needs a mutable model");
  return batch_norm(x, s);
}

} // namespace detail

template <typename Layer>
Var conv_forward(const Var& h, const IndexSets& neighbors, Layer& layer, Mode mode)
{
  Var z = add(linear(h, layer.self_weight, layer.bias),
              matmul(neighbor_sum(h, neighbors), layer.neighbor_weight));
  return relu(detail::apply_norm(z, layer.norm, mode));
}

inline Var fingerprint(const Var& node_reps, const IndexSets& segments)
{
  Var mean_block = segment_aggregate(node_reps, segments, Aggregation::mean);
  Var max_block = segment_aggregate(node_reps, segments, Aggregation::max);
  return tanh(concat_cols(mean_block, max_block));
}

/// Train mode requires a non-const model (batch norm running statistics).
template <typename M>
ForwardPass forward(M& model, const GraphBatch& batch, Mode mode)
{
  Var h = constant(batch.features);
  for (auto& layer : model.conv)
    h = conv_forward(h, batch.neighbors, layer, mode);
  ForwardPass fp;
  fp.node_reps = h;
  fp.fingerprint = fingerprint(h, batch.segments);
  Var head = fp.fingerprint;
  if (model.intermediate) {
    auto& layer = *model.intermediate;
    head = relu(detail::apply_norm(linear(head, layer.weight, layer.bias), layer.norm, mode));
  }
  fp.output = linear(head, model.out_weight, model.out_bias);
  return fp;
}

/// Eval-mode predictions, molecules x targets.
inline Tensor predict(const Model& model, std::span<const MolecularGraph> graphs)
{
  return forward(model, make_batch(graphs), Mode::eval).output->value;
}

inline Tensor predict(const Model& model, const MolecularGraph& g)
{
  return forward(model, make_batch(g), Mode::eval).output->value;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointFormatVersion = 1;

inline nlohmann::json config_to_json(const ModelConfig& c)
{
  return {{"num_conv_layers", c.num_conv_layers}, {"conv_hidden", c.conv_hidden},
          {"intermediate_dim", c.intermediate_dim}, {"targets", c.targets},
          {"variant", variant_name(c.variant)}, {"seed", c.seed}};
}

inline ModelConfig config_from_json(const nlohmann::json& j)
{
  ModelConfig c;
  c.num_conv_layers = j.value("num_conv_layers", c.num_conv_layers);
  c.conv_hidden = j.value("conv_hidden", c.conv_hidden);
  c.intermediate_dim = j.value("intermediate_dim", c.intermediate_dim);
  c.targets = j.at("targets").get<std::vector<std::string>>();
  c.variant = variant_from_name(j.value("variant", std::string("explainable")));
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

inline nlohmann::json model_to_json(Model& model)
{
  nlohmann::json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["config"] = config_to_json(model.config);
  j["parameters"] = nlohmann::json::array();
  for (auto& [name, p] : model.named_parameters())
    j["parameters"].push_back({{"name", name},
                               {"shape", {(*p)->value.rows, (*p)->value.cols}},
                               {"values", (*p)->value.data}});
  j["batch_norm"] = nlohmann::json::array();
  for (auto& [name, s] : model.named_norms())
    j["batch_norm"].push_back({{"name", name},
                               {"running_mean", s->running_mean},
                               {"running_var", s->running_var},
                               {"momentum", s->momentum},
                               {"epsilon", s->epsilon}});
  return j;
}

inline Model model_from_json(const nlohmann::json& j)
{
  if (!j.is_object() || !j.contains("format_version"))
    throw ParseError("checkpoint: missing format_version");
  if (j["format_version"].get<int>() != kCheckpointFormatVersion)
    throw ParseError("checkpoint: unsupported format_version " + j["format_version"].dump());
  Model m = init_model(config_from_json(j.at("config")));

  const auto& params = j.at("parameters");
  auto named = m.named_parameters();
  if (params.size() != named.size())
    throw ParseError("checkpoint: expected " + std::to_string(named.size()) +
                     " parameter tensors, found " + std::to_string(params.size()));
  for (std::size_t k = 0; k < named.size(); ++k) {
    const auto& e = params[k];
    const auto& [name, p] = named[k];
    if (e.at("name").get<std::string>() != name)
      throw ParseError("checkpoint: expected parameter '" + name + "'");
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    auto values = e.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != (*p)->value.rows || shape[1] != (*p)->value.cols ||
        values.size() != shape[0] * shape[1])
      throw ParseError("checkpoint: shape mismatch for '" + name + "'");
    (*p)->value.data = std::move(values);
  }

  const auto& norms = j.at("batch_norm");
  auto named_norms = m.named_norms();
  if (norms.size() != named_norms.size())
    throw ParseError("checkpoint: batch norm count mismatch");
  for (std::size_t k = 0; k < named_norms.size(); ++k) {
    const auto& e = norms[k];
    auto& s = *named_norms[k].second;
    if (e.at("name").get<std::string>() != named_norms[k].first)
      throw ParseError("checkpoint: expected batch norm '" + named_norms[k].first + "'");
    s.running_mean = e.at("running_mean").get<std::vector<double>>();
    s.running_var = e.at("running_var").get<std::vector<double>>();
    s.momentum = e.at("momentum").get<double>();
    s.epsilon = e.at("epsilon").get<double>();
    if (s.running_mean.size() != s.gamma->value.size() ||
        s.running_var.size() != s.gamma->value.size())
      throw ParseError("checkpoint: running statistics size mismatch");
  }
  return m;
}

inline Model deep_copy(Model& model)
{
  return model_from_json(model_to_json(model));
}

} // namespace ginigcn
