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

// Shared fixtures for unit and acceptance tests.

#include <functional>
#include <string>
#include <vector>

#include <ginigcn/gini.hpp>
#include <ginigcn/model.hpp>
#include <ginigcn/toydata.hpp>
#include <ginigcn/training.hpp>

namespace fixture {

inline std::vector<ginigcn::MolecularGraph> toy(std::size_t n, std::uint64_t seed)
{
  ginigcn::ToySpec spec;
  spec.num_molecules = n;
  spec.seed = seed;
  return ginigcn::generate_graphs(spec);
}

/// True when some channel of a molecule's node outputs has its maximum
/// shared by two atoms at a nonzero value. The max-block credit then depends
/// on atom labels. A shared maximum of 0 credits w * 0 and is harmless.
inline bool has_credit_tie(const ginigcn::Model& model, const ginigcn::MolecularGraph& g)
{
  using namespace ginigcn;
  const Tensor x = forward(model, make_batch(g), Mode::eval).node_reps->value;
  for (std::size_t c = 0; c < x.cols; ++c) {
    double top = x(0, c);
    for (std::size_t k = 1; k < x.rows; ++k)
      top = std::max(top, x(k, c));
    int hits = 0;
    for (std::size_t k = 0; k < x.rows; ++k)
      hits += x(k, c) == top;
    if (hits > 1 && top != 0.0)
      return true;
  }
  return false;
}

/// Regularized training objective of `model` on one batch as a function of
/// the parameter tensor called `name`. The model's tensor is swapped in and
/// restored around each evaluation.
inline std::function<ginigcn::Var(const ginigcn::Var&)>
full_loss_of(ginigcn::Model& model, const std::string& name, ginigcn::GraphBatch batch,
             ginigcn::Tensor target, ginigcn::Tensor mask, ginigcn::GiniConfig cfg)
{
  using namespace ginigcn;
  Var* slot = nullptr;
  for (auto& [n, p] : model.named_parameters())
    if (n == name)
      slot = p;
  if (!slot)
    throw std::invalid_argument("full_loss_of: no parameter " + name);
  return [&model, slot, batch = std::move(batch), target = std::move(target),
          mask = std::move(mask), cfg](const Var& x) {
    Var saved = *slot;
    *slot = x;
    ForwardPass fp = forward(model, batch, Mode::train);
    Var loss = multitask_loss(fp.output, target, mask);
    auto [gm, gx] = layer_gini_blocks(model.out_weight, model.config.conv_hidden);
    Var out = regularized_loss(loss, gm, gx, cfg).first;
    *slot = saved;
    return out;
  };
}

} // namespace fixture
