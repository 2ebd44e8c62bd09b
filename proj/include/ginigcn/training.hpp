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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <future>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <optional>
#include <vector>

#include <json.hpp>

#include "gini.hpp"
#include "model.hpp"
#include "molecule.hpp"
#include "random.hpp"
#include "tensor.hpp"

namespace ginigcn {

using Dataset = std::vector<MolecularGraph>;

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  GiniConfig gini;
  std::uint64_t seed = 0;

  void validate() const
  {
    if (epochs < 1)
      throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (batch_size < 2)
      throw std::invalid_argument("TrainConfig: batch_size must be >= 2");
    if (!(learning_rate > 0.0))
      throw std::invalid_argument("TrainConfig: learning_rate must be positive");
    gini.validate();
  }
};

/// Thrown when a loss becomes NaN or infinite.
class TrainingDiverged : public std::runtime_error {
public:
  TrainingDiverged(std::size_t epoch, std::size_t batch, const std::string& what)
    : std::runtime_error("non-finite " + what + " at epoch " + std::to_string(epoch) +
                         ", batch " + std::to_string(batch)),
      epoch(epoch), batch(batch)
  { }

  std::size_t epoch;
  std::size_t batch;
};

// ---------------------------------------------------------------------------
// Target standardization

struct TargetStats {
  std::vector<std::string> names;
  std::vector<double> mean;
  std::vector<double> stddev;

  double to_original(std::size_t j, double z) const { return z * stddev[j] + mean[j]; }
  double to_standard(std::size_t j, double v) const { return (v - mean[j]) / stddev[j]; }
};

/// Molecules x targets matrix with a 0/1 mask of observed entries.
struct TargetMatrix {
  Tensor values;
  Tensor mask;
};

inline TargetMatrix gather_targets(std::span<const MolecularGraph* const> graphs,
                                   const std::vector<std::string>& names)
{
  TargetMatrix t{Tensor(graphs.size(), names.size()), Tensor(graphs.size(), names.size())};
  for (std::size_t i = 0; i < graphs.size(); ++i)
    for (std::size_t j = 0; j < names.size(); ++j) {
      auto it = graphs[i]->targets.find(names[j]);
      if (it != graphs[i]->targets.end()) {
        t.values(i, j) = it->second;
        t.mask(i, j) = 1.0;
      }
    }
  return t;
}

inline TargetMatrix gather_targets(std::span<const MolecularGraph> graphs,
                                   const std::vector<std::string>& names)
{
  std::vector<const MolecularGraph*> ptrs;
  for (const auto& g : graphs)
    ptrs.push_back(&g);
  return gather_targets(std::span<const MolecularGraph* const>(ptrs), names);
}

/// Population mean and standard deviation per target over observed entries.
inline TargetStats fit_target_stats(const TargetMatrix& t, const std::vector<std::string>& names)
{
  TargetStats s{names, std::vector<double>(names.size()), std::vector<double>(names.size())};
  for (std::size_t j = 0; j < names.size(); ++j) {
    double n = 0.0, total = 0.0;
    for (std::size_t i = 0; i < t.values.rows; ++i)
      if (t.mask(i, j) != 0.0) {
        n += 1.0;
        total += t.values(i, j);
      }
    if (n == 0.0)
      throw std::invalid_argument("target '" + names[j] + "' has no observed values");
    const double mu = total / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < t.values.rows; ++i)
      if (t.mask(i, j) != 0.0)
        ss += (t.values(i, j) - mu) * (t.values(i, j) - mu);
    const double sd = std::sqrt(ss / n);
    if (!(sd > 0.0))
      throw std::invalid_argument("target '" + names[j] + "' is constant in the training data");
    if (!std::isfinite(mu) || !std::isfinite(sd))
      throw std::invalid_argument("target '" + names[j] + "' has non-finite statistics");
    s.mean[j] = mu;
    s.stddev[j] = sd;
  }
  return s;
}

inline TargetMatrix apply_standardization(const TargetStats& s, TargetMatrix t)
{
  for (std::size_t i = 0; i < t.values.rows; ++i)
    for (std::size_t j = 0; j < t.values.cols; ++j)
      if (t.mask(i, j) != 0.0)
        t.values(i, j) = s.to_standard(j, t.values(i, j));
  return t;
}

inline TargetMatrix invert_standardization(const TargetStats& s, TargetMatrix t)
{
  for (std::size_t i = 0; i < t.values.rows; ++i)
    for (std::size_t j = 0; j < t.values.cols; ++j)
      if (t.mask(i, j) != 0.0)
        t.values(i, j) = s.to_original(j, t.values(i, j));
  return t;
}

inline std::pair<TargetStats, TargetMatrix> standardize_targets(const TargetMatrix& train,
                                                                const std::vector<std::string>& names)
{
  TargetStats s = fit_target_stats(train, names);
  return {s, apply_standardization(s, train)};
}

// ---------------------------------------------------------------------------
// Loss

/// Masked mean squared error: sum mask * (pred - target)^2 / sum mask.
inline Var multitask_loss(const Var& pred, const Tensor& target, const Tensor& mask)
{
  if (!pred->value.same_shape(target) || !target.same_shape(mask))
    throw std::invalid_argument("multitask_loss: shape mismatch");
  double observed = 0.0;
  for (double m : mask.data)
    observed += m;
  if (observed == 0.0)
    throw std::invalid_argument("multitask_loss: every entry is masked");
  Var sq = square(sub(pred, constant(target)));
  return scale(sum(mul(sq, constant(mask))), 1.0 / observed);
}

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;

  static AdamState for_params(const std::vector<Var>& params)
  {
    AdamState s;
    for (const auto& p : params) {
      s.m.emplace_back(p->value.rows, p->value.cols);
      s.v.emplace_back(p->value.rows, p->value.cols);
    }
    return s;
  }
};

/// One bias-corrected Adam update from the params' current grads.
inline void adam_step(const std::vector<Var>& params, AdamState& state, const TrainConfig& cfg)
{
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, t);
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& w = params[k]->value;
    const Tensor& g = params[k]->grad;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (!m.same_shape(w) || !v.same_shape(w))
      throw std::invalid_argument("adam_step: moment shape mismatch");
    for (std::size_t e = 0; e < w.size(); ++e) {
      m[e] = cfg.adam_beta1 * m[e] + (1.0 - cfg.adam_beta1) * g[e];
      v[e] = cfg.adam_beta2 * v[e] + (1.0 - cfg.adam_beta2) * g[e] * g[e];
      const double mhat = m[e] / c1;
      const double vhat = v[e] / c2;
      w[e] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
  std::size_t epoch = 0;
  double raw_loss = 0.0;
  double regularized_loss = 0.0;
  double g_mean_block = std::numeric_limits<double>::quiet_NaN();
  double g_max_block = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> validation_mae; // NaN when no validation set
};

struct History {
  std::vector<std::string> targets;
  std::vector<EpochRecord> epochs;

  /// Tab-separated table with a header row.
  void write_table(std::ostream& os) const
  {
    os << "epoch\traw_loss\treg_loss\tg_mean\tg_max";
    for (const auto& t : targets)
      os << "\tmae_" << t;
    os << '\n';
    std::ostringstream line;
    line.precision(17);
    for (const auto& e : epochs) {
      line.str("");
      line << e.epoch << '\t' << e.raw_loss << '\t' << e.regularized_loss << '\t'
           << e.g_mean_block << '\t' << e.g_max_block;
      for (double m : e.validation_mae)
        line << '\t' << m;
      os << line.str() << '\n';
    }
  }
};

struct TrainResult {
  TargetStats stats;
  History history;
};

/// Block Ginis of the output layer; NaN for the reference variant, whose
/// output rows do not map onto aggregation blocks.
inline std::pair<double, double> output_block_gini(const Model& model)
{
  if (model.config.variant != Variant::explainable)
    return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  const Tensor& w = model.out_weight->value;
  const std::size_t half = model.config.conv_hidden * w.cols;
  std::span<const double> all(w.data);
  return {gini(all.subspan(0, half)).value, gini(all.subspan(half)).value};
}

/// Per-target MAE in original units over observed entries.
inline std::vector<double> evaluate_mae(const Model& model, const TargetStats& stats,
                                        std::span<const MolecularGraph> data)
{
  if (data.empty())
    throw std::invalid_argument("evaluate_mae: empty evaluation set");
  if (stats.names != model.config.targets)
    throw std::invalid_argument("evaluate_mae: target statistics do not match the model");
  const Tensor pred = predict(model, data);
  const TargetMatrix truth = gather_targets(data, model.config.targets);
  std::vector<double> mae(stats.names.size(), 0.0);
  for (std::size_t j = 0; j < mae.size(); ++j) {
    double n = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
      if (truth.mask(i, j) != 0.0) {
        mae[j] += std::abs(stats.to_original(j, pred(i, j)) - truth.values(i, j));
        n += 1.0;
      }
    if (n == 0.0)
      throw std::invalid_argument("evaluate_mae: no observed values for target '" +
                                  stats.names[j] + "'");
    mae[j] /= n;
  }
  return mae;
}

/// Minimizes L / max(g_effective, g_floor)^m over seeded shuffled
/// mini-batches. Each epoch is logged from a full pass over the training set
/// in eval mode after the epoch's updates.
inline TrainResult train(Model& model, std::span<const MolecularGraph> train_set,
                         const TrainConfig& cfg, std::span<const MolecularGraph> validation = {})
{
  cfg.validate();
  if (train_set.empty())
    throw std::invalid_argument("train: empty training set");
  if (cfg.gini.m > 0.0 && model.config.variant != Variant::explainable)
    throw std::invalid_argument("Gini requires explainable variant");
  if (train_set.size() < 2)
    throw std::invalid_argument("train: batch norm needs at least 2 training molecules");

  const auto& names = model.config.targets;
  const TargetMatrix raw_targets = gather_targets(train_set, names);
  auto [stats, z] = standardize_targets(raw_targets, names);
  const bool explainable = model.config.variant == Variant::explainable;

  TrainResult result{stats, History{names, {}}};
  auto params = model.parameters();
  AdamState opt = AdamState::for_params(params);

  const std::size_t n = train_set.size();
  const GraphBatch full_batch = make_batch(train_set);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng rng = make_rng(cfg.seed, epoch);
    auto order = random_permutation(n, rng);

    std::size_t start = 0, batch_no = 0;
    while (start < n) {
      std::size_t end = std::min(n, start + cfg.batch_size);
      if (n - end == 1) // never leave a single-molecule batch behind
        end = n;
      std::vector<const MolecularGraph*> graphs;
      Tensor target(end - start, names.size()), mask(end - start, names.size());
      for (std::size_t r = start; r < end; ++r) {
        const std::size_t i = order[r];
        graphs.push_back(&train_set[i]);
        for (std::size_t j = 0; j < names.size(); ++j) {
          target(r - start, j) = z.values(i, j);
          mask(r - start, j) = z.mask(i, j);
        }
      }
      start = end;
      ++batch_no;
      double observed = 0.0;
      for (double m : mask.data)
        observed += m;
      if (observed == 0.0)
        continue;

      const GraphBatch batch = make_batch(std::span<const MolecularGraph* const>(graphs));
      ForwardPass fp = forward(model, batch, Mode::train);
      Var loss = multitask_loss(fp.output, target, mask);
      Var objective = loss;
      if (explainable) {
        auto [gm, gx] = layer_gini_blocks(model.out_weight, model.config.conv_hidden);
        objective = regularized_loss(loss, gm, gx, cfg.gini).first;
      }
      if (!std::isfinite(objective->item()))
        throw TrainingDiverged(epoch, batch_no, "loss");
      for (const auto& p : params)
        zero_grad(p);
      backward(objective);
      adam_step(params, opt, cfg);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    ForwardPass fp = forward(static_cast<const Model&>(model), full_batch, Mode::eval);
    rec.raw_loss = multitask_loss(fp.output, z.values, z.mask)->item();
    std::tie(rec.g_mean_block, rec.g_max_block) = output_block_gini(model);
    if (explainable)
      rec.regularized_loss = regularized_value(
        rec.raw_loss, std::sqrt(rec.g_mean_block * rec.g_max_block), cfg.gini);
    else
      rec.regularized_loss = rec.raw_loss;
    if (!std::isfinite(rec.raw_loss) || !std::isfinite(rec.regularized_loss))
      throw TrainingDiverged(epoch, batch_no, "epoch loss");
    if (!validation.empty())
      rec.validation_mae = evaluate_mae(model, stats, validation);
    else
      rec.validation_mae.assign(names.size(), std::numeric_limits<double>::quiet_NaN());
    result.history.epochs.push_back(std::move(rec));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct CrossValResult {
  std::vector<std::string> targets;
  std::vector<std::vector<double>> fold_mae; // folds x targets
  std::vector<double> mean_mae;
};

inline Dataset select(std::span<const MolecularGraph> data, const std::vector<std::size_t>& idx)
{
  Dataset out;
  out.reserve(idx.size());
  for (std::size_t i : idx)
    out.push_back(data[i]);
  return out;
}

/// Trains one model per fold on the other k-1 folds and averages the
/// held-out MAEs. Folds run concurrently when parallel is set.
inline CrossValResult cross_validate(std::span<const MolecularGraph> data,
                                     const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                     std::size_t k = 5, bool parallel = true)
{
  const auto folds = kfold_split(data.size(), k, train_cfg.seed);
  auto run_fold = [&](std::size_t f) {
    std::vector<std::size_t> train_idx;
    for (std::size_t g = 0; g < k; ++g)
      if (g != f)
        train_idx.insert(train_idx.end(), folds[g].begin(), folds[g].end());
    std::sort(train_idx.begin(), train_idx.end());
    const Dataset train_set = select(data, train_idx);
    const Dataset held_out = select(data, folds[f]);
    Model model = init_model(model_cfg);
    auto res = train(model, train_set, train_cfg);
    return evaluate_mae(model, res.stats, held_out);
  };

  CrossValResult out;
  out.targets = model_cfg.targets;
  if (parallel && std::thread::hardware_concurrency() > 1) {
    std::vector<std::future<std::vector<double>>> jobs;
    for (std::size_t f = 0; f < k; ++f)
      jobs.push_back(std::async(std::launch::async, run_fold, f));
    for (auto& j : jobs)
      out.fold_mae.push_back(j.get());
  } else {
    for (std::size_t f = 0; f < k; ++f)
      out.fold_mae.push_back(run_fold(f));
  }
  out.mean_mae.assign(out.targets.size(), 0.0);
  for (const auto& row : out.fold_mae)
    for (std::size_t j = 0; j < row.size(); ++j)
      out.mean_mae[j] += row[j] / static_cast<double>(k);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence of trained artifacts

inline nlohmann::json target_stats_to_json(const TargetStats& s)
{
  return {{"names", s.names}, {"mean", s.mean}, {"std", s.stddev}};
}

inline TargetStats target_stats_from_json(const nlohmann::json& j)
{
  TargetStats s;
  s.names = j.at("names").get<std::vector<std::string>>();
  s.mean = j.at("mean").get<std::vector<double>>();
  s.stddev = j.at("std").get<std::vector<double>>();
  if (s.mean.size() != s.names.size() || s.stddev.size() != s.names.size())
    throw ParseError("target_stats: length mismatch");
  return s;
}

struct Checkpoint {
  Model model;
  std::optional<TargetStats> stats;
};

inline std::string checkpoint_to_string(Model& model, const std::optional<TargetStats>& stats)
{
  nlohmann::json j = model_to_json(model);
  if (stats)
    j["target_stats"] = target_stats_to_json(*stats);
  return j.dump();
}

inline Checkpoint checkpoint_from_string(const std::string& text)
{
  try {
    auto j = nlohmann::json::parse(text);
    Checkpoint c{model_from_json(j), std::nullopt};
    if (j.contains("target_stats"))
      c.stats = target_stats_from_json(j["target_stats"]);
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError(std::string("checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, Model& model,
                            const std::optional<TargetStats>& stats = std::nullopt)
{
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write checkpoint '" + path + "'");
  out << checkpoint_to_string(model, stats) << '\n';
}

inline Checkpoint load_checkpoint(const std::string& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return checkpoint_from_string(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.what());
  }
}

} // namespace ginigcn
