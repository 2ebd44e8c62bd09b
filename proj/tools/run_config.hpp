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

// Run configuration document for the command-line tool.
//
// {
//   "dataset": "data/train.jsonl",
//   "validation_dataset": "data/valid.jsonl",   (optional)
//   "output_dir": "runs/toy",
//   "model": {"num_conv_layers": 3, "conv_hidden": 64, "intermediate_dim": 128,
//             "targets": ["homo"], "variant": "explainable", "seed": 0},
//   "train": {"epochs": 100, "batch_size": 32, "learning_rate": 0.001,
//             "adam_beta1": 0.9, "adam_beta2": 0.999, "adam_epsilon": 1e-8,
//             "gini_m": 10, "g_floor": 1e-6, "seed": 0}
// }
//
// Relative paths resolve against the directory holding the config file.

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include <ginigcn/model.hpp>
#include <ginigcn/training.hpp>

namespace ginigcn::cli {

/// Invalid configuration or arguments; maps to exit code 1.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string dataset;
  std::optional<std::string> validation_dataset;
  std::string output_dir = ".";
  ModelConfig model;
  TrainConfig train;
};

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                                const std::string& where)
{
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k))
      throw ConfigError("config: unknown key '" + k + "' in " + where);
}

inline std::string resolve(const std::filesystem::path& base, const std::string& p)
{
  std::filesystem::path path(p);
  if (path.is_absolute() || base.empty())
    return path.string();
  return (base / path).lexically_normal().string();
}

} // namespace detail

inline RunConfig parse_run_config(const nlohmann::json& j, const std::filesystem::path& base)
{
  if (!j.is_object())
    throw ConfigError("config: top level must be an object");
  detail::reject_unknown_keys(j, {"dataset", "validation_dataset", "output_dir", "model", "train"},
                              "top level");
  RunConfig rc;
  try {
    if (!j.contains("dataset"))
      throw ConfigError("config: missing 'dataset'");
    rc.dataset = detail::resolve(base, j.at("dataset").get<std::string>());
    if (j.contains("validation_dataset"))
      rc.validation_dataset = detail::resolve(base, j["validation_dataset"].get<std::string>());
    if (j.contains("output_dir"))
      rc.output_dir = detail::resolve(base, j["output_dir"].get<std::string>());

    if (!j.contains("model"))
      throw ConfigError("config: missing 'model' section");
    const auto& m = j.at("model");
    detail::reject_unknown_keys(
      m, {"num_conv_layers", "conv_hidden", "intermediate_dim", "targets", "variant", "seed"},
      "'model'");
    rc.model = config_from_json(m);

    if (j.contains("train")) {
      const auto& t = j["train"];
      detail::reject_unknown_keys(t,
                                  {"epochs", "batch_size", "learning_rate", "adam_beta1",
                                   "adam_beta2", "adam_epsilon", "gini_m", "g_floor", "seed"},
                                  "'train'");
      TrainConfig& tc = rc.train;
      tc.epochs = t.value("epochs", tc.epochs);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.adam_beta1 = t.value("adam_beta1", tc.adam_beta1);
      tc.adam_beta2 = t.value("adam_beta2", tc.adam_beta2);
      tc.adam_epsilon = t.value("adam_epsilon", tc.adam_epsilon);
      tc.gini.m = t.value("gini_m", tc.gini.m);
      tc.gini.g_floor = t.value("g_floor", tc.gini.g_floor);
      tc.seed = t.value("seed", tc.seed);
    }
    rc.train.validate();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (rc.train.gini.m > 0.0 && rc.model.variant != Variant::explainable)
    throw ConfigError("Gini requires explainable variant");
  return rc;
}

inline RunConfig load_run_config(const std::string& path)
{
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ss.str());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_run_config(j, std::filesystem::path(path).parent_path());
}

/// Loads a dataset named by a config, mapping absence and parse failures to
/// ConfigError so that both surface as validation errors.
inline Dataset load_dataset_checked(const std::string& path)
{
  if (!std::filesystem::exists(path))
    throw ConfigError("dataset not found: '" + path + "'");
  try {
    return load_dataset(path);
  } catch (const ParseError& e) {
    throw ConfigError(e.what());
  }
}

/// Every configured target must be observed somewhere in the dataset.
inline void check_targets_present(const Dataset& data, const std::vector<std::string>& targets,
                                  const std::string& path)
{
  for (const auto& t : targets) {
    bool found = false;
    for (const auto& g : data)
      found = found || g.targets.count(t);
    if (!found)
      throw ConfigError("target '" + t + "' does not occur in dataset '" + path + "'");
  }
}

} // namespace ginigcn::cli
