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


// ginigcn command-line tool: training, cross-validation, attribution and
// sparsity reports over line-delimited molecule datasets.
//
// Exit codes: 0 success, 1 usage or validation error, 2 runtime failure
// (including training divergence).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <ginigcn/ginigcn.hpp>

#include "run_config.hpp"
#include "selftest.hpp"

namespace fs = std::filesystem;
using namespace ginigcn;
using ginigcn::cli::ConfigError;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kReportFormatVersion = 1;

struct GlobalOptions {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

std::string format_double(double v)
{
  if (std::isnan(v))
    return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_file(const fs::path& path, const std::string& content)
{
  if (path.has_parent_path())
    fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write '" + path.string() + "'");
  out << content;
  if (!out)
    throw std::runtime_error("write failed for '" + path.string() + "'");
}

cli::RunConfig load_config(const GlobalOptions& g)
{
  if (g.config.empty())
    throw ConfigError("--config PATH is required");
  cli::RunConfig rc = cli::load_run_config(g.config);
  if (g.seed) {
    rc.model.seed = *g.seed;
    rc.train.seed = *g.seed;
  }
  if (!g.out.empty())
    rc.output_dir = g.out;
  return rc;
}

Checkpoint load_checkpoint_checked(const std::string& path)
{
  if (!fs::exists(path))
    throw ConfigError("checkpoint not found: '" + path + "'");
  try {
    return load_checkpoint(path);
  } catch (const ParseError& e) {
    throw ConfigError(std::string("corrupted checkpoint: ") + e.what());
  }
}

std::size_t resolve_target(const Model& model, const std::string& name)
{
  if (name.empty())
    return 0;
  try {
    return model.target_index(name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::vector<std::string> split_list(const std::string& s)
{
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty())
      out.push_back(item);
  return out;
}

// ---------------------------------------------------------------------------
// train

int cmd_train(const GlobalOptions& g)
{
  const cli::RunConfig rc = load_config(g);
  const Dataset data = cli::load_dataset_checked(rc.dataset);
  cli::check_targets_present(data, rc.model.targets, rc.dataset);
  Dataset validation;
  if (rc.validation_dataset) {
    validation = cli::load_dataset_checked(*rc.validation_dataset);
    cli::check_targets_present(validation, rc.model.targets, *rc.validation_dataset);
  }

  Model model = init_model(rc.model);
  const TrainResult res = train(model, data, rc.train, validation);

  const fs::path out(rc.output_dir);
  write_file(out / "checkpoint.json", checkpoint_to_string(model, res.stats) + "\n");
  std::ostringstream table;
  res.history.write_table(table);
  write_file(out / "history.tsv", table.str());

  const auto& last = res.history.epochs.back();
  std::cout << "epochs\t" << last.epoch << "\n"
            << "raw_loss\t" << format_double(last.raw_loss) << "\n"
            << "reg_loss\t" << format_double(last.regularized_loss) << "\n"
            << "g_mean\t" << format_double(last.g_mean_block) << "\n"
            << "g_max\t" << format_double(last.g_max_block) << "\n"
            << "checkpoint\t" << (out / "checkpoint.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// crossval

int cmd_crossval(const GlobalOptions& g, std::size_t folds)
{
  if (folds < 2)
    throw ConfigError("--folds must be at least 2");
  const cli::RunConfig rc = load_config(g);
  const Dataset data = cli::load_dataset_checked(rc.dataset);
  cli::check_targets_present(data, rc.model.targets, rc.dataset);
  if (data.size() < folds)
    throw ConfigError("dataset has " + std::to_string(data.size()) + " molecules, fewer than " +
                      std::to_string(folds) + " folds");

  const CrossValResult cv = cross_validate(data, rc.model, rc.train, folds);
  std::ostringstream t;
  t << "target\tmean_mae";
  for (std::size_t f = 0; f < folds; ++f)
    t << "\tfold_" << (f + 1);
  t << "\n";
  for (std::size_t j = 0; j < cv.targets.size(); ++j) {
    t << cv.targets[j] << '\t' << format_double(cv.mean_mae[j]);
    for (const auto& row : cv.fold_mae)
      t << '\t' << format_double(row[j]);
    t << "\n";
  }
  std::cout << t.str();
  write_file(fs::path(rc.output_dir) / "crossval.tsv", t.str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// explain

nlohmann::json top_representation_json(const Model& model, std::size_t target)
{
  nlohmann::json arr = nlohmann::json::array();
  const Tensor& w = model.out_weight->value;
  bool any = false;
  for (std::size_t i = 0; i < w.rows; ++i)
    any = any || w(i, target) != 0.0;
  if (!any)
    return arr;
  const std::size_t h = model.config.conv_hidden;
  for (std::size_t i : top_representations(model, target, 0.9))
    arr.push_back({{"index", i},
                   {"block", i < h ? "mean" : "max"},
                   {"rep", i < h ? i : i - h},
                   {"weight", w(i, target)}});
  return arr;
}

int cmd_explain(const GlobalOptions& g, const std::string& checkpoint, const std::string& dataset,
                const std::string& target, const std::string& ids)
{
  const Checkpoint ck = load_checkpoint_checked(checkpoint);
  if (ck.model.config.variant != Variant::explainable)
    throw ConfigError("explain needs an explainable-variant checkpoint");
  const std::size_t j = resolve_target(ck.model, target);
  const Dataset data = cli::load_dataset_checked(dataset);

  std::vector<const MolecularGraph*> chosen;
  if (ids.empty()) {
    for (const auto& m : data)
      chosen.push_back(&m);
  } else {
    for (const auto& id : split_list(ids)) {
      const MolecularGraph* hit = nullptr;
      for (const auto& m : data)
        if (m.id == id)
          hit = &m;
      if (!hit)
        throw ConfigError("unknown molecule id '" + id + "'");
      chosen.push_back(hit);
    }
  }

  const nlohmann::json top = top_representation_json(ck.model, j);
  for (const auto* m : chosen) {
    nlohmann::json doc = attribution_to_json(per_atom_map(ck.model, *m, j));
    if (ck.stats)
      doc["prediction_original_units"] = ck.stats->to_original(j, doc["prediction"].get<double>());
    doc["top_representations"] = top;
    doc["top_representations_mass_fraction"] = 0.9;
    if (g.out.empty())
      std::cout << doc.dump() << "\n";
    else
      write_file(fs::path(g.out) / ("attribution_" + m->id + ".json"), doc.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gini-report

int cmd_gini_report(const GlobalOptions& g, const std::string& checkpoint)
{
  const Checkpoint ck = load_checkpoint_checked(checkpoint);
  const Model& m = ck.model;
  nlohmann::json doc;
  doc["format_version"] = kReportFormatVersion;
  doc["variant"] = variant_name(m.config.variant);
  const auto [gm, gx] = output_block_gini(m);
  doc["g_mean_block"] = std::isnan(gm) ? nlohmann::json(nullptr) : nlohmann::json(gm);
  doc["g_max_block"] = std::isnan(gx) ? nlohmann::json(nullptr) : nlohmann::json(gx);
  doc["g_effective"] =
    std::isnan(gm) ? nlohmann::json(nullptr) : nlohmann::json(std::sqrt(gm * gx));
  doc["g_layer"] = gini(std::span<const double>(m.out_weight->value.data)).value;
  doc["targets"] = nlohmann::json::array();
  for (std::size_t j = 0; j < m.config.targets.size(); ++j) {
    const auto top = top_representation_json(m, j);
    doc["targets"].push_back({{"target", m.config.targets[j]},
                              {"concentration_90", top.size()},
                              {"weights", m.out_weight->value.rows}});
  }
  std::cout << doc.dump(2) << "\n";
  if (!g.out.empty())
    write_file(fs::path(g.out) / "gini_report.json", doc.dump(2) + "\n");
  return kExitOk;
}

// ---------------------------------------------------------------------------
// fukui-compare

int cmd_fukui_compare(const GlobalOptions& g, const std::string& checkpoint,
                      const std::string& dataset, const std::string& target,
                      const std::string& polarity_name)
{
  const Checkpoint ck = load_checkpoint_checked(checkpoint);
  if (ck.model.config.variant != Variant::explainable)
    throw ConfigError("fukui-compare needs an explainable-variant checkpoint");
  const std::size_t j = resolve_target(ck.model, target);
  Polarity polarity;
  try {
    polarity = polarity_from_name(polarity_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const Dataset data = cli::load_dataset_checked(dataset);
  for (const auto& m : data)
    if (!m.fukui)
      throw ConfigError("record '" + m.id + "' has no fukui data");

  FukuiComparison cmp;
  try {
    cmp = fukui_compare(ck.model, data, j, polarity);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  std::ostringstream t;
  t << "molecule_id\tspearman\n";
  for (std::size_t i = 0; i < cmp.ids.size(); ++i)
    t << cmp.ids[i] << '\t' << format_double(cmp.spearman[i]) << "\n";
  std::cout << t.str();
  std::cerr << "mean spearman " << format_double(cmp.mean) << " over " << cmp.ids.size()
            << " molecules\n";
  if (!g.out.empty()) {
    write_file(fs::path(g.out) / "fukui_compare.tsv", t.str());
    nlohmann::json summary{{"format_version", kReportFormatVersion},
                           {"target", ck.model.config.targets[j]},
                           {"polarity", polarity_name},
                           {"molecules", cmp.ids.size()},
                           {"mean_spearman", cmp.mean}};
    write_file(fs::path(g.out) / "fukui_summary.json", summary.dump(2) + "\n");
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// toydata

int cmd_toydata(const GlobalOptions& g, std::size_t num, std::size_t max_atoms,
                const std::string& targets, const std::string& output)
{
  ToySpec spec;
  spec.num_molecules = num;
  spec.max_heavy_atoms = max_atoms;
  spec.seed = g.seed.value_or(0);
  if (!targets.empty()) {
    spec.targets.clear();
    try {
      for (const auto& t : split_list(targets))
        spec.targets.push_back(planted_from_name(t));
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
  }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  const std::string text = generate(spec);
  if (output.empty())
    std::cout << text;
  else
    write_file(output, text);
  return kExitOk;
}

} // namespace

int main(int argc, char** argv)
{
  CLI::App app{"Sparse explainable graph convolution models for molecular properties"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  app.add_option("--config", g.config, "Run configuration (JSON)");
  app.add_option("--out", g.out, "Output directory");
  auto* seed_opt = app.add_option("--seed", seed, "Seed overriding every configured seed");

  auto* train_cmd = app.add_subcommand("train", "Train a model from a run configuration");

  std::size_t folds = 5;
  auto* cv_cmd = app.add_subcommand("crossval", "k-fold cross-validated MAE per target");
  cv_cmd->add_option("--folds", folds, "Number of folds (>= 2)")->capture_default_str();

  std::string checkpoint, dataset, target, ids, polarity = "f_minus";
  auto* explain_cmd = app.add_subcommand("explain", "Per-molecule attribution documents");
  explain_cmd->add_option("--checkpoint", checkpoint)->required();
  explain_cmd->add_option("--dataset", dataset)->required();
  explain_cmd->add_option("--target", target, "Target name (default: first)");
  explain_cmd->add_option("--ids", ids, "Comma-separated molecule ids (default: all)");

  auto* report_cmd = app.add_subcommand("gini-report", "Output-layer sparsity report");
  report_cmd->add_option("--checkpoint", checkpoint)->required();

  auto* fukui_cmd = app.add_subcommand("fukui-compare", "Spearman of atom scores vs Fukui values");
  fukui_cmd->add_option("--checkpoint", checkpoint)->required();
  fukui_cmd->add_option("--dataset", dataset)->required();
  fukui_cmd->add_option("--target", target, "Target name (default: first)");
  fukui_cmd->add_option("--polarity", polarity, "f_minus or f_plus")->capture_default_str();

  auto* selftest_cmd = app.add_subcommand("selftest", "Run the built-in invariant checks");

  std::size_t num = 100, max_atoms = 9;
  std::string toy_targets, toy_output;
  auto* toy_cmd = app.add_subcommand("toydata", "Generate a synthetic dataset");
  toy_cmd->add_option("--num", num, "Number of molecules")->capture_default_str();
  toy_cmd->add_option("--max-atoms", max_atoms, "Maximum heavy atoms")->capture_default_str();
  toy_cmd->add_option("--targets", toy_targets, "Comma-separated planted targets");
  toy_cmd->add_option("--output", toy_output, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (seed_opt->count() > 0)
    g.seed = seed;

  try {
    if (*train_cmd)
      return cmd_train(g);
    if (*cv_cmd)
      return cmd_crossval(g, folds);
    if (*explain_cmd)
      return cmd_explain(g, checkpoint, dataset, target, ids);
    if (*report_cmd)
      return cmd_gini_report(g, checkpoint);
    if (*fukui_cmd)
      return cmd_fukui_compare(g, checkpoint, dataset, target, polarity);
    if (*selftest_cmd)
      return cli::run_selftest(std::cout) == 0 ? kExitOk : kExitRuntime;
    if (*toy_cmd)
      return cmd_toydata(g, num, max_atoms, toy_targets, toy_output);
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: training diverged: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
