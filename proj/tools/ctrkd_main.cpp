#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ctrkd/experiment.hpp"
#include "ctrkd/format.hpp"
#include "ctrkd/synthetic.hpp"

using namespace ctrkd;
using experiment::ExperimentConfig;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw experiment::ConfigError("cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;

  ExperimentConfig load() const { return ExperimentConfig::parse(slurp(config_path), overrides); }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config_path, "experiment config file")->required();
  cmd->add_option("--set", c.overrides, "override a config value, key=value (repeatable)");
}

void print_rows(const std::vector<experiment::ResultRow>& rows) {
  std::cout << experiment::rows_csv(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CTR model training with knowledge distillation"};
  app.require_subcommand(1);

  Common common;
  auto* preprocess = app.add_subcommand("preprocess", "build vocabulary and splits, write stats");
  auto* train_teacher = app.add_subcommand("train-teacher", "train the models in teacher.models");
  auto* make_ensemble = app.add_subcommand("make-ensemble", "train the ensemble.* teachers");
  auto* distill_cmd = app.add_subcommand("distill", "train the student against its teachers");
  auto* evaluate = app.add_subcommand("evaluate", "score all checkpoints on the test split");
  auto* report = app.add_subcommand("report", "aggregate results.csv into report tables");
  auto* run = app.add_subcommand("run", "all stages requested by the config, in order");
  for (auto* cmd : {preprocess, train_teacher, make_ensemble, distill_cmd, evaluate, report, run}) {
    add_common(cmd, common);
  }

  std::string recipe_format;
  auto* recipe = app.add_subcommand("recipe", "print the default config lines for a dataset");
  recipe->add_option("format", recipe_format, "criteo, avazu or synthetic")->required();

  features::SyntheticSpec synth_spec;
  std::string synth_out;
  auto* synth = app.add_subcommand("synth", "write synthetic click data in Criteo layout");
  synth->add_option("-o,--output", synth_out, "output file (.gz compresses)")->required();
  synth->add_option("--samples", synth_spec.samples);
  synth->add_option("--fields", synth_spec.fields);
  synth->add_option("--vocab", synth_spec.vocab_per_field);
  synth->add_option("--numeric", synth_spec.numeric_fields);
  synth->add_option("--seed", synth_spec.seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*recipe) {
      std::cout << experiment::recipe(recipe_format);
      return 0;
    }
    if (*synth) {
      const auto rows = features::synthetic_records(synth_spec);
      features::write_records(synth_out, rows, features::synthetic_schema(synth_spec));
      std::cerr << "wrote " << rows.size() << " rows to " << synth_out << "\n";
      return 0;
    }

    const auto config = common.load();
    if (*run) {
      const auto rep = experiment::run(config);
      std::cout << experiment::report_text(rep);
      return 0;
    }
    if (*report) {
      std::cout << experiment::report_text(experiment::report(config));
      return 0;
    }
    const auto data = experiment::preprocess(config);
    if (*preprocess) {
      std::cout << "train_rows = " << data.stats.train_rows << "\n"
                << "val_rows = " << data.stats.val_rows << "\n"
                << "test_rows = " << data.stats.test_rows << "\n"
                << "vocab_sizes = " << join(data.stats.vocab_sizes) << "\n";
    } else if (*train_teacher) {
      for (const auto& p : experiment::train_teachers(config, data)) std::cout << p.string() << "\n";
    } else if (*make_ensemble) {
      for (const auto& p : experiment::make_ensemble(config, data)) std::cout << p.string() << "\n";
    } else if (*distill_cmd) {
      for (const auto& p : experiment::distill_students(config, data)) {
        std::cout << p.string() << "\n";
      }
    } else if (*evaluate) {
      print_rows(experiment::evaluate(config, data));
    }
    return 0;
  } catch (const experiment::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
