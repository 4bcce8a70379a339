#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ctrkd/distill.hpp"
#include "ctrkd/features.hpp"
#include "ctrkd/models.hpp"
#include "ctrkd/synthetic.hpp"
#include "ctrkd/train.hpp"

namespace ctrkd::experiment {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct DataConfig {
  std::string source = "synthetic";  // synthetic | file
  std::string path;
  std::string format = "criteo";     // criteo | avazu
  std::string split = "random";      // random | sequential
  double train_ratio = 0.8;
  double val_ratio = 0.1;
  double test_ratio = 0.1;
  std::size_t num_days = 7;    // criteo files carry no date: rows are cut into this many days
  std::size_t train_days = 5;
  std::uint64_t split_seed = 2019;
  std::size_t min_count = 1;
  std::size_t max_rows = 0;    // 0 = all
  std::size_t embedding_dim = 8;
  features::SyntheticSpec synthetic;
};

struct EnsembleConfig {
  std::string mode = "M";  // M: architectures/seeds, D: data partitions
  std::vector<std::string> models;
  std::size_t copies = 1;      // M: seeds per model
  std::size_t partitions = 3;  // D: teachers on distinct train/val re-splits
  std::string average = "metric";  // metric | prediction, for the w/o-KD ensemble row
};

struct DistillSection {
  distill::DistillConfig config;
  train::MonitorMode monitor = train::MonitorMode::kd_loss_min;
  double monitor_fraction = 0.05;
  bool merge_validation = false;
  bool baseline = true;  // also train the student without distillation
};

struct ExperimentConfig {
  DataConfig data;
  std::map<std::string, models::ModelSpec> models;  // name -> architecture
  std::map<std::string, std::string> model_arch;    // name -> preset it was built from
  std::vector<std::string> teachers;                // teacher.models
  EnsembleConfig ensemble;
  std::string student;                              // student.model
  DistillSection distill;
  train::TrainHyper train;
  std::vector<std::uint64_t> seeds{1};
  std::filesystem::path output_dir = "ctrkd_out";
  std::string name = "experiment";
  std::string baseline;  // report.baseline; defaults to the plain student

  // Parses `section.key = value` lines; `#` starts a comment. Unknown keys,
  // duplicates and malformed values are rejected with the line number.
  static ExperimentConfig parse(std::string_view text);
  static ExperimentConfig load(const std::filesystem::path& path);
  // Applies `key=value` overrides on top of the text, then validates.
  static ExperimentConfig parse(std::string_view text, const std::vector<std::string>& overrides);

  // Every key with its resolved value, sorted by key.
  std::string serialize() const;
  void validate() const;

  // Spec for a model name: explicit model.<name>.* entries, or the preset of
  // that name with the data recipe's embedding size.
  models::ModelSpec model_spec(const std::string& name) const;
  std::string baseline_label() const;
};

// Recipe defaults for a dataset format: criteo (threshold 10, dim 20,
// 7 row-order days, last two split into val/test), avazu (threshold 5, dim 40,
// random 8:1:1), synthetic.
std::string recipe(std::string_view format);

}  // namespace ctrkd::experiment
