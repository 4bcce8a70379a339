#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctrkd/config.hpp"
#include "ctrkd/features.hpp"
#include "ctrkd/report.hpp"

namespace ctrkd::experiment {

// Failure inside a pipeline stage; what() starts with "[stage] ".
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& message)
      : std::runtime_error("[" + stage + "] " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

struct ExperimentData {
  features::EncodedDataset train;
  features::EncodedDataset val;
  features::EncodedDataset test;
  std::optional<features::Vocabulary> vocabulary;  // absent for synthetic data
  features::PipelineStats stats;

  std::optional<std::uint64_t> fingerprint() const;
};

// Deterministic given the config: reading, splitting, vocabulary, encoding.
ExperimentData load_data(const ExperimentConfig& config);

std::filesystem::path checkpoint_path(const ExperimentConfig& config, const std::string& label,
                                      std::uint64_t seed);
std::filesystem::path record_path(const ExperimentConfig& config, const std::string& label,
                                  std::uint64_t seed);

// Worker count for independent seeds, from CTRKD_WORKERS (default 1).
std::size_t worker_count();

// Checkpoint labels produced by make_ensemble for this config.
std::vector<std::string> ensemble_labels(const ExperimentConfig& config);
// Teacher checkpoint labels named by distill.teachers ("ensemble" expands to
// the ensemble labels, a bare model name means "teacher.<name>").
std::vector<std::string> distill_teacher_labels(const ExperimentConfig& config);

// Mode D: teacher k's fresh train/val cut of the pooled train+val rows
// (indices into concat(train, val)); validation keeps its original size.
struct Partition {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
Partition ensemble_partition(const ExperimentConfig& config, const ExperimentData& data,
                             std::size_t k);

// Stages. Each writes under experiment.output_dir and throws StageError.
ExperimentData preprocess(const ExperimentConfig& config);
std::vector<std::filesystem::path> train_teachers(const ExperimentConfig& config,
                                                  const ExperimentData& data);
std::vector<std::filesystem::path> make_ensemble(const ExperimentConfig& config,
                                                 const ExperimentData& data);
std::vector<std::filesystem::path> distill_students(const ExperimentConfig& config,
                                                    const ExperimentData& data);
// Scores every checkpoint on the test split (plus the averaged ensemble row)
// and writes results.csv.
std::vector<ResultRow> evaluate(const ExperimentConfig& config, const ExperimentData& data);
// Reads results.csv and writes report.txt / report.csv.
ExperimentReport report(const ExperimentConfig& config);

// preprocess -> teachers -> ensemble -> distill -> evaluate -> report, skipping
// stages the config does not ask for. On failure a FAILED marker naming the
// stage is left in the output directory.
ExperimentReport run(const ExperimentConfig& config);

}  // namespace ctrkd::experiment
