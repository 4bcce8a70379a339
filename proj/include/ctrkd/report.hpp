#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctrkd::experiment {

struct ResultRow {
  std::string model;
  std::uint64_t seed = 0;
  double auc = 0.0;
  double logloss = 0.0;
  std::size_t best_epoch = 0;
  double seconds = 0.0;
};

struct Aggregate {
  std::string model;
  std::size_t runs = 0;
  double auc_mean = 0.0;
  double auc_std = 0.0;  // sample standard deviation, 0 for a single run
  double logloss_mean = 0.0;
  double logloss_std = 0.0;
  double auc_delta_permille = 0.0;      // (candidate - baseline) * 1000
  double logloss_delta_permille = 0.0;
};

struct ExperimentReport {
  std::string baseline;
  std::vector<ResultRow> rows;
  std::vector<Aggregate> aggregates;  // one per model, in first-appearance order

  const Aggregate& aggregate(const std::string& model) const;
};

double mean(const std::vector<double>& xs);
double sample_std(const std::vector<double>& xs);

// Aggregates rows per model and computes per-mille deltas against the
// baseline model's means. Throws std::invalid_argument for an unknown baseline.
ExperimentReport build_report(std::vector<ResultRow> rows, const std::string& baseline);

// Aligned plain-text table: per-seed rows, then mean +- std with deltas.
std::string report_text(const ExperimentReport& report);
// model,seed,auc,logloss,best_epoch,seconds rows followed by aggregate rows
// (seed column "mean") with delta columns.
std::string report_csv(const ExperimentReport& report);

std::string rows_csv(const std::vector<ResultRow>& rows);
std::vector<ResultRow> parse_rows_csv(std::string_view text);

}  // namespace ctrkd::experiment
