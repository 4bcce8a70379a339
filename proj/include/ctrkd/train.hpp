#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ctrkd/distill.hpp"
#include "ctrkd/features.hpp"
#include "ctrkd/models.hpp"

namespace ctrkd::train {

using features::EncodedDataset;
using models::Model;
using models::ModelSpec;

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by metrics that are undefined for the given input (e.g. AUC with one class).
class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  // One bias-corrected update from the gradients currently held by the
  // parameters; gradients are cleared afterwards.
  void step();

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }
  std::size_t num_params() const { return params_.size(); }
  const std::vector<double>& first_moment(std::size_t i) const { return m_.at(i); }
  const std::vector<double>& second_moment(std::size_t i) const { return v_.at(i); }
  // Restores moments and step counter, e.g. from a checkpoint.
  void set_state(std::uint64_t steps, std::vector<std::vector<double>> m,
                 std::vector<std::vector<double>> v);

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  AdamConfig config_;
  std::uint64_t t_ = 0;
};

// Rank-based ROC AUC; tied scores share their average rank.
double auc(std::span<const double> scores, std::span<const double> labels);
// Mean binary cross-entropy of probabilities clamped to [eps, 1-eps].
double logloss(std::span<const double> probs, std::span<const double> labels);

enum class MonitorMode { val_auc_max, kd_loss_min };
std::string_view to_string(MonitorMode mode);
MonitorMode parse_monitor_mode(std::string_view text);

enum class StopDecision { keep_going, stop };

// Patience-based early stopping. When constructed with tensors, their values
// are snapshotted at every improvement and written back on stop.
class EarlyStopMonitor {
 public:
  explicit EarlyStopMonitor(MonitorMode mode, std::size_t patience = 3,
                            std::vector<Tensor> tracked = {});

  StopDecision update(double value);
  void restore_best();

  MonitorMode mode() const { return mode_; }
  std::size_t patience() const { return patience_; }
  bool has_best() const { return best_epoch_ != 0; }
  double best_value() const { return best_value_; }
  std::size_t best_epoch() const { return best_epoch_; }  // 1-based, 0 = none yet
  std::size_t epochs_since_best() const { return since_best_; }
  std::size_t epochs_seen() const { return epochs_; }
  bool stopped() const { return stopped_; }

 private:
  bool improves(double value) const;

  MonitorMode mode_;
  std::size_t patience_;
  std::vector<Tensor> tracked_;
  std::vector<std::vector<double>> snapshot_;
  double best_value_ = std::numeric_limits<double>::quiet_NaN();
  std::size_t best_epoch_ = 0;
  std::size_t since_best_ = 0;
  std::size_t epochs_ = 0;
  bool stopped_ = false;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double monitor_value = 0.0;
  double seconds = 0.0;
  bool stopped = false;
};

struct TrainRecord {
  std::vector<EpochRecord> epochs;

  bool empty() const { return epochs.empty(); }
  // epoch,loss,monitor_value,seconds,stopped
  std::string to_csv() const;
  // Equality on everything except wall time.
  bool same_trajectory(const TrainRecord& other) const;
};

struct StepInfo {
  std::size_t epoch = 0;  // 1-based
  std::size_t step = 0;   // 0-based within the epoch
  double loss = 0.0;
};

struct TrainHyper {
  double lr = 1e-3;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 100;
  std::size_t patience = 3;
  double l2 = 0.0;  // applied to embedding tables only
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> data_seed;  // batch order; defaults to seed
  bool shuffle = true;
  std::size_t eval_batch_size = 4096;
  // Called after every optimizer step.
  std::function<void(const StepInfo&, const Model&)> on_step;

  std::uint64_t order_seed() const { return data_seed.value_or(seed); }
};

struct DataSplits {
  const EncodedDataset* train = nullptr;
  const EncodedDataset* val = nullptr;
};

// Seed streams derived from TrainHyper::seed.
std::uint64_t init_seed(const TrainHyper& hyper);
std::uint64_t dropout_seed(const TrainHyper& hyper);
std::uint64_t epoch_seed(const TrainHyper& hyper, std::size_t epoch);

std::vector<double> predict_logits(const Model& model, const EncodedDataset& data,
                                   std::size_t batch_size = 4096);
std::vector<double> predict_probs(const Model& model, const EncodedDataset& data,
                                  std::size_t batch_size = 4096);

struct Metrics {
  double auc = 0.0;
  double logloss = 0.0;
};
Metrics evaluate(const Model& model, const EncodedDataset& data, std::size_t batch_size = 4096);
Metrics evaluate_probs(std::span<const double> probs, const EncodedDataset& data);

// Adds d/dE of l2 * ||E||^2 to every regularized parameter's gradient.
void add_l2_gradient(Model& model, double l2);

struct TeacherResult {
  Model model;
  TrainRecord record;
  std::size_t best_epoch = 0;
};

// Minimizes BCE (+ L2 on embeddings) with early stopping on validation AUC;
// returns the best-epoch parameters. Trains `model` in place when given.
TeacherResult train_teacher(const ModelSpec& spec, const DataSplits& data, const TrainHyper& hyper);
TeacherResult train_teacher(Model model, const DataSplits& data, const TrainHyper& hyper);

struct StudentOptions {
  MonitorMode monitor = MonitorMode::kd_loss_min;
  // Share of training rows held aside (inputs only) to measure the KD loss
  // for kd_loss_min stopping.
  double monitor_fraction = 0.05;
  // Append the validation rows to the training set.
  bool merge_validation = false;
};

struct StudentResult {
  Model student;
  std::optional<distill::TeacherGate> gate;
  std::vector<distill::HintProjector> projectors;
  TrainRecord record;
  std::size_t best_epoch = 0;
};

// Two-phase scheme: teachers are fixed, the student (with gate and hint
// projectors when configured) learns from labels and teacher outputs.
StudentResult train_student_pretrain(const ModelSpec& student_spec,
                                     std::span<const Model* const> teachers,
                                     const distill::DistillConfig& config, const DataSplits& data,
                                     const TrainHyper& hyper, const StudentOptions& options = {});

struct CotrainResult {
  Model teacher;
  Model student;
  std::vector<distill::HintProjector> projectors;
  TrainRecord teacher_record;
  TrainRecord student_record;
  std::size_t teacher_best_epoch = 0;
  std::size_t student_best_epoch = 0;
};

struct CotrainHooks {
  // After the teacher's and the student's step on the same batch.
  std::function<void(const StepInfo&, const Model& teacher, const Model& student)> on_step;
};

// Joint scheme with one teacher: on each batch the teacher steps on its own
// loss, then the student steps using the teacher outputs of that batch, detached.
// Batch order, dropout and stopping of the teacher follow teacher_hyper exactly
// as in train_teacher. The student stops on the KD loss over validation inputs
// (labels unused) by default.
CotrainResult train_student_cotrain(const ModelSpec& teacher_spec, const ModelSpec& student_spec,
                                    const distill::DistillConfig& config, const DataSplits& data,
                                    const TrainHyper& teacher_hyper,
                                    const TrainHyper& student_hyper,
                                    MonitorMode student_monitor = MonitorMode::kd_loss_min,
                                    const CotrainHooks& hooks = {});

}  // namespace ctrkd::train
