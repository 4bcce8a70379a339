#include "ctrkd/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <cmath>
#include <numeric>

#include "ctrkd/format.hpp"

namespace ctrkd::train {

using features::Batch;
using features::BatchStream;
using features::make_batch;

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].size() > 0 && params_[i].grad().empty()) {
      throw std::logic_error("adam step: parameter " + std::to_string(i) + " has no gradient");
    }
  }
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto w = params_[i].values();
    auto g = params_[i].grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double m_hat = m[k] / c1;
      const double v_hat = v[k] / c2;
      w[k] -= config_.lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
    params_[i].zero_grad();
  }
}

void Adam::set_state(std::uint64_t steps, std::vector<std::vector<double>> m,
                     std::vector<std::vector<double>> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw DimensionError("adam state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].size() || v[i].size() != params_[i].size()) {
      throw DimensionError("adam moment " + std::to_string(i) + " has the wrong size");
    }
  }
  t_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

// ---------------------------------------------------------------------------
// Metrics

double auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc: size mismatch");
  std::size_t pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0.0 && labels[i] != 1.0) throw MetricError("auc: labels must be 0 or 1");
    if (std::isnan(scores[i])) throw MetricError("auc: NaN score");
    pos += labels[i] == 1.0;
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw MetricError("auc is undefined unless both classes are present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1.0) rank_sum += avg_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos), n = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double logloss(std::span<const double> probs, std::span<const double> labels) {
  return distill::cross_entropy(labels, probs);
}

// ---------------------------------------------------------------------------
// Early stopping

std::string_view to_string(MonitorMode mode) {
  return mode == MonitorMode::val_auc_max ? "val_auc_max" : "kd_loss_min";
}

MonitorMode parse_monitor_mode(std::string_view text) {
  if (text == "val_auc_max") return MonitorMode::val_auc_max;
  if (text == "kd_loss_min") return MonitorMode::kd_loss_min;
  throw std::invalid_argument("unknown monitor mode '" + std::string(text) + "'");
}

EarlyStopMonitor::EarlyStopMonitor(MonitorMode mode, std::size_t patience,
                                   std::vector<Tensor> tracked)
    : mode_(mode), patience_(patience), tracked_(std::move(tracked)) {
  if (patience_ == 0) throw std::invalid_argument("patience must be at least 1");
}

bool EarlyStopMonitor::improves(double value) const {
  if (std::isnan(value)) return false;
  if (best_epoch_ == 0) return true;
  return mode_ == MonitorMode::val_auc_max ? value > best_value_ : value < best_value_;
}

StopDecision EarlyStopMonitor::update(double value) {
  if (stopped_) return StopDecision::stop;
  ++epochs_;
  if (improves(value)) {
    best_value_ = value;
    best_epoch_ = epochs_;
    since_best_ = 0;
    snapshot_.clear();
    for (const auto& t : tracked_) snapshot_.emplace_back(t.values().begin(), t.values().end());
    return StopDecision::keep_going;
  }
  if (++since_best_ >= patience_) {
    stopped_ = true;
    restore_best();
    return StopDecision::stop;
  }
  return StopDecision::keep_going;
}

void EarlyStopMonitor::restore_best() {
  if (snapshot_.empty()) return;
  for (std::size_t i = 0; i < tracked_.size(); ++i) {
    std::copy(snapshot_[i].begin(), snapshot_[i].end(), tracked_[i].values().begin());
  }
}

std::string TrainRecord::to_csv() const {
  std::string out = "epoch,loss,monitor_value,seconds,stopped\n";
  for (const auto& e : epochs) {
    out += std::to_string(e.epoch) + ',' + format_double(e.loss) + ',' +
           format_double(e.monitor_value) + ',' + format_double(e.seconds) + ',' +
           (e.stopped ? "1" : "0") + '\n';
  }
  return out;
}

bool TrainRecord::same_trajectory(const TrainRecord& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    const auto& a = epochs[i];
    const auto& b = other.epochs[i];
    if (a.epoch != b.epoch || a.stopped != b.stopped) return false;
    if (std::memcmp(&a.loss, &b.loss, sizeof(double)) != 0) return false;
    if (std::memcmp(&a.monitor_value, &b.monitor_value, sizeof(double)) != 0) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Shared helpers

std::uint64_t init_seed(const TrainHyper& hyper) { return derive_seed(hyper.seed, 0); }
std::uint64_t dropout_seed(const TrainHyper& hyper) { return derive_seed(hyper.seed, 2); }
std::uint64_t epoch_seed(const TrainHyper& hyper, std::size_t epoch) {
  return derive_seed(hyper.order_seed(), 1000 + epoch);
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <class Fn>
void for_each_chunk(const EncodedDataset& data, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw std::invalid_argument("evaluation batch size must be at least 1");
  std::vector<std::size_t> rows;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    rows.resize(end - begin);
    std::iota(rows.begin(), rows.end(), begin);
    fn(make_batch(data, rows, false));
  }
}

Tensor label_tensor(const Batch& batch) { return Tensor(Shape{batch.size}, batch.labels); }

void check_hyper(const TrainHyper& hyper) {
  if (hyper.batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  if (!(hyper.lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(hyper.l2 >= 0.0)) throw std::invalid_argument("l2 must be non-negative");
}

void check_finite(double loss, const char* who, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw TrainingError(std::string(who) + " diverged: loss " + format_double(loss) +
                        " at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
  }
}

// One BCE step of a model on a labeled batch; returns the forward outputs
// before the update.
models::ModelOutput supervised_step(Model& model, Adam& adam, const Batch& batch, double l2,
                                    Rng& dropout_rng, double& loss_out) {
  Tape tape;
  auto out = model.forward(tape, batch, true, dropout_rng);
  const Tensor loss = tape.cross_entropy(tape.sigmoid(out.logits), label_tensor(batch));
  loss_out = loss.item();
  tape.backward(loss);
  add_l2_gradient(model, l2);
  adam.step();
  return out;
}

double val_auc(const Model& model, const EncodedDataset& val, std::size_t batch_size) {
  return evaluate(model, val, batch_size).auc;
}

struct TeacherBatchOutputs {
  Tensor logits;              // [B, M], values only
  std::vector<Tensor> hints;  // per teacher [B, m_i], values only
};

// Builds the distillation term for one batch; teacher tensors must be detached.
class KdTerm {
 public:
  KdTerm(const distill::DistillConfig& config, distill::TeacherGate* gate,
         std::vector<distill::HintProjector>* projectors)
      : config_(config), gate_(gate), projectors_(projectors) {}

  Tensor operator()(Tape& tape, const models::ModelOutput& student,
                    const TeacherBatchOutputs& teachers) const {
    const std::size_t m = teachers.logits.dim(1);
    if (config_.method == distill::Method::soft_label) {
      const Tensor alpha = gate_ ? gate_->weights(tape, teachers.logits) : uniform(m);
      const Tensor target = distill::ensemble_teacher_logit(tape, teachers.logits, alpha);
      return distill::soft_label_loss(tape, target, student.logits, config_.tau);
    }
    if (m == 1) return distill::hint_loss(tape, teachers.hints[0], student.hint, (*projectors_)[0]);
    const std::size_t b = student.logits.size();
    std::vector<Tensor> per_teacher;
    for (std::size_t i = 0; i < m; ++i) {
      const Tensor l = distill::hint_loss_per_sample(tape, teachers.hints[i], student.hint,
                                                     (*projectors_)[i]);
      per_teacher.push_back(tape.reshape(l, Shape{b, 1}));
    }
    const Tensor stacked = tape.concat_cols(per_teacher);
    return tape.mean(distill::ensemble_teacher_logit(tape, stacked, uniform(m)));
  }

 private:
  static Tensor uniform(std::size_t m) {
    return Tensor(Shape{m}, std::vector<double>(m, 1.0 / static_cast<double>(m)));
  }

  const distill::DistillConfig& config_;
  distill::TeacherGate* gate_;
  std::vector<distill::HintProjector>* projectors_;
};

TeacherBatchOutputs run_teachers(std::span<const Model* const> teachers, const Batch& batch,
                                 bool want_hints) {
  TeacherBatchOutputs out;
  const std::size_t m = teachers.size();
  std::vector<double> z(batch.size * m);
  Rng unused(0);
  for (std::size_t t = 0; t < m; ++t) {
    Tape tape(false);
    const auto o = teachers[t]->forward(tape, batch, false, unused);
    auto v = o.logits.values();
    for (std::size_t i = 0; i < batch.size; ++i) z[i * m + t] = v[i];
    if (want_hints) out.hints.push_back(o.hint.detach());
  }
  out.logits = Tensor(Shape{batch.size, m}, std::move(z));
  return out;
}

TeacherBatchOutputs single_teacher_outputs(const models::ModelOutput& o, bool want_hints) {
  TeacherBatchOutputs out;
  const Tensor z = o.logits.detach();
  out.logits = Tensor(Shape{z.size(), 1}, std::vector<double>(z.values().begin(), z.values().end()));
  if (want_hints) out.hints.push_back(o.hint.detach());
  return out;
}

// Student step on L_S = gamma * CE + beta * KD.
double student_step(Model& student, Adam& adam, const Batch& batch,
                    const distill::DistillConfig& config, const KdTerm& kd,
                    const TeacherBatchOutputs* teachers, double l2, Rng& dropout_rng) {
  Tape tape;
  const auto out = student.forward(tape, batch, true, dropout_rng);
  const Tensor ce = tape.cross_entropy(tape.sigmoid(out.logits), label_tensor(batch));
  Tensor kd_value;
  if (config.beta != 0.0) kd_value = kd(tape, out, *teachers);
  const Tensor loss = distill::student_loss(tape, ce, kd_value, config.beta, config.gamma);
  const double value = loss.item();
  tape.backward(loss);
  add_l2_gradient(student, l2);
  adam.step();
  return value;
}

std::vector<Tensor> student_side_tensors(const Model& student, const distill::TeacherGate* gate,
                                         const std::vector<distill::HintProjector>& projectors) {
  auto params = student.parameter_tensors();
  if (gate) {
    params.push_back(gate->w());
    params.push_back(gate->b());
  }
  for (const auto& p : projectors) params.push_back(p.weight());
  return params;
}

void check_layout(const Model& teacher, const features::InputLayout& layout) {
  if (!(teacher.layout() == layout)) {
    throw std::invalid_argument("teacher input layout " + teacher.layout().to_string() +
                                " does not match the student data " + layout.to_string());
  }
}

}  // namespace

std::vector<double> predict_logits(const Model& model, const EncodedDataset& data,
                                   std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(data.size());
  Rng unused(0);
  for_each_chunk(data, batch_size, [&](const Batch& batch) {
    Tape tape(false);
    const auto o = model.forward(tape, batch, false, unused);
    auto z = o.logits.values();
    out.insert(out.end(), z.begin(), z.end());
  });
  return out;
}

std::vector<double> predict_probs(const Model& model, const EncodedDataset& data,
                                  std::size_t batch_size) {
  auto z = predict_logits(model, data, batch_size);
  for (auto& v : z) v = stable_sigmoid(v);
  return z;
}

Metrics evaluate_probs(std::span<const double> probs, const EncodedDataset& data) {
  if (probs.size() != data.size()) throw std::invalid_argument("evaluate: size mismatch");
  std::vector<double> labels(data.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = data.label(i);
  return {auc(probs, labels), logloss(probs, labels)};
}

Metrics evaluate(const Model& model, const EncodedDataset& data, std::size_t batch_size) {
  const auto probs = predict_probs(model, data, batch_size);
  return evaluate_probs(probs, data);
}

void add_l2_gradient(Model& model, double l2) {
  if (l2 == 0.0) return;
  for (auto& p : model.parameters()) {
    if (!p.regularized) continue;
    auto w = p.tensor.values();
    auto g = p.tensor.grad();
    for (std::size_t k = 0; k < w.size(); ++k) g[k] += 2.0 * l2 * w[k];
  }
}

// ---------------------------------------------------------------------------
// Teacher / plain training

TeacherResult train_teacher(const ModelSpec& spec, const DataSplits& data,
                            const TrainHyper& hyper) {
  if (!data.train) throw std::invalid_argument("train_teacher: training data missing");
  return train_teacher(Model(spec, data.train->layout(), init_seed(hyper)), data, hyper);
}

TeacherResult train_teacher(Model model, const DataSplits& data, const TrainHyper& hyper) {
  check_hyper(hyper);
  if (!data.train || !data.val) throw std::invalid_argument("train_teacher: train/val splits required");
  TeacherResult result{std::move(model), {}, 0};
  if (hyper.max_epochs == 0) return result;
  Model& m = result.model;

  Adam adam(m.parameter_tensors(), AdamConfig{.lr = hyper.lr});
  EarlyStopMonitor monitor(MonitorMode::val_auc_max, hyper.patience, m.parameter_tensors());
  Rng dropout_rng(dropout_seed(hyper));

  for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    const auto start = Clock::now();
    BatchStream stream(*data.train, hyper.batch_size, hyper.shuffle, epoch_seed(hyper, epoch));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      double loss = 0.0;
      supervised_step(m, adam, *batch, hyper.l2, dropout_rng, loss);
      check_finite(loss, "teacher", epoch, steps);
      if (hyper.on_step) hyper.on_step(StepInfo{epoch, steps, loss}, m);
      loss_sum += loss;
      ++steps;
    }
    const double value = val_auc(m, *data.val, hyper.eval_batch_size);
    const bool stop = monitor.update(value) == StopDecision::stop;
    result.record.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(steps), value, seconds_since(start), stop});
    if (stop) break;
  }
  monitor.restore_best();
  result.best_epoch = monitor.best_epoch();
  return result;
}

// ---------------------------------------------------------------------------
// Pre-train scheme

StudentResult train_student_pretrain(const ModelSpec& student_spec,
                                     std::span<const Model* const> teachers,
                                     const distill::DistillConfig& config, const DataSplits& data,
                                     const TrainHyper& hyper, const StudentOptions& options) {
  config.validate();
  check_hyper(hyper);
  if (teachers.empty()) throw std::invalid_argument("distillation needs at least one teacher");
  if (!data.train) throw std::invalid_argument("training data missing");
  const auto& layout = data.train->layout();
  for (const Model* t : teachers) check_layout(*t, layout);

  // Training pool, optionally enriched with validation inputs.
  EncodedDataset pool;
  const EncodedDataset* train_set = data.train;
  if (options.merge_validation) {
    if (!data.val) throw std::invalid_argument("merge_validation needs a validation split");
    pool = EncodedDataset::concat(*data.train, *data.val);
    train_set = &pool;
  }
  EncodedDataset monitor_inputs, kept;
  if (options.monitor == MonitorMode::kd_loss_min) {
    if (!(options.monitor_fraction > 0.0 && options.monitor_fraction < 1.0)) {
      throw std::invalid_argument("monitor_fraction must lie in (0, 1)");
    }
    const std::size_t n = train_set->size();
    const auto held = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(options.monitor_fraction * static_cast<double>(n))));
    if (held >= n) throw std::invalid_argument("training set too small to hold aside a monitor slice");
    auto order = features::epoch_order(n, true, derive_seed(hyper.order_seed(), 7));
    std::vector<std::size_t> slice(order.begin(), order.begin() + held);
    std::vector<std::size_t> rest(order.begin() + held, order.end());
    std::sort(slice.begin(), slice.end());
    std::sort(rest.begin(), rest.end());
    monitor_inputs = train_set->subset(slice);
    kept = train_set->subset(rest);
    train_set = &kept;
  } else if (!data.val) {
    throw std::invalid_argument("val_auc_max monitoring needs a validation split");
  }

  StudentResult result{Model(student_spec, layout, init_seed(hyper)), std::nullopt, {}, {}, 0};
  Model& student = result.student;
  if (config.gating) result.gate.emplace(teachers.size());
  const bool hints = config.method == distill::Method::hint;
  if (hints) {
    Rng proj_rng(derive_seed(hyper.seed, 3));
    for (const Model* t : teachers) {
      result.projectors.emplace_back(t->hint_dim(), student.hint_dim(), proj_rng);
    }
  }
  distill::TeacherGate* gate = result.gate ? &*result.gate : nullptr;
  const KdTerm kd(config, gate, &result.projectors);
  if (hyper.max_epochs == 0) return result;

  const auto tracked = student_side_tensors(student, gate, result.projectors);
  Adam adam(tracked, AdamConfig{.lr = hyper.lr});
  EarlyStopMonitor monitor(options.monitor, hyper.patience, tracked);
  Rng dropout_rng(dropout_seed(hyper));
  const bool need_teachers = config.beta != 0.0;

  auto kd_on_slice = [&]() {
    double total = 0.0;
    std::size_t rows = 0;
    Rng unused(0);
    for_each_chunk(monitor_inputs, hyper.eval_batch_size, [&](const Batch& batch) {
      const auto t = run_teachers(teachers, batch, hints);
      Tape tape(false);
      const auto s = student.forward(tape, batch, false, unused);
      total += kd(tape, s, t).item() * static_cast<double>(batch.size);
      rows += batch.size;
    });
    return total / static_cast<double>(rows);
  };

  for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
    const auto start = Clock::now();
    BatchStream stream(*train_set, hyper.batch_size, hyper.shuffle, epoch_seed(hyper, epoch));
    double loss_sum = 0.0;
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      TeacherBatchOutputs t;
      if (need_teachers) t = run_teachers(teachers, *batch, hints);
      const double loss =
          student_step(student, adam, *batch, config, kd, &t, hyper.l2, dropout_rng);
      check_finite(loss, "student", epoch, steps);
      if (hyper.on_step) hyper.on_step(StepInfo{epoch, steps, loss}, student);
      loss_sum += loss;
      ++steps;
    }
    const double value = options.monitor == MonitorMode::kd_loss_min
                             ? kd_on_slice()
                             : val_auc(student, *data.val, hyper.eval_batch_size);
    const bool stop = monitor.update(value) == StopDecision::stop;
    result.record.epochs.push_back(
        {epoch, loss_sum / static_cast<double>(steps), value, seconds_since(start), stop});
    if (stop) break;
  }
  monitor.restore_best();
  result.best_epoch = monitor.best_epoch();
  return result;
}

// ---------------------------------------------------------------------------
// Co-train scheme

CotrainResult train_student_cotrain(const ModelSpec& teacher_spec, const ModelSpec& student_spec,
                                    const distill::DistillConfig& config, const DataSplits& data,
                                    const TrainHyper& teacher_hyper,
                                    const TrainHyper& student_hyper, MonitorMode student_monitor,
                                    const CotrainHooks& hooks) {
  config.validate();
  check_hyper(teacher_hyper);
  check_hyper(student_hyper);
  if (!data.train || !data.val) throw std::invalid_argument("co-training needs train/val splits");
  const auto& layout = data.train->layout();
  if (!(data.val->layout() == layout)) {
    throw std::invalid_argument("validation layout does not match the training data");
  }

  CotrainResult result{Model(teacher_spec, layout, init_seed(teacher_hyper)),
                       Model(student_spec, layout, init_seed(student_hyper)),
                       {},
                       {},
                       {},
                       0,
                       0};
  Model& teacher = result.teacher;
  Model& student = result.student;
  const bool hints = config.method == distill::Method::hint;
  if (hints) {
    Rng proj_rng(derive_seed(student_hyper.seed, 3));
    result.projectors.emplace_back(teacher.hint_dim(), student.hint_dim(), proj_rng);
  }
  // A single teacher makes the gate the constant weight 1, so it is not built.
  const KdTerm kd(config, nullptr, &result.projectors);

  Adam teacher_adam(teacher.parameter_tensors(), AdamConfig{.lr = teacher_hyper.lr});
  EarlyStopMonitor teacher_monitor(MonitorMode::val_auc_max, teacher_hyper.patience,
                                   teacher.parameter_tensors());
  const auto student_tensors = student_side_tensors(student, nullptr, result.projectors);
  Adam student_adam(student_tensors, AdamConfig{.lr = student_hyper.lr});
  EarlyStopMonitor monitor(student_monitor, student_hyper.patience, student_tensors);
  Rng teacher_rng(dropout_seed(teacher_hyper));
  Rng student_rng(dropout_seed(student_hyper));

  const Model* teacher_ptr = &teacher;
  auto kd_on_val = [&]() {
    double total = 0.0;
    std::size_t rows = 0;
    Rng unused(0);
    for_each_chunk(*data.val, student_hyper.eval_batch_size, [&](const Batch& batch) {
      const auto t = run_teachers(std::span(&teacher_ptr, 1), batch, hints);
      Tape tape(false);
      const auto s = student.forward(tape, batch, false, unused);
      total += kd(tape, s, t).item() * static_cast<double>(batch.size);
      rows += batch.size;
    });
    return total / static_cast<double>(rows);
  };

  bool teacher_active = teacher_hyper.max_epochs > 0;
  bool student_active = student_hyper.max_epochs > 0;
  for (std::size_t epoch = 1; teacher_active || student_active; ++epoch) {
    const auto start = Clock::now();
    BatchStream stream(*data.train, teacher_hyper.batch_size, teacher_hyper.shuffle,
                       epoch_seed(teacher_hyper, epoch));
    double teacher_sum = 0.0, student_sum = 0.0;
    std::size_t steps = 0;
    while (auto batch = stream.next()) {
      TeacherBatchOutputs t;
      if (teacher_active) {
        double loss = 0.0;
        const auto out =
            supervised_step(teacher, teacher_adam, *batch, teacher_hyper.l2, teacher_rng, loss);
        check_finite(loss, "teacher", epoch, steps);
        if (teacher_hyper.on_step) teacher_hyper.on_step(StepInfo{epoch, steps, loss}, teacher);
        teacher_sum += loss;
        t = single_teacher_outputs(out, hints);
      } else if (student_active && config.beta != 0.0) {
        t = run_teachers(std::span(&teacher_ptr, 1), *batch, hints);
      }
      if (student_active) {
        const double loss = student_step(student, student_adam, *batch, config, kd, &t,
                                         student_hyper.l2, student_rng);
        check_finite(loss, "student", epoch, steps);
        if (student_hyper.on_step) student_hyper.on_step(StepInfo{epoch, steps, loss}, student);
        student_sum += loss;
      }
      if (hooks.on_step) hooks.on_step(StepInfo{epoch, steps, 0.0}, teacher, student);
      ++steps;
    }
    const double secs = seconds_since(start);
    const double n = static_cast<double>(steps);
    if (teacher_active) {
      const double value = val_auc(teacher, *data.val, teacher_hyper.eval_batch_size);
      const bool stop = teacher_monitor.update(value) == StopDecision::stop;
      result.teacher_record.epochs.push_back({epoch, teacher_sum / n, value, secs, stop});
      if (stop || epoch >= teacher_hyper.max_epochs) {
        teacher_monitor.restore_best();
        teacher_active = false;
      }
    }
    if (student_active) {
      const double value = student_monitor == MonitorMode::kd_loss_min
                               ? kd_on_val()
                               : val_auc(student, *data.val, student_hyper.eval_batch_size);
      const bool stop = monitor.update(value) == StopDecision::stop;
      result.student_record.epochs.push_back({epoch, student_sum / n, value, secs, stop});
      if (stop || epoch >= student_hyper.max_epochs) {
        monitor.restore_best();
        student_active = false;
      }
    }
  }
  result.teacher_best_epoch = teacher_monitor.best_epoch();
  result.student_best_epoch = monitor.best_epoch();
  return result;
}

}  // namespace ctrkd::train
