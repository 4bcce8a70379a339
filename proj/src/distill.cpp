#include "ctrkd/distill.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ctrkd::distill {

std::string_view to_string(Method m) { return m == Method::soft_label ? "soft_label" : "hint"; }
std::string_view to_string(Scheme s) { return s == Scheme::pretrain ? "pretrain" : "cotrain"; }

Method parse_method(std::string_view text) {
  if (text == "soft_label") return Method::soft_label;
  if (text == "hint") return Method::hint;
  throw std::invalid_argument("unknown distillation method '" + std::string(text) + "'");
}

Scheme parse_scheme(std::string_view text) {
  if (text == "pretrain") return Scheme::pretrain;
  if (text == "cotrain") return Scheme::cotrain;
  throw std::invalid_argument("unknown training scheme '" + std::string(text) + "'");
}

void DistillConfig::validate() const {
  if (!(tau >= 1.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be >= 1");
  if (method == Method::soft_label) {
    if (!(beta >= 0.0 && beta <= 1.0 && gamma >= 0.0 && gamma <= 1.0)) {
      throw std::invalid_argument("soft-label distillation needs beta, gamma in [0, 1]");
    }
    if (std::abs(beta + gamma - 1.0) > 1e-12) {
      throw std::invalid_argument("soft-label distillation needs beta + gamma = 1");
    }
  } else {
    if (gamma != 1.0) throw std::invalid_argument("hint regression needs gamma = 1");
    if (!(beta >= 0.0 && beta <= 1e-3)) {
      throw std::invalid_argument("hint regression needs beta in [0, 1e-3]");
    }
  }
  if (gating && method != Method::soft_label) {
    throw std::invalid_argument("teacher gating applies to soft-label distillation only");
  }
  if (scheme == Scheme::cotrain && teachers.size() > 1) {
    throw std::invalid_argument("co-training supports a single teacher");
  }
}

double cross_entropy(std::span<const double> targets, std::span<const double> probs) {
  if (targets.size() != probs.size() || probs.empty()) {
    throw std::invalid_argument("cross_entropy: size mismatch or empty input");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double q = std::clamp(probs[i], kProbEpsilon, 1.0 - kProbEpsilon);
    total += targets[i] * std::log(q) + (1.0 - targets[i]) * std::log(1.0 - q);
  }
  return -total / static_cast<double>(probs.size());
}

double bce_loss(std::span<const double> labels, std::span<const double> probs) {
  for (double y : labels) {
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce_loss: labels must be 0 or 1");
  }
  return cross_entropy(labels, probs);
}

double soft_label_loss(double teacher_logit, double student_logit, double tau) {
  const double p = stable_sigmoid(teacher_logit * (1.0 / tau));
  const double q = stable_sigmoid(student_logit * (1.0 / tau));
  return cross_entropy(std::span(&p, 1), std::span(&q, 1));
}

double hint_loss(std::span<const double> teacher_hint, std::span<const double> student_hint,
                 std::span<const double> projection, std::size_t n, std::size_t m) {
  if (teacher_hint.size() != m || student_hint.size() != n || projection.size() != n * m) {
    throw DimensionError("hint_loss: dimensions do not match the projection");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double proj = 0.0;
    for (std::size_t c = 0; c < m; ++c) proj += projection[r * m + c] * teacher_hint[c];
    const double diff = proj - student_hint[r];
    total += diff * diff;
  }
  return total;
}

double ensemble_teacher_logit(std::span<const double> teacher_logits,
                              std::span<const double> weights) {
  if (teacher_logits.size() != weights.size()) {
    throw DimensionError("ensemble_teacher_logit: length mismatch");
  }
  double z = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) z += weights[i] * teacher_logits[i];
  return z;
}

double student_loss(double ce, double kd, double beta, double gamma) {
  if (beta == 0.0) return gamma * ce;
  return gamma * ce + beta * kd;
}

Tensor soft_label_loss(Tape& tape, const Tensor& teacher_logits, const Tensor& student_logits,
                       double tau) {
  if (teacher_logits.size() != student_logits.size()) {
    throw DimensionError("soft_label_loss: teacher " + shape_string(teacher_logits.shape()) +
                         " vs student " + shape_string(student_logits.shape()));
  }
  const double inv = 1.0 / tau;
  const Tensor targets = tape.sigmoid(tape.scale(teacher_logits, inv));
  const Tensor probs = tape.sigmoid(tape.scale(student_logits, inv));
  return tape.cross_entropy(probs, targets);
}

HintProjector::HintProjector(std::size_t teacher_dim, std::size_t student_dim, Rng& rng) {
  std::vector<double> w(student_dim * teacher_dim, 0.0);
  if (teacher_dim == student_dim) {
    for (std::size_t i = 0; i < student_dim; ++i) w[i * teacher_dim + i] = 1.0;
  } else {
    const double limit = std::sqrt(6.0 / static_cast<double>(teacher_dim + student_dim));
    for (auto& x : w) x = rng.uniform(-limit, limit);
  }
  weight_ = Tensor::parameter(Shape{student_dim, teacher_dim}, std::move(w));
}

Tensor hint_loss_per_sample(Tape& tape, const Tensor& teacher_hint, const Tensor& student_hint,
                            const HintProjector& projector) {
  if (teacher_hint.rank() != 2 || student_hint.rank() != 2 ||
      teacher_hint.dim(1) != projector.teacher_dim() ||
      student_hint.dim(1) != projector.student_dim() || teacher_hint.dim(0) != student_hint.dim(0)) {
    throw DimensionError("hint_loss: teacher " + shape_string(teacher_hint.shape()) + ", student " +
                         shape_string(student_hint.shape()) + ", projector " +
                         shape_string(projector.weight().shape()));
  }
  const Tensor projected = tape.matmul(teacher_hint, tape.transpose(projector.weight()));
  return tape.reduce_sum(tape.square(tape.sub(projected, student_hint)), 1);
}

Tensor hint_loss(Tape& tape, const Tensor& teacher_hint, const Tensor& student_hint,
                 const HintProjector& projector) {
  return tape.mean(hint_loss_per_sample(tape, teacher_hint, student_hint, projector));
}

TeacherGate::TeacherGate(std::size_t num_teachers)
    : TeacherGate(std::vector<double>(num_teachers, 0.0), std::vector<double>(num_teachers, 0.0)) {}

TeacherGate::TeacherGate(std::vector<double> w, std::vector<double> b) {
  if (w.empty() || w.size() != b.size()) {
    throw std::invalid_argument("teacher gate needs matching, non-empty w and b");
  }
  const std::size_t m = w.size();
  w_ = Tensor::parameter(Shape{m}, std::move(w));
  b_ = Tensor::parameter(Shape{m}, std::move(b));
}

Tensor TeacherGate::weights(Tape& tape, const Tensor& teacher_logits) const {
  if (teacher_logits.rank() != 2 || teacher_logits.dim(1) != num_teachers()) {
    throw DimensionError("gate expects [B, " + std::to_string(num_teachers()) + "] logits, got " +
                         shape_string(teacher_logits.shape()));
  }
  const Tensor scores = tape.add_bias(tape.scale_cols(teacher_logits, w_), b_);
  return tape.softmax_rows(scores);
}

std::vector<double> gate_weights(std::span<const double> teacher_logits, const TeacherGate& gate) {
  Tape tape(false);
  const Tensor z(Shape{1, teacher_logits.size()},
                 std::vector<double>(teacher_logits.begin(), teacher_logits.end()));
  const Tensor alpha = gate.weights(tape, z);
  return {alpha.values().begin(), alpha.values().end()};
}

Tensor ensemble_teacher_logit(Tape& tape, const Tensor& teacher_logits, const Tensor& alpha) {
  if (teacher_logits.rank() != 2) {
    throw DimensionError("ensemble_teacher_logit: logits must be [B, M]");
  }
  if (alpha.shape() == teacher_logits.shape()) {
    return tape.reduce_sum(tape.mul(alpha, teacher_logits), 1);
  }
  if (alpha.size() == teacher_logits.dim(1)) {
    return tape.reduce_sum(tape.scale_cols(teacher_logits, alpha), 1);
  }
  throw DimensionError("ensemble_teacher_logit: weights " + shape_string(alpha.shape()) +
                       " for logits " + shape_string(teacher_logits.shape()));
}

Tensor student_loss(Tape& tape, const Tensor& ce, const Tensor& kd, double beta, double gamma) {
  const Tensor hard = tape.scale(ce, gamma);
  if (beta == 0.0) return hard;
  return tape.add(hard, tape.scale(kd, beta));
}

}  // namespace ctrkd::distill
