#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctrkd/rng.hpp"
#include "ctrkd/tape.hpp"

namespace ctrkd::distill {

enum class Method { soft_label, hint };
enum class Scheme { pretrain, cotrain };

std::string_view to_string(Method m);
std::string_view to_string(Scheme s);
Method parse_method(std::string_view text);
Scheme parse_scheme(std::string_view text);

struct DistillConfig {
  Method method = Method::soft_label;
  double tau = 1.0;
  double beta = 0.5;   // weight of the distillation term
  double gamma = 0.5;  // weight of the hard-label cross-entropy
  Scheme scheme = Scheme::pretrain;
  bool gating = false;
  std::vector<std::string> teachers;  // teacher model names or checkpoint paths

  // soft_label: beta + gamma = 1, both in [0, 1]; hint: gamma = 1, beta in [0, 1e-3];
  // tau >= 1.
  void validate() const;
};

// -- plain-value forms -------------------------------------------------------

// Mean binary cross-entropy against hard labels; labels must be 0 or 1.
double bce_loss(std::span<const double> labels, std::span<const double> probs);
// Mean cross-entropy with soft targets in [0, 1].
double cross_entropy(std::span<const double> targets, std::span<const double> probs);
double soft_label_loss(double teacher_logit, double student_logit, double tau);
// ||W v_T - v_S||^2 with W stored row-major as n x m.
double hint_loss(std::span<const double> teacher_hint, std::span<const double> student_hint,
                 std::span<const double> projection, std::size_t n, std::size_t m);
double ensemble_teacher_logit(std::span<const double> teacher_logits,
                              std::span<const double> weights);
double student_loss(double ce, double kd, double beta, double gamma);

// -- differentiable forms ------------------------------------------------------

// Mean over the batch of CE(sigmoid(z_T / tau), sigmoid(z_S / tau)). Teacher
// logits enter as given; pass a detached tensor to keep teacher parameters
// out of the graph.
Tensor soft_label_loss(Tape& tape, const Tensor& teacher_logits, const Tensor& student_logits,
                       double tau);

// Maps a teacher hint (dim m) into the student hint space (dim n).
class HintProjector {
 public:
  HintProjector() = default;
  // Identity when m == n, small random otherwise.
  HintProjector(std::size_t teacher_dim, std::size_t student_dim, Rng& rng);

  std::size_t teacher_dim() const { return weight_.dim(1); }
  std::size_t student_dim() const { return weight_.dim(0); }
  Tensor& weight() { return weight_; }
  const Tensor& weight() const { return weight_; }

 private:
  Tensor weight_;  // [n, m]
};

// Per-sample ||W v_T - v_S||^2 -> [B].
Tensor hint_loss_per_sample(Tape& tape, const Tensor& teacher_hint, const Tensor& student_hint,
                            const HintProjector& projector);
// Batch mean of hint_loss_per_sample.
Tensor hint_loss(Tape& tape, const Tensor& teacher_hint, const Tensor& student_hint,
                 const HintProjector& projector);

// Sample-wise softmax gate over teacher logits:
//   alpha_i = exp(w_i z_i + b_i) / sum_j exp(w_j z_j + b_j).
class TeacherGate {
 public:
  TeacherGate() = default;
  // Starts at w = 0, b = 0, i.e. plain averaging.
  explicit TeacherGate(std::size_t num_teachers);
  TeacherGate(std::vector<double> w, std::vector<double> b);

  std::size_t num_teachers() const { return w_.size(); }
  Tensor& w() { return w_; }
  Tensor& b() { return b_; }
  const Tensor& w() const { return w_; }
  const Tensor& b() const { return b_; }

  // teacher_logits [B, M] -> alpha [B, M].
  Tensor weights(Tape& tape, const Tensor& teacher_logits) const;

 private:
  Tensor w_;
  Tensor b_;
};

std::vector<double> gate_weights(std::span<const double> teacher_logits, const TeacherGate& gate);

// sum_i alpha_i z_i per row -> [B]; alpha is [B, M] or a single row of M shared weights.
Tensor ensemble_teacher_logit(Tape& tape, const Tensor& teacher_logits, const Tensor& alpha);

// gamma * ce + beta * kd; beta == 0 returns gamma * ce without touching kd.
Tensor student_loss(Tape& tape, const Tensor& ce, const Tensor& kd, double beta, double gamma);

}  // namespace ctrkd::distill
