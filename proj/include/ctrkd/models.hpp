#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ctrkd/features.hpp"
#include "ctrkd/rng.hpp"
#include "ctrkd/tape.hpp"

namespace ctrkd::models {

using features::Batch;
using features::InputLayout;

enum class WidePart { none, lr, fm, cross, cin };

std::string_view to_string(WidePart part);
WidePart parse_wide_part(std::string_view text);

// Declarative architecture: logit = wide part + deep part.
//
//   WDL     = (lr, mlp)     DeepFM  = (fm, mlp)     DCN = (cross, mlp)
//   xDeepFM = (cin, mlp)    DNN     = (none, mlp)   LR  = (lr, none)   FM = (fm, none)
struct ModelSpec {
  WidePart wide = WidePart::none;
  std::size_t cross_layers = 0;          // wide == cross
  std::vector<std::size_t> cin_maps;     // wide == cin, feature maps per layer
  std::vector<std::size_t> hidden;       // deep part; empty = no deep part
  double dropout = 0.0;
  std::string activation = "relu";
  std::size_t embedding_dim = 8;

  bool has_deep() const { return !hidden.empty(); }
  bool needs_embeddings() const;
  void validate() const;

  // Canonical single-line form, e.g.
  // "wide=cin;cin_maps=4;hidden=16,16;dropout=0;activation=relu;embedding_dim=8".
  std::string to_string() const;
  static ModelSpec parse(std::string_view text);

  // Named architectures: lr, fm, dnn, wdl, deepfm, dcn, xdeepfm.
  static ModelSpec preset(std::string_view name, std::vector<std::size_t> hidden = {64, 64},
                          std::size_t embedding_dim = 8);

  bool operator==(const ModelSpec&) const = default;
};

struct NamedParameter {
  std::string name;
  Tensor tensor;
  bool regularized = false;  // embedding tables receive the L2 term
};

struct ModelOutput {
  Tensor logits;  // [B]
  Tensor hint;    // [B, hint_dim]
  Tensor wide;    // [B] wide part alone, undefined when absent
  Tensor deep;    // [B] deep part alone, undefined when absent
};

class Model {
 public:
  Model(ModelSpec spec, InputLayout layout, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelSpec& spec() const { return spec_; }
  const InputLayout& layout() const { return layout_; }

  // Logit function over a batch. Dropout is active only when `training`.
  ModelOutput forward(Tape& tape, const Batch& batch, bool training, Rng& dropout_rng) const;
  // Inference convenience: sigmoid of the logits, no gradient history.
  std::vector<double> predict(const Batch& batch) const;

  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::vector<Tensor> parameter_tensors() const;
  const Tensor& parameter(std::string_view name) const;
  std::size_t hint_dim() const;
  std::size_t num_weights() const;

  // Deep copy of every parameter tensor.
  Model clone() const;

 private:
  struct Embedded {
    Tensor flat;    // [B, F*d + N]: embeddings concatenated with raw numerics
    Tensor fields;  // [B, F', d] with numeric fields projected, when needed
  };

  Tensor& add(std::string name, Shape shape, std::vector<double> values, bool regularized = false);
  const Tensor& param(std::size_t index) const { return params_[index].tensor; }
  Embedded embed(Tape& tape, const Batch& batch) const;
  Tensor lr_logit(Tape& tape, const Batch& batch) const;
  Tensor fm_logit(Tape& tape, const Batch& batch, const Tensor& fields, Tensor* hint) const;
  Tensor cross_logit(Tape& tape, const Tensor& x0, Tensor* hint) const;
  Tensor cin_logit(Tape& tape, const Tensor& fields, Tensor* hint) const;
  Tensor mlp_logit(Tape& tape, const Tensor& input, bool training, Rng& rng, Tensor* hint) const;

  ModelSpec spec_;
  InputLayout layout_;
  std::vector<NamedParameter> params_;
  // Offsets into params_.
  std::size_t embedding_begin_ = 0;
  std::size_t numeric_projection_ = SIZE_MAX;
  std::size_t linear_begin_ = SIZE_MAX;
  std::size_t cross_begin_ = SIZE_MAX;
  std::size_t cin_begin_ = SIZE_MAX;
  std::size_t mlp_begin_ = SIZE_MAX;
};

// Batch-level tensors for numerics: [B, N] and per-field column [B].
Tensor numeric_matrix(const Batch& batch);

}  // namespace ctrkd::models
