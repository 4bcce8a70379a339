#include "ctrkd/models.hpp"

#include <charconv>
#include <cmath>
#include <map>
#include <stdexcept>

#include "ctrkd/format.hpp"

namespace ctrkd::models {
namespace {

constexpr double kEmbeddingStd = 0.05;

std::vector<double> glorot(Rng& rng, std::size_t fan_in, std::size_t fan_out) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return v;
}

std::vector<double> gaussian(Rng& rng, std::size_t n, double stddev) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return v;
}

std::vector<std::size_t> parse_sizes(std::string_view text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  for (auto part : split_view(text, ',')) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size()) {
      throw std::invalid_argument("bad size list '" + std::string(text) + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

std::string_view to_string(WidePart part) {
  switch (part) {
    case WidePart::none: return "none";
    case WidePart::lr: return "lr";
    case WidePart::fm: return "fm";
    case WidePart::cross: return "cross";
    case WidePart::cin: return "cin";
  }
  return "none";
}

WidePart parse_wide_part(std::string_view text) {
  if (text == "none") return WidePart::none;
  if (text == "lr") return WidePart::lr;
  if (text == "fm") return WidePart::fm;
  if (text == "cross") return WidePart::cross;
  if (text == "cin") return WidePart::cin;
  throw std::invalid_argument("unknown wide part '" + std::string(text) + "'");
}

bool ModelSpec::needs_embeddings() const {
  return has_deep() || wide == WidePart::fm || wide == WidePart::cross || wide == WidePart::cin;
}

void ModelSpec::validate() const {
  if (wide == WidePart::none && !has_deep()) {
    throw std::invalid_argument("model spec needs a wide part, a deep part, or both");
  }
  if (embedding_dim == 0) throw std::invalid_argument("embedding_dim must be positive");
  if (wide == WidePart::cross && cross_layers == 0) {
    throw std::invalid_argument("cross network needs at least one layer");
  }
  if (wide == WidePart::cin) {
    if (cin_maps.empty()) throw std::invalid_argument("CIN needs at least one layer");
    for (auto h : cin_maps) {
      if (h == 0) throw std::invalid_argument("CIN layer with zero feature maps");
    }
  }
  for (auto h : hidden) {
    if (h == 0) throw std::invalid_argument("hidden layer of width zero");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (activation != "relu") {
    throw std::invalid_argument("unsupported activation '" + activation + "'");
  }
}

std::string ModelSpec::to_string() const {
  std::string out = "wide=" + std::string(models::to_string(wide));
  if (wide == WidePart::cross) out += ";cross_layers=" + std::to_string(cross_layers);
  if (wide == WidePart::cin) out += ";cin_maps=" + join(cin_maps);
  out += ";hidden=" + join(hidden);
  out += ";dropout=" + format_double(dropout);
  out += ";activation=" + activation;
  out += ";embedding_dim=" + std::to_string(embedding_dim);
  return out;
}

ModelSpec ModelSpec::parse(std::string_view text) {
  ModelSpec spec;
  spec.hidden.clear();
  for (auto item : split_view(text, ';')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("model spec item without '=': '" + std::string(item) + "'");
    }
    const auto key = trim(item.substr(0, eq));
    const auto value = trim(item.substr(eq + 1));
    if (key == "wide") {
      spec.wide = parse_wide_part(value);
    } else if (key == "cross_layers") {
      auto v = parse_sizes(value);
      if (v.size() != 1) throw std::invalid_argument("cross_layers takes one integer");
      spec.cross_layers = v[0];
    } else if (key == "cin_maps") {
      spec.cin_maps = parse_sizes(value);
    } else if (key == "hidden") {
      spec.hidden = parse_sizes(value);
    } else if (key == "dropout") {
      double d = 0.0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), d);
      if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw std::invalid_argument("bad dropout '" + std::string(value) + "'");
      }
      spec.dropout = d;
    } else if (key == "activation") {
      spec.activation = std::string(value);
    } else if (key == "embedding_dim") {
      auto v = parse_sizes(value);
      if (v.size() != 1) throw std::invalid_argument("embedding_dim takes one integer");
      spec.embedding_dim = v[0];
    } else {
      throw std::invalid_argument("unknown model spec key '" + std::string(key) + "'");
    }
  }
  spec.validate();
  return spec;
}

ModelSpec ModelSpec::preset(std::string_view name, std::vector<std::size_t> hidden,
                            std::size_t embedding_dim) {
  ModelSpec s;
  s.embedding_dim = embedding_dim;
  if (name == "lr") {
    s.wide = WidePart::lr;
  } else if (name == "fm") {
    s.wide = WidePart::fm;
  } else if (name == "dnn") {
    s.hidden = std::move(hidden);
  } else if (name == "wdl" || name == "widedeep") {
    s.wide = WidePart::lr;
    s.hidden = std::move(hidden);
  } else if (name == "deepfm") {
    s.wide = WidePart::fm;
    s.hidden = std::move(hidden);
  } else if (name == "dcn") {
    s.wide = WidePart::cross;
    s.cross_layers = 2;
    s.hidden = std::move(hidden);
  } else if (name == "xdeepfm") {
    s.wide = WidePart::cin;
    s.cin_maps = {4};
    s.hidden = std::move(hidden);
  } else {
    throw std::invalid_argument("unknown model preset '" + std::string(name) + "'");
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

Tensor numeric_matrix(const Batch& batch) {
  const std::size_t b = batch.size, n = batch.num_numeric;
  std::vector<double> v(b * n);
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t i = 0; i < b; ++i) v[i * n + j] = batch.numeric[j * b + i];
  }
  return Tensor(Shape{b, n}, std::move(v));
}

Tensor& Model::add(std::string name, Shape shape, std::vector<double> values, bool regularized) {
  params_.push_back({std::move(name), Tensor::parameter(std::move(shape), std::move(values)),
                     regularized});
  return params_.back().tensor;
}

Model::Model(ModelSpec spec, InputLayout layout, std::uint64_t seed)
    : spec_(std::move(spec)), layout_(std::move(layout)) {
  spec_.validate();
  if (layout_.num_categorical() == 0 && layout_.num_numeric == 0) {
    throw std::invalid_argument("input layout has no fields");
  }
  Rng rng(seed);
  const std::size_t d = spec_.embedding_dim;
  const std::size_t nf = layout_.num_categorical();
  const std::size_t nn = layout_.num_numeric;

  if (spec_.needs_embeddings()) {
    embedding_begin_ = params_.size();
    for (std::size_t f = 0; f < nf; ++f) {
      const std::size_t vocab = layout_.field_sizes[f];
      add("embedding." + std::to_string(f), {vocab, d}, gaussian(rng, vocab * d, kEmbeddingStd),
          true);
    }
    if ((spec_.wide == WidePart::fm || spec_.wide == WidePart::cin) && nn > 0) {
      numeric_projection_ = params_.size();
      add("numeric_projection", {nn, d}, gaussian(rng, nn * d, kEmbeddingStd), true);
    }
  }
  if (spec_.wide == WidePart::lr || spec_.wide == WidePart::fm) {
    linear_begin_ = params_.size();
    for (std::size_t f = 0; f < nf; ++f) {
      const std::size_t vocab = layout_.field_sizes[f];
      add("linear." + std::to_string(f), {vocab, 1}, std::vector<double>(vocab, 0.0), true);
    }
    if (nn > 0) add("linear.numeric", {nn, 1}, std::vector<double>(nn, 0.0));
    add("linear.bias", {1}, {0.0});
  }
  const std::size_t flat_dim = nf * d + nn;
  if (spec_.wide == WidePart::cross) {
    cross_begin_ = params_.size();
    for (std::size_t l = 0; l < spec_.cross_layers; ++l) {
      add("cross." + std::to_string(l) + ".w", {flat_dim, 1}, glorot(rng, flat_dim, 1));
      add("cross." + std::to_string(l) + ".b", {flat_dim}, std::vector<double>(flat_dim, 0.0));
    }
    add("cross.head.w", {flat_dim, 1}, glorot(rng, flat_dim, 1));
    add("cross.head.b", {1}, {0.0});
  }
  if (spec_.wide == WidePart::cin) {
    cin_begin_ = params_.size();
    const std::size_t base = nf + nn;
    std::size_t prev = base, pooled = 0;
    for (std::size_t k = 0; k < spec_.cin_maps.size(); ++k) {
      const std::size_t h = spec_.cin_maps[k];
      add("cin." + std::to_string(k) + ".w", {h, prev * base}, glorot(rng, prev * base, h));
      prev = h;
      pooled += h;
    }
    add("cin.head.w", {pooled, 1}, glorot(rng, pooled, 1));
    add("cin.head.b", {1}, {0.0});
  }
  if (spec_.has_deep()) {
    mlp_begin_ = params_.size();
    std::size_t in = flat_dim;
    for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
      const std::size_t out = spec_.hidden[l];
      add("mlp." + std::to_string(l) + ".w", {in, out}, glorot(rng, in, out));
      add("mlp." + std::to_string(l) + ".b", {out}, std::vector<double>(out, 0.0));
      in = out;
    }
    add("mlp.out.w", {in, 1}, glorot(rng, in, 1));
    add("mlp.out.b", {1}, {0.0});
  }
}

std::vector<Tensor> Model::parameter_tensors() const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

const Tensor& Model::parameter(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::out_of_range("model has no parameter '" + std::string(name) + "'");
}

std::size_t Model::hint_dim() const {
  if (spec_.has_deep()) return spec_.hidden.back();
  switch (spec_.wide) {
    case WidePart::lr: return 1;
    case WidePart::fm: return spec_.embedding_dim;
    case WidePart::cross: return layout_.num_categorical() * spec_.embedding_dim + layout_.num_numeric;
    case WidePart::cin: {
      std::size_t total = 0;
      for (auto h : spec_.cin_maps) total += h;
      return total;
    }
    case WidePart::none: break;
  }
  return 0;
}

std::size_t Model::num_weights() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

Model Model::clone() const {
  Model copy(spec_, layout_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].tensor.values();
    auto dst = copy.params_[i].tensor.values();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return copy;
}

Model::Embedded Model::embed(Tape& tape, const Batch& batch) const {
  Embedded out;
  if (!spec_.needs_embeddings()) return out;
  if (batch.num_categorical != layout_.num_categorical() ||
      batch.num_numeric != layout_.num_numeric) {
    throw DimensionError("batch does not match the model's input layout");
  }
  const std::size_t nf = layout_.num_categorical();
  const std::size_t nn = layout_.num_numeric;
  std::vector<Tensor> field_vectors;
  field_vectors.reserve(nf + nn);
  for (std::size_t f = 0; f < nf; ++f) {
    field_vectors.push_back(tape.gather_rows(param(embedding_begin_ + f), batch.field(f)));
  }
  const bool wants_flat = spec_.has_deep() || spec_.wide == WidePart::cross;
  const bool wants_fields = spec_.wide == WidePart::fm || spec_.wide == WidePart::cin;
  if (wants_flat) {
    std::vector<Tensor> parts = field_vectors;
    if (nn > 0) parts.push_back(numeric_matrix(batch));
    out.flat = tape.concat_cols(parts);
  }
  if (wants_fields) {
    std::vector<Tensor> parts = field_vectors;
    for (std::size_t j = 0; j < nn; ++j) {
      const std::vector<std::uint32_t> idx(batch.size, static_cast<std::uint32_t>(j));
      auto projected = tape.gather_rows(param(numeric_projection_), idx);
      auto col = batch.numeric_field(j);
      parts.push_back(tape.scale_rows(projected, Tensor::vector({col.begin(), col.end()})));
    }
    out.fields = tape.reshape(tape.concat_cols(parts), Shape{batch.size, nf + nn, spec_.embedding_dim});
  }
  return out;
}

Tensor Model::lr_logit(Tape& tape, const Batch& batch) const {
  const std::size_t nf = layout_.num_categorical();
  const std::size_t nn = layout_.num_numeric;
  std::vector<Tensor> terms;
  for (std::size_t f = 0; f < nf; ++f) {
    terms.push_back(tape.gather_rows(param(linear_begin_ + f), batch.field(f)));
  }
  std::size_t next = linear_begin_ + nf;
  if (nn > 0) terms.push_back(tape.matmul(numeric_matrix(batch), param(next++)));
  const Tensor summed = tape.reduce_sum(tape.concat_cols(terms), 1);
  return tape.add(summed, param(next));
}

Tensor Model::fm_logit(Tape& tape, const Batch& batch, const Tensor& fields, Tensor* hint) const {
  const Tensor linear = lr_logit(tape, batch);
  // sum_{i<j} <v_i, v_j> = 1/2 [ (sum_i v_i)^2 - sum_i v_i^2 ], per embedding dimension.
  const Tensor sum_sq = tape.square(tape.reduce_sum(fields, 1));
  const Tensor sq_sum = tape.reduce_sum(tape.square(fields), 1);
  const Tensor interaction = tape.scale(tape.sub(sum_sq, sq_sum), 0.5);
  if (hint) *hint = interaction;
  return tape.add(linear, tape.reduce_sum(interaction, 1));
}

Tensor Model::cross_logit(Tape& tape, const Tensor& x0, Tensor* hint) const {
  Tensor x = x0;
  std::size_t p = cross_begin_;
  for (std::size_t l = 0; l < spec_.cross_layers; ++l) {
    // x_{l+1} = x0 * (x_l . w_l) + b_l + x_l
    const Tensor s = tape.matmul(x, param(p++));
    const Tensor t = tape.add_bias(tape.scale_rows(x0, s), param(p++));
    x = tape.add(t, x);
  }
  if (hint) *hint = x;
  const Tensor head = tape.add_bias(tape.matmul(x, param(p)), param(p + 1));
  return tape.reshape(head, Shape{x0.dim(0)});
}

Tensor Model::cin_logit(Tape& tape, const Tensor& fields, Tensor* hint) const {
  Tensor xk = fields;
  std::vector<Tensor> pooled;
  std::size_t p = cin_begin_;
  for (std::size_t k = 0; k < spec_.cin_maps.size(); ++k) {
    const Tensor z = tape.pairwise_hadamard(xk, fields);
    xk = tape.mix_maps(param(p++), z);
    pooled.push_back(tape.reduce_sum(xk, 2));
  }
  const Tensor features = tape.concat_cols(pooled);
  if (hint) *hint = features;
  const Tensor head = tape.add_bias(tape.matmul(features, param(p)), param(p + 1));
  return tape.reshape(head, Shape{fields.dim(0)});
}

Tensor Model::mlp_logit(Tape& tape, const Tensor& input, bool training, Rng& rng,
                        Tensor* hint) const {
  Tensor h = input;
  std::size_t p = mlp_begin_;
  for (std::size_t l = 0; l < spec_.hidden.size(); ++l) {
    h = tape.relu(tape.add_bias(tape.matmul(h, param(p)), param(p + 1)));
    p += 2;
    if (l + 1 == spec_.hidden.size() && hint) *hint = h;
    h = tape.dropout(h, spec_.dropout, training, rng);
  }
  const Tensor out = tape.add_bias(tape.matmul(h, param(p)), param(p + 1));
  return tape.reshape(out, Shape{input.dim(0)});
}

ModelOutput Model::forward(Tape& tape, const Batch& batch, bool training, Rng& dropout_rng) const {
  ModelOutput out;
  const Embedded emb = embed(tape, batch);
  Tensor wide_hint, deep_hint;
  switch (spec_.wide) {
    case WidePart::none: break;
    case WidePart::lr: out.wide = lr_logit(tape, batch); break;
    case WidePart::fm: out.wide = fm_logit(tape, batch, emb.fields, &wide_hint); break;
    case WidePart::cross: out.wide = cross_logit(tape, emb.flat, &wide_hint); break;
    case WidePart::cin: out.wide = cin_logit(tape, emb.fields, &wide_hint); break;
  }
  if (spec_.wide == WidePart::lr) wide_hint = tape.reshape(out.wide, Shape{batch.size, 1});
  if (spec_.has_deep()) out.deep = mlp_logit(tape, emb.flat, training, dropout_rng, &deep_hint);

  if (out.wide.defined() && out.deep.defined()) {
    out.logits = tape.add(out.wide, out.deep);
  } else {
    out.logits = out.wide.defined() ? out.wide : out.deep;
  }
  out.hint = spec_.has_deep() ? deep_hint : wide_hint;
  return out;
}

std::vector<double> Model::predict(const Batch& batch) const {
  Tape tape(false);
  Rng unused(0);
  const auto out = forward(tape, batch, false, unused);
  std::vector<double> probs(batch.size);
  auto z = out.logits.values();
  for (std::size_t i = 0; i < probs.size(); ++i) probs[i] = stable_sigmoid(z[i]);
  return probs;
}

}  // namespace ctrkd::models
