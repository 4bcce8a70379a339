#include "ctrkd/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <Eigen/Core>

namespace ctrkd {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMatrix>;
using MutMap = Eigen::Map<RowMatrix>;

ConstMap as_matrix(std::span<const double> v, std::size_t rows, std::size_t cols) {
  return ConstMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap as_matrix(std::span<double> v, std::size_t rows, std::size_t cols) {
  return MutMap(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

// Grad buffer of t if it takes part in differentiation, else an empty span.
std::span<double> grad_of(Tensor t) {
  if (!t.requires_grad()) return {};
  t.ensure_grad();
  return t.grad();
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

}  // namespace

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

bool Tape::tracks(std::initializer_list<const Tensor*> inputs) const {
  if (!recording_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::record(const Tensor& output, std::function<void(std::span<const double>)> adjoint) {
  Tensor out = output;
  out.set_requires_grad(true);
  nodes_.push_back(Node{std::move(out), std::move(adjoint)});
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree: " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  as_matrix(out.values(), m, n).noalias() = as_matrix(a.values(), m, k) * as_matrix(b.values(), k, n);
  if (tracks({&a, &b})) {
    record(out, [a, b, m, k, n](std::span<const double> g) mutable {
      auto gm = as_matrix(g, m, n);
      if (auto ga = grad_of(a); !ga.empty()) {
        as_matrix(ga, m, k).noalias() += gm * as_matrix(b.values(), k, n).transpose();
      }
      if (auto gb = grad_of(b); !gb.empty()) {
        as_matrix(gb, k, n).noalias() += as_matrix(a.values(), m, k).transpose() * gm;
      }
    });
  }
  return out;
}

Tensor Tape::transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out(Shape{c, r});
  as_matrix(out.values(), c, r) = as_matrix(a.values(), r, c).transpose();
  if (tracks({&a})) {
    record(out, [a, r, c](std::span<const double> g) mutable {
      as_matrix(grad_of(a), r, c) += as_matrix(g, c, r).transpose();
    });
  }
  return out;
}

Tensor Tape::elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
  if (op != Elementwise::add && op != Elementwise::sub && op != Elementwise::mul) {
    throw std::invalid_argument("elementwise: unary op given two operands");
  }
  const bool a_scalar = a.size() == 1 && a.shape() != b.shape();
  const bool b_scalar = b.size() == 1 && a.shape() != b.shape();
  if (a.shape() != b.shape() && !a_scalar && !b_scalar) {
    throw DimensionError("elementwise: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const Shape& shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape_size(shape);
  Tensor out(shape);
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t i = 0; i < n; ++i) {
    const double x = av[a_scalar ? 0 : i];
    const double y = bv[b_scalar ? 0 : i];
    switch (op) {
      case Elementwise::add: o[i] = x + y; break;
      case Elementwise::sub: o[i] = x - y; break;
      default: o[i] = x * y; break;
    }
  }
  if (tracks({&a, &b})) {
    record(out, [op, a, b, a_scalar, b_scalar, n](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      auto gb = grad_of(b);
      auto av = a.values();
      auto bv = b.values();
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t ia = a_scalar ? 0 : i;
        const std::size_t ib = b_scalar ? 0 : i;
        switch (op) {
          case Elementwise::add:
            if (!ga.empty()) ga[ia] += g[i];
            if (!gb.empty()) gb[ib] += g[i];
            break;
          case Elementwise::sub:
            if (!ga.empty()) ga[ia] += g[i];
            if (!gb.empty()) gb[ib] -= g[i];
            break;
          default:
            if (!ga.empty()) ga[ia] += g[i] * bv[ib];
            if (!gb.empty()) gb[ib] += g[i] * av[ia];
            break;
        }
      }
    });
  }
  return out;
}

Tensor Tape::elementwise(Elementwise op, const Tensor& a) {
  if (op != Elementwise::relu && op != Elementwise::sigmoid && op != Elementwise::square) {
    throw std::invalid_argument("elementwise: binary op given one operand");
  }
  const std::size_t n = a.size();
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case Elementwise::relu: o[i] = av[i] > 0.0 ? av[i] : 0.0; break;
      case Elementwise::sigmoid: o[i] = stable_sigmoid(av[i]); break;
      default: o[i] = av[i] * av[i]; break;
    }
  }
  if (tracks({&a})) {
    record(out, [op, a, out, n](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      auto av = a.values();
      auto ov = out.values();
      for (std::size_t i = 0; i < n; ++i) {
        switch (op) {
          case Elementwise::relu: ga[i] += av[i] > 0.0 ? g[i] : 0.0; break;
          case Elementwise::sigmoid: ga[i] += g[i] * ov[i] * (1.0 - ov[i]); break;
          default: ga[i] += 2.0 * av[i] * g[i]; break;
        }
      }
    });
  }
  return out;
}

Tensor Tape::scale(const Tensor& a, double factor) {
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * factor;
  if (tracks({&a})) {
    record(out, [a, factor](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * factor;
    });
  }
  return out;
}

Tensor Tape::reduce_sum(const Tensor& a, std::size_t axis) {
  if (axis >= a.rank()) {
    throw DimensionError("reduce_sum: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(a.shape()));
  }
  const auto& s = a.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];
  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) out_shape.push_back(s[i]);
  }
  Tensor out(out_shape);
  auto o = out.values();
  auto av = a.values();
  for (std::size_t p = 0; p < outer; ++p) {
    for (std::size_t l = 0; l < len; ++l) {
      const double* row = av.data() + (p * len + l) * inner;
      double* dst = o.data() + p * inner;
      for (std::size_t q = 0; q < inner; ++q) dst[q] += row[q];
    }
  }
  if (tracks({&a})) {
    record(out, [a, outer, len, inner](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      for (std::size_t p = 0; p < outer; ++p) {
        for (std::size_t l = 0; l < len; ++l) {
          double* dst = ga.data() + (p * len + l) * inner;
          const double* src = g.data() + p * inner;
          for (std::size_t q = 0; q < inner; ++q) dst[q] += src[q];
        }
      }
    });
  }
  return out;
}

Tensor Tape::sum(const Tensor& a) {
  if (a.rank() == 0) return a;
  return reduce_sum(reshape(a, Shape{a.size()}), 0);
}

Tensor Tape::mean(const Tensor& a) {
  if (a.size() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor Tape::dropout(const Tensor& a, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return a;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(a.size());
  for (auto& m : mask) m = rng.uniform() >= rate ? keep_scale : 0.0;
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = av[i] * mask[i];
  if (tracks({&a})) {
    record(out, [a, mask = std::move(mask)](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * mask[i];
    });
  }
  return out;
}

Tensor Tape::add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() == 0 || bias.size() != a.shape().back()) {
    throw DimensionError("add_bias: bias " + shape_string(bias.shape()) + " does not match " +
                         shape_string(a.shape()));
  }
  const std::size_t n = bias.size();
  const std::size_t rows = a.size() / std::max<std::size_t>(n, 1);
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  auto bv = bias.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) o[r * n + j] = av[r * n + j] + bv[j];
  }
  if (tracks({&a, &bias})) {
    record(out, [a, bias, rows, n](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      auto gb = grad_of(bias);
      if (!ga.empty()) {
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (!gb.empty()) {
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += g[r * n + j];
        }
      }
    });
  }
  return out;
}

Tensor Tape::scale_rows(const Tensor& a, const Tensor& s) {
  require_rank(a, 2, "scale_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (s.size() != rows) {
    throw DimensionError("scale_rows: scales " + shape_string(s.shape()) + " for " +
                         shape_string(a.shape()));
  }
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  auto sv = s.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = av[r * cols + c] * sv[r];
  }
  if (tracks({&a, &s})) {
    record(out, [a, s, rows, cols](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      auto gs = grad_of(s);
      auto av = a.values();
      auto sv = s.values();
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          if (!ga.empty()) ga[i] += g[i] * sv[r];
          acc += g[i] * av[i];
        }
        if (!gs.empty()) gs[r] += acc;
      }
    });
  }
  return out;
}

Tensor Tape::scale_cols(const Tensor& a, const Tensor& w) {
  require_rank(a, 2, "scale_cols");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  if (w.size() != cols) {
    throw DimensionError("scale_cols: weights " + shape_string(w.shape()) + " for " +
                         shape_string(a.shape()));
  }
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  auto wv = w.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = av[r * cols + c] * wv[c];
  }
  if (tracks({&a, &w})) {
    record(out, [a, w, rows, cols](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      auto gw = grad_of(w);
      auto av = a.values();
      auto wv = w.values();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          const std::size_t i = r * cols + c;
          if (!ga.empty()) ga[i] += g[i] * wv[c];
          if (!gw.empty()) gw[c] += g[i] * av[i];
        }
      }
    });
  }
  return out;
}

Tensor Tape::concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rank() == 2 ? parts.front().dim(0) : 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != rows) throw DimensionError("concat_cols: row counts differ");
    total += p.dim(1);
  }
  Tensor out(Shape{rows, total});
  auto o = out.values();
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    auto pv = p.values();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(pv.data() + r * w, w, o.data() + r * total + offset);
    }
    offset += w;
  }
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (recording_ && any) {
    std::vector<Tensor> inputs(parts.begin(), parts.end());
    record(out, [inputs, rows, total](std::span<const double> g) mutable {
      std::size_t offset = 0;
      for (auto& p : inputs) {
        const std::size_t w = p.dim(1);
        if (auto gp = grad_of(p); !gp.empty()) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < w; ++c) gp[r * w + c] += g[r * total + offset + c];
          }
        }
        offset += w;
      }
    });
  }
  return out;
}

Tensor Tape::reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " to " + shape_string(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(a.values().begin(), a.values().end()));
  if (tracks({&a})) {
    record(out, [a](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor Tape::gather_rows(const Tensor& table, std::span<const std::uint32_t> indices) {
  require_rank(table, 2, "gather_rows");
  const std::size_t vocab = table.dim(0), d = table.dim(1);
  Tensor out(Shape{indices.size(), d});
  auto o = out.values();
  auto tv = table.values();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= vocab) {
      throw std::out_of_range("gather_rows: index " + std::to_string(indices[i]) +
                              " outside table of " + std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + indices[i] * d, d, o.data() + i * d);
  }
  if (tracks({&table})) {
    std::vector<std::uint32_t> idx(indices.begin(), indices.end());
    record(out, [table, idx = std::move(idx), d](std::span<const double> g) mutable {
      auto gt = grad_of(table);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        double* dst = gt.data() + idx[i] * d;
        const double* src = g.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    });
  }
  return out;
}

Tensor Tape::pairwise_hadamard(const Tensor& a, const Tensor& b) {
  require_rank(a, 3, "pairwise_hadamard");
  require_rank(b, 3, "pairwise_hadamard");
  const std::size_t batch = a.dim(0), h = a.dim(1), d = a.dim(2), f = b.dim(1);
  if (b.dim(0) != batch || b.dim(2) != d) {
    throw DimensionError("pairwise_hadamard: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  Tensor out(Shape{batch, h * f, d});
  auto o = out.values();
  auto av = a.values();
  auto bv = b.values();
  for (std::size_t n = 0; n < batch; ++n) {
    for (std::size_t i = 0; i < h; ++i) {
      const double* x = av.data() + (n * h + i) * d;
      for (std::size_t j = 0; j < f; ++j) {
        const double* y = bv.data() + (n * f + j) * d;
        double* z = o.data() + ((n * h + i) * f + j) * d;
        for (std::size_t k = 0; k < d; ++k) z[k] = x[k] * y[k];
      }
    }
  }
  if (tracks({&a, &b})) {
    record(out, [a, b, batch, h, f, d](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      auto gb = grad_of(b);
      auto av = a.values();
      auto bv = b.values();
      for (std::size_t n = 0; n < batch; ++n) {
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < f; ++j) {
            const double* gz = g.data() + ((n * h + i) * f + j) * d;
            const std::size_t ai = (n * h + i) * d;
            const std::size_t bj = (n * f + j) * d;
            for (std::size_t k = 0; k < d; ++k) {
              if (!ga.empty()) ga[ai + k] += gz[k] * bv[bj + k];
              if (!gb.empty()) gb[bj + k] += gz[k] * av[ai + k];
            }
          }
        }
      }
    });
  }
  return out;
}

Tensor Tape::mix_maps(const Tensor& weight, const Tensor& z) {
  require_rank(weight, 2, "mix_maps");
  require_rank(z, 3, "mix_maps");
  const std::size_t out_maps = weight.dim(0), k = weight.dim(1);
  const std::size_t batch = z.dim(0), d = z.dim(2);
  if (z.dim(1) != k) {
    throw DimensionError("mix_maps: weight " + shape_string(weight.shape()) + " vs maps " +
                         shape_string(z.shape()));
  }
  Tensor out(Shape{batch, out_maps, d});
  auto w = as_matrix(weight.values(), out_maps, k);
  for (std::size_t n = 0; n < batch; ++n) {
    as_matrix(out.values().subspan(n * out_maps * d, out_maps * d), out_maps, d).noalias() =
        w * as_matrix(z.values().subspan(n * k * d, k * d), k, d);
  }
  if (tracks({&weight, &z})) {
    record(out, [weight, z, out_maps, k, batch, d](std::span<const double> g) mutable {
      auto gw = grad_of(weight);
      auto gz = grad_of(z);
      auto w = as_matrix(weight.values(), out_maps, k);
      for (std::size_t n = 0; n < batch; ++n) {
        auto gn = as_matrix(g.subspan(n * out_maps * d, out_maps * d), out_maps, d);
        if (!gw.empty()) {
          as_matrix(gw, out_maps, k).noalias() +=
              gn * as_matrix(z.values().subspan(n * k * d, k * d), k, d).transpose();
        }
        if (!gz.empty()) {
          as_matrix(gz.subspan(n * k * d, k * d), k, d).noalias() += w.transpose() * gn;
        }
      }
    });
  }
  return out;
}

Tensor Tape::softmax_rows(const Tensor& a) {
  require_rank(a, 2, "softmax_rows");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  Tensor out(a.shape());
  auto o = out.values();
  auto av = a.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = av.data() + r * cols;
    double* y = o.data() + r * cols;
    const double peak = *std::max_element(x, x + cols);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      y[c] = std::exp(x[c] - peak);
      total += y[c];
    }
    for (std::size_t c = 0; c < cols; ++c) y[c] /= total;
  }
  if (tracks({&a})) {
    record(out, [a, out, rows, cols](std::span<const double> g) mutable {
      auto ga = grad_of(a);
      auto y = out.values();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (std::size_t c = 0; c < cols; ++c) {
          ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      }
    });
  }
  return out;
}

Tensor Tape::cross_entropy(const Tensor& probs, const Tensor& targets) {
  if (probs.size() != targets.size() || probs.size() == 0) {
    throw DimensionError("cross_entropy: " + shape_string(probs.shape()) + " vs " +
                         shape_string(targets.shape()));
  }
  const std::size_t n = probs.size();
  auto pv = probs.values();
  auto tv = targets.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double q = std::clamp(pv[i], kProbEpsilon, 1.0 - kProbEpsilon);
    total += tv[i] * std::log(q) + (1.0 - tv[i]) * std::log(1.0 - q);
  }
  Tensor out = Tensor::scalar(-total / static_cast<double>(n));
  if (tracks({&probs, &targets})) {
    record(out, [probs, targets, n](std::span<const double> g) mutable {
      auto gp = grad_of(probs);
      auto gt = grad_of(targets);
      auto pv = probs.values();
      auto tv = targets.values();
      const double scale = g[0] / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Gradient is taken at the clamped probability and passed straight through.
        const double q = std::clamp(pv[i], kProbEpsilon, 1.0 - kProbEpsilon);
        if (!gp.empty()) gp[i] += scale * (q - tv[i]) / (q * (1.0 - q));
        if (!gt.empty()) gt[i] += scale * (std::log(1.0 - q) - std::log(q));
      }
    });
  }
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_string(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward: loss does not depend on any recorded parameter");
  }
  for (auto& node : nodes_) {
    node.output.ensure_grad();
    node.output.zero_grad();
  }
  Tensor seed = loss;
  seed.ensure_grad();
  seed.grad()[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->adjoint(it->output.grad());
  }
}

}  // namespace ctrkd
