#include "ctrkd/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ctrkd/rng.hpp"
#include "ctrkd/tape.hpp"

namespace ctrkd::features {
namespace {

struct Draw {
  std::vector<std::uint32_t> tokens;  // samples x fields
  std::vector<double> numeric;        // samples x numeric_fields, raw values
  std::vector<double> labels;
  std::vector<double> probability;
};

Draw draw(const SyntheticSpec& spec) {
  if (spec.fields == 0 || spec.vocab_per_field == 0 || spec.latent_dim == 0) {
    throw std::invalid_argument("synthetic spec needs fields, vocabulary and latent dim > 0");
  }
  Rng rng(spec.seed);
  const std::size_t nf = spec.fields, vocab = spec.vocab_per_field, k = spec.latent_dim;
  const std::size_t nn = spec.numeric_fields;

  const double w_std = spec.first_order_scale / std::sqrt(static_cast<double>(nf));
  const double pairs = static_cast<double>(nf * (nf - 1) / 2);
  const double u_std =
      pairs > 0 ? std::pow(spec.interaction_scale * spec.interaction_scale /
                               (pairs * static_cast<double>(k)),
                           0.25)
                : 0.0;
  std::vector<double> first(nf * vocab), latent(nf * vocab * k), numeric_w(nn);
  for (auto& w : first) w = rng.normal(0.0, w_std);
  for (auto& u : latent) u = rng.normal(0.0, u_std);
  for (auto& a : numeric_w) a = rng.normal(0.0, 0.3);

  Draw d;
  d.tokens.resize(spec.samples * nf);
  d.numeric.resize(spec.samples * nn);
  d.labels.resize(spec.samples);
  d.probability.resize(spec.samples);
  std::vector<double> sum(k), sq(k);
  for (std::size_t s = 0; s < spec.samples; ++s) {
    double logit = spec.bias;
    std::fill(sum.begin(), sum.end(), 0.0);
    std::fill(sq.begin(), sq.end(), 0.0);
    for (std::size_t f = 0; f < nf; ++f) {
      auto t = static_cast<std::uint32_t>(static_cast<double>(vocab) *
                                          std::pow(rng.uniform(), spec.skew));
      if (t >= vocab) t = static_cast<std::uint32_t>(vocab - 1);
      d.tokens[s * nf + f] = t;
      logit += first[f * vocab + t];
      const double* u = latent.data() + (f * vocab + t) * k;
      for (std::size_t j = 0; j < k; ++j) {
        sum[j] += u[j];
        sq[j] += u[j] * u[j];
      }
    }
    for (std::size_t j = 0; j < k; ++j) logit += 0.5 * (sum[j] * sum[j] - sq[j]);
    for (std::size_t j = 0; j < nn; ++j) {
      const double raw = std::floor(std::exp(rng.normal(1.0, 1.2)));
      d.numeric[s * nn + j] = raw;
      logit += numeric_w[j] * (transform_numeric(raw) - 1.0);
    }
    const double p = stable_sigmoid(logit);
    d.probability[s] = p;
    d.labels[s] = rng.uniform() < p ? 1.0 : 0.0;
  }
  return d;
}

}  // namespace

SyntheticData make_synthetic(const SyntheticSpec& spec) {
  const Draw d = draw(spec);
  InputLayout layout;
  layout.field_sizes.assign(spec.fields, spec.vocab_per_field + 1);
  layout.num_numeric = spec.numeric_fields;
  SyntheticData out{EncodedDataset(layout), d.probability};
  std::vector<std::uint32_t> cats(spec.fields);
  std::vector<double> nums(spec.numeric_fields);
  for (std::size_t s = 0; s < spec.samples; ++s) {
    for (std::size_t f = 0; f < spec.fields; ++f) cats[f] = d.tokens[s * spec.fields + f] + 1;
    for (std::size_t j = 0; j < spec.numeric_fields; ++j) {
      nums[j] = transform_numeric(d.numeric[s * spec.numeric_fields + j]);
    }
    out.data.append(cats, nums, d.labels[s]);
  }
  return out;
}

std::vector<RawRecord> synthetic_records(const SyntheticSpec& spec) {
  const Draw d = draw(spec);
  std::vector<RawRecord> rows(spec.samples);
  for (std::size_t s = 0; s < spec.samples; ++s) {
    auto& r = rows[s];
    r.label = static_cast<int>(d.labels[s]);
    for (std::size_t f = 0; f < spec.fields; ++f) {
      r.categorical.push_back("C" + std::to_string(f + 1) + "_" +
                              std::to_string(d.tokens[s * spec.fields + f]));
    }
    for (std::size_t j = 0; j < spec.numeric_fields; ++j) {
      r.numeric.push_back(d.numeric[s * spec.numeric_fields + j]);
    }
  }
  return rows;
}

TableSchema synthetic_schema(const SyntheticSpec& spec) {
  TableSchema s;
  s.label_position = 0;
  s.delimiter = '\t';
  for (std::size_t j = 0; j < spec.numeric_fields; ++j) {
    s.fields.push_back({"I" + std::to_string(j + 1), FieldKind::numeric, 1 + j});
  }
  for (std::size_t f = 0; f < spec.fields; ++f) {
    s.fields.push_back(
        {"C" + std::to_string(f + 1), FieldKind::categorical, 1 + spec.numeric_fields + f});
  }
  return s;
}

void write_records(const std::filesystem::path& path, const std::vector<RawRecord>& rows,
                   const TableSchema& schema) {
  schema.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const std::size_t ncols = schema.min_columns();
  std::vector<std::string> cols(ncols);
  char buf[64];
  for (const auto& r : rows) {
    std::fill(cols.begin(), cols.end(), std::string());
    cols[schema.label_position] = std::to_string(r.label);
    std::size_t ci = 0, ni = 0;
    for (const auto& f : schema.fields) {
      if (f.kind == FieldKind::categorical) {
        cols[f.position] = r.categorical.at(ci++);
      } else {
        const double v = r.numeric.at(ni++);
        if (v == std::floor(v) && std::abs(v) < 1e15) {
          std::snprintf(buf, sizeof buf, "%.0f", v);
        } else {
          std::snprintf(buf, sizeof buf, "%.17g", v);
        }
        cols[f.position] = buf;
      }
    }
    if (schema.day_position && cols[*schema.day_position].empty()) {
      cols[*schema.day_position] = r.day;
    }
    for (std::size_t c = 0; c < ncols; ++c) {
      if (c) out << schema.delimiter;
      out << cols[c];
    }
    out << '\n';
  }
  if (!out) throw DataError("write failed for " + path.string());
}

}  // namespace ctrkd::features
