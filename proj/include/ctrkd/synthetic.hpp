#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "ctrkd/features.hpp"

namespace ctrkd::features {

// Click data drawn from a known logit with first-order and pairwise
// (factorized, second-order) field interactions:
//   logit = bias + sum_f w_f[x_f] + sum_{f<g} <u_f[x_f], u_g[x_g]> + sum_j a_j t(x_j)
// where t is transform_numeric. Token ids follow a skewed distribution so
// frequency thresholds have something to collapse.
struct SyntheticSpec {
  std::size_t samples = 100000;
  std::size_t fields = 8;
  std::size_t vocab_per_field = 50;
  std::size_t numeric_fields = 0;
  std::size_t latent_dim = 4;
  double first_order_scale = 0.5;   // std of the summed first-order term
  double interaction_scale = 1.5;   // std of the summed pairwise term
  double bias = -1.0;
  double skew = 1.5;                // token id = floor(V * u^skew)
  std::uint64_t seed = 7;
};

struct SyntheticData {
  EncodedDataset data;              // token id t is encoded as index t + 1
  std::vector<double> probability;  // true click probability per row
};

SyntheticData make_synthetic(const SyntheticSpec& spec);

// Same draws as make_synthetic, as raw records with tokens "<field>_<id>" and
// field names C1.., I1.. (Criteo-style).
std::vector<RawRecord> synthetic_records(const SyntheticSpec& spec);
TableSchema synthetic_schema(const SyntheticSpec& spec);

// Writes records in the schema's delimited layout (label, numerics, categoricals).
void write_records(const std::filesystem::path& path, const std::vector<RawRecord>& rows,
                   const TableSchema& schema);

}  // namespace ctrkd::features
