#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ctrkd::features {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class FieldKind { categorical, numeric };

struct FieldSchema {
  std::string name;
  FieldKind kind = FieldKind::categorical;
  std::size_t position = 0;  // column index in the input file
};

// Column layout of a delimited click log.
struct TableSchema {
  std::vector<FieldSchema> fields;
  std::size_t label_position = 0;
  char delimiter = '\t';
  bool has_header = false;
  // Optional day key for sequential splits; the first day_prefix characters of
  // the column are used (0 = whole token).
  std::optional<std::size_t> day_position;
  std::size_t day_prefix = 0;

  void validate() const;
  std::size_t num_categorical() const;
  std::size_t num_numeric() const;
  std::vector<std::string> categorical_names() const;
  std::size_t min_columns() const;
};

// Criteo layout: label, I1..I13, C1..C26, tab separated.
TableSchema criteo_schema();
// Avazu layout: id, click, hour, 21 categorical columns, comma separated, header row.
// The hour column is kept both as a feature and as the day key (YYMMDD prefix).
TableSchema avazu_schema();

struct RawRecord {
  std::vector<std::string> categorical;
  std::vector<double> numeric;  // raw values, missing/negative already zero
  int label = 0;
  std::string day;
};

RawRecord parse_line(std::string_view line, const TableSchema& schema);
// Reads a delimited file, gzip-compressed or plain.
std::vector<RawRecord> read_table(const std::filesystem::path& path, const TableSchema& schema);

// x <= 2 -> x, x > 2 -> (ln x)^2.
double transform_numeric(double x);

inline constexpr std::uint32_t kUnknownIndex = 0;
inline constexpr std::string_view kUnknownToken = "<UNK>";

// Per-field token -> dense index maps; index 0 of every field is UNK.
class Vocabulary {
 public:
  Vocabulary() = default;

  // Counts tokens over rows[i] for i in `rows_subset` (all rows when empty).
  static Vocabulary build(std::span<const RawRecord> rows, const TableSchema& schema,
                          std::size_t min_count, std::span<const std::size_t> rows_subset = {});

  std::size_t num_fields() const { return fields_.size(); }
  const std::vector<std::string>& field_names() const { return names_; }
  std::size_t size(std::size_t field) const { return fields_.at(field).tokens.size() + 1; }
  std::vector<std::size_t> sizes() const;
  std::size_t min_count() const { return min_count_; }

  std::uint32_t encode(std::size_t field, std::string_view token) const;
  // Token for an index, or "<UNK>" for index 0.
  std::string_view decode(std::size_t field, std::uint32_t index) const;

  // Sorted `field<TAB>token<TAB>index` lines.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text, const std::vector<std::string>& field_names);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path,
                         const std::vector<std::string>& field_names);
  std::uint64_t fingerprint() const;

  bool operator==(const Vocabulary& other) const;

 private:
  struct Field {
    std::map<std::string, std::uint32_t, std::less<>> index;
    std::vector<std::string> tokens;  // tokens[i - 1] has index i
  };
  std::vector<std::string> names_;
  std::vector<Field> fields_;
  std::size_t min_count_ = 1;
};

// Shape of model inputs: vocabulary size per categorical field and the
// number of numeric fields.
struct InputLayout {
  std::vector<std::size_t> field_sizes;
  std::size_t num_numeric = 0;

  std::size_t num_categorical() const { return field_sizes.size(); }
  std::string to_string() const;
  static InputLayout parse(std::string_view text);
  bool operator==(const InputLayout&) const = default;
};

// Encoded samples stored row-major. Label reads through label() are counted so
// tests can prove which code paths consult labels.
class EncodedDataset {
 public:
  EncodedDataset() = default;
  explicit EncodedDataset(InputLayout layout) : layout_(std::move(layout)) {}

  const InputLayout& layout() const { return layout_; }
  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }

  void append(std::span<const std::uint32_t> categorical, std::span<const double> numeric,
              double label);

  std::span<const std::uint32_t> categorical(std::size_t row) const;
  std::span<const double> numeric(std::size_t row) const;
  double label(std::size_t row) const;

  std::size_t label_reads() const { return label_reads_; }
  void reset_label_reads() { label_reads_ = 0; }

  EncodedDataset subset(std::span<const std::size_t> rows) const;
  static EncodedDataset concat(const EncodedDataset& a, const EncodedDataset& b);

 private:
  InputLayout layout_;
  std::vector<std::uint32_t> categorical_;
  std::vector<double> numeric_;
  std::vector<double> labels_;
  mutable std::size_t label_reads_ = 0;
};

// Mini-batch in field-major order: categorical[f * size + i] is field f of row i.
struct Batch {
  std::size_t size = 0;
  std::size_t num_categorical = 0;
  std::size_t num_numeric = 0;
  std::vector<std::uint32_t> categorical;
  std::vector<double> numeric;  // numeric[j * size + i]
  std::vector<double> labels;   // empty for unlabeled batches

  std::span<const std::uint32_t> field(std::size_t f) const {
    return std::span(categorical).subspan(f * size, size);
  }
  std::span<const double> numeric_field(std::size_t j) const {
    return std::span(numeric).subspan(j * size, size);
  }
  bool labeled() const { return !labels.empty(); }
};

Batch make_batch(const EncodedDataset& data, std::span<const std::size_t> rows, bool with_labels);

// Row order for one epoch: identity, or a permutation fixed by `seed`.
std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::uint64_t seed);

// Streams consecutive batches over one epoch; the last batch may be partial.
class BatchStream {
 public:
  BatchStream(const EncodedDataset& data, std::size_t batch_size, bool shuffle, std::uint64_t seed,
              bool with_labels = true);
  std::optional<Batch> next();
  std::size_t num_batches() const;

 private:
  const EncodedDataset* data_;
  std::size_t batch_size_;
  bool with_labels_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct SplitStrategy {
  enum class Kind { random_ratio, sequential };
  Kind kind = Kind::random_ratio;
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::size_t train_days = 0;  // sequential: leading days used for training
  std::uint64_t seed = 0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

// `days` is required for sequential splits (one key per row, sorted
// lexicographically to order days); the rows after the training days are
// shuffled with the seed and halved into validation and test.
SplitIndices split(std::size_t num_rows, const SplitStrategy& strategy,
                   std::span<const std::string> days = {});

// Day keys "000", "001", ... assigning rows in file order to `num_days` equal chunks.
std::vector<std::string> row_order_days(std::size_t num_rows, std::size_t num_days);

struct PipelineStats {
  std::vector<std::size_t> vocab_sizes;
  std::vector<std::size_t> collapsed_tokens;  // distinct training tokens mapped to UNK
  std::vector<std::size_t> train_unk_count;   // UNK occurrences per field in training rows
  std::size_t train_rows = 0;
  std::size_t val_rows = 0;
  std::size_t test_rows = 0;
};

struct PreparedData {
  Vocabulary vocabulary;
  EncodedDataset train;
  EncodedDataset val;
  EncodedDataset test;
  SplitIndices split;
  PipelineStats stats;
};

EncodedDataset encode(std::span<const RawRecord> rows, std::span<const std::size_t> subset,
                      const Vocabulary& vocab);

// Split, build the vocabulary on the training rows only, encode every partition.
PreparedData prepare(std::span<const RawRecord> rows, const TableSchema& schema,
                     const SplitStrategy& strategy, std::size_t min_count);

}  // namespace ctrkd::features
