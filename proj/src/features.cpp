#include "ctrkd/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <zlib.h>

#include "ctrkd/hash.hpp"
#include "ctrkd/rng.hpp"

namespace ctrkd::features {
namespace {

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

double parse_numeric(std::string_view token) {
  if (token.empty()) return 0.0;
  double v = 0.0;
  const auto* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, v);
  if (ec != std::errc() || ptr != end || !std::isfinite(v)) {
    throw DataError("malformed numeric value '" + std::string(token) + "'");
  }
  return v < 0.0 ? 0.0 : v;
}

std::vector<std::size_t> parse_size_list(std::string_view text) {
  std::vector<std::size_t> out;
  if (text.empty()) return out;
  for (auto part : split_fields(text, ',')) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size()) {
      throw DataError("malformed integer list '" + std::string(text) + "'");
    }
    out.push_back(v);
  }
  return out;
}

}  // namespace

void TableSchema::validate() const {
  if (fields.empty()) throw DataError("schema has no feature fields");
  std::vector<std::size_t> positions;
  std::set<std::string> names;
  for (const auto& f : fields) {
    if (f.position == label_position) {
      throw DataError("field '" + f.name + "' overlaps the label column");
    }
    if (!names.insert(f.name).second) throw DataError("duplicate field name '" + f.name + "'");
    positions.push_back(f.position);
  }
  std::sort(positions.begin(), positions.end());
  for (std::size_t i = 1; i < positions.size(); ++i) {
    if (positions[i] == positions[i - 1]) {
      throw DataError("duplicate field position " + std::to_string(positions[i]));
    }
    if (positions[i] != positions[i - 1] + 1) {
      throw DataError("feature columns are not contiguous");
    }
  }
}

std::size_t TableSchema::num_categorical() const {
  return static_cast<std::size_t>(std::count_if(fields.begin(), fields.end(), [](const auto& f) {
    return f.kind == FieldKind::categorical;
  }));
}

std::size_t TableSchema::num_numeric() const { return fields.size() - num_categorical(); }

std::vector<std::string> TableSchema::categorical_names() const {
  std::vector<std::string> out;
  for (const auto& f : fields) {
    if (f.kind == FieldKind::categorical) out.push_back(f.name);
  }
  return out;
}

std::size_t TableSchema::min_columns() const {
  std::size_t m = label_position + 1;
  for (const auto& f : fields) m = std::max(m, f.position + 1);
  if (day_position) m = std::max(m, *day_position + 1);
  return m;
}

TableSchema criteo_schema() {
  TableSchema s;
  s.label_position = 0;
  s.delimiter = '\t';
  for (std::size_t i = 0; i < 13; ++i) {
    s.fields.push_back({"I" + std::to_string(i + 1), FieldKind::numeric, 1 + i});
  }
  for (std::size_t i = 0; i < 26; ++i) {
    s.fields.push_back({"C" + std::to_string(i + 1), FieldKind::categorical, 14 + i});
  }
  return s;
}

TableSchema avazu_schema() {
  static const char* names[] = {"hour",           "C1",           "banner_pos",   "site_id",
                                "site_domain",    "site_category", "app_id",       "app_domain",
                                "app_category",   "device_id",    "device_ip",    "device_model",
                                "device_type",    "device_conn_type", "C14",      "C15",
                                "C16",            "C17",          "C18",          "C19",
                                "C20",            "C21"};
  TableSchema s;
  s.label_position = 1;
  s.delimiter = ',';
  s.has_header = true;
  for (std::size_t i = 0; i < std::size(names); ++i) {
    s.fields.push_back({names[i], FieldKind::categorical, 2 + i});
  }
  s.day_position = 2;
  s.day_prefix = 6;
  return s;
}

RawRecord parse_line(std::string_view line, const TableSchema& schema) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  const auto cols = split_fields(line, schema.delimiter);
  if (cols.size() < schema.min_columns()) {
    throw DataError("row has " + std::to_string(cols.size()) + " columns, schema needs " +
                    std::to_string(schema.min_columns()));
  }
  RawRecord rec;
  const auto label = cols[schema.label_position];
  if (label == "0") {
    rec.label = 0;
  } else if (label == "1") {
    rec.label = 1;
  } else {
    throw DataError("label must be 0 or 1, got '" + std::string(label) + "'");
  }
  for (const auto& f : schema.fields) {
    if (f.kind == FieldKind::categorical) {
      rec.categorical.emplace_back(cols[f.position]);
    } else {
      rec.numeric.push_back(parse_numeric(cols[f.position]));
    }
  }
  if (schema.day_position) {
    auto day = cols[*schema.day_position];
    if (schema.day_prefix > 0) day = day.substr(0, schema.day_prefix);
    rec.day = std::string(day);
  }
  return rec;
}

std::vector<RawRecord> read_table(const std::filesystem::path& path, const TableSchema& schema) {
  schema.validate();
  gzFile file = gzopen(path.string().c_str(), "rb");
  if (file == nullptr) throw DataError("cannot open " + path.string());
  std::vector<RawRecord> rows;
  std::string pending;
  std::vector<char> buffer(1 << 16);
  std::size_t line_no = 0;
  bool header_skipped = !schema.has_header;

  auto consume = [&](std::string_view line) {
    ++line_no;
    if (!header_skipped) {
      header_skipped = true;
      return;
    }
    if (line.empty() || line == "\r") return;
    try {
      rows.push_back(parse_line(line, schema));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  };

  while (true) {
    const int got = gzread(file, buffer.data(), static_cast<unsigned>(buffer.size()));
    if (got < 0) {
      gzclose(file);
      throw DataError("read error in " + path.string());
    }
    if (got == 0) break;
    pending.append(buffer.data(), static_cast<std::size_t>(got));
    std::size_t start = 0;
    for (auto pos = pending.find('\n'); pos != std::string::npos; pos = pending.find('\n', start)) {
      consume(std::string_view(pending).substr(start, pos - start));
      start = pos + 1;
    }
    pending.erase(0, start);
  }
  gzclose(file);
  if (!pending.empty()) consume(pending);
  return rows;
}

double transform_numeric(double x) {
  if (x > 2.0) {
    const double l = std::log(x);
    return l * l;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary Vocabulary::build(std::span<const RawRecord> rows, const TableSchema& schema,
                             std::size_t min_count, std::span<const std::size_t> rows_subset) {
  schema.validate();
  if (rows.empty()) throw DataError("cannot build a vocabulary from no rows");
  Vocabulary v;
  v.names_ = schema.categorical_names();
  v.min_count_ = std::max<std::size_t>(min_count, 1);
  const std::size_t nf = v.names_.size();
  std::vector<std::unordered_map<std::string_view, std::size_t>> counts(nf);

  auto count_row = [&](const RawRecord& r) {
    if (r.categorical.size() != nf) {
      throw DataError("row has " + std::to_string(r.categorical.size()) +
                      " categorical columns, schema names " + std::to_string(nf));
    }
    for (std::size_t f = 0; f < nf; ++f) ++counts[f][r.categorical[f]];
  };
  if (rows_subset.empty()) {
    for (const auto& r : rows) count_row(r);
  } else {
    for (auto i : rows_subset) count_row(rows[i]);
  }

  v.fields_.resize(nf);
  for (std::size_t f = 0; f < nf; ++f) {
    std::vector<std::string> kept;
    for (const auto& [tok, c] : counts[f]) {
      if (c >= v.min_count_) kept.emplace_back(tok);
    }
    std::sort(kept.begin(), kept.end());
    auto& field = v.fields_[f];
    for (std::size_t i = 0; i < kept.size(); ++i) {
      field.index.emplace(kept[i], static_cast<std::uint32_t>(i + 1));
    }
    field.tokens = std::move(kept);
  }
  return v;
}

std::vector<std::size_t> Vocabulary::sizes() const {
  std::vector<std::size_t> out;
  for (std::size_t f = 0; f < fields_.size(); ++f) out.push_back(size(f));
  return out;
}

std::uint32_t Vocabulary::encode(std::size_t field, std::string_view token) const {
  const auto& idx = fields_.at(field).index;
  auto it = idx.find(token);
  return it == idx.end() ? kUnknownIndex : it->second;
}

std::string_view Vocabulary::decode(std::size_t field, std::uint32_t index) const {
  const auto& f = fields_.at(field);
  if (index == kUnknownIndex || index > f.tokens.size()) return kUnknownToken;
  return f.tokens[index - 1];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    const auto& toks = fields_[f].tokens;
    for (std::size_t i = 0; i < toks.size(); ++i) {
      out += names_[f];
      out += '\t';
      out += toks[i];
      out += '\t';
      out += std::to_string(i + 1);
      out += '\n';
    }
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text,
                                   const std::vector<std::string>& field_names) {
  Vocabulary v;
  v.names_ = field_names;
  v.fields_.resize(field_names.size());
  std::unordered_map<std::string_view, std::size_t> field_of;
  for (std::size_t f = 0; f < field_names.size(); ++f) field_of[field_names[f]] = f;

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;
    const auto cols = split_fields(line, '\t');
    if (cols.size() != 3) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": expected 3 columns");
    }
    auto it = field_of.find(cols[0]);
    if (it == field_of.end()) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": unknown field '" +
                      std::string(cols[0]) + "'");
    }
    auto& field = v.fields_[it->second];
    std::uint32_t index = 0;
    auto [ptr, ec] = std::from_chars(cols[2].data(), cols[2].data() + cols[2].size(), index);
    if (ec != std::errc() || ptr != cols[2].data() + cols[2].size() ||
        index != field.tokens.size() + 1) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": index out of sequence");
    }
    std::string tok(cols[1]);
    if (!field.tokens.empty() && !(field.tokens.back() < tok)) {
      throw DataError("vocabulary line " + std::to_string(line_no) + ": tokens not sorted");
    }
    field.index.emplace(tok, index);
    field.tokens.push_back(std::move(tok));
  }
  return v;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  for (const auto& f : fields_) {
    for (const auto& t : f.tokens) {
      if (t.find_first_of("\t\n") != std::string::npos) {
        throw DataError("token with tab or newline cannot be persisted");
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << serialize();
  if (!out) throw DataError("write failed for " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path,
                            const std::vector<std::string>& field_names) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str(), field_names);
}

std::uint64_t Vocabulary::fingerprint() const {
  Fnv1a h;
  for (const auto& n : names_) {
    h.update(n);
    h.update("\n");
  }
  h.update(serialize());
  return h.digest();
}

bool Vocabulary::operator==(const Vocabulary& other) const {
  if (names_ != other.names_ || fields_.size() != other.fields_.size()) return false;
  for (std::size_t f = 0; f < fields_.size(); ++f) {
    if (fields_[f].tokens != other.fields_[f].tokens) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Layout and encoded data

std::string InputLayout::to_string() const {
  std::string out = "fields=";
  for (std::size_t i = 0; i < field_sizes.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(field_sizes[i]);
  }
  out += ";numeric=" + std::to_string(num_numeric);
  return out;
}

InputLayout InputLayout::parse(std::string_view text) {
  const auto parts = split_fields(text, ';');
  if (parts.size() != 2 || !parts[0].starts_with("fields=") || !parts[1].starts_with("numeric=")) {
    throw DataError("malformed input layout '" + std::string(text) + "'");
  }
  InputLayout layout;
  layout.field_sizes = parse_size_list(parts[0].substr(7));
  const auto numeric = parse_size_list(parts[1].substr(8));
  if (numeric.size() != 1) throw DataError("malformed input layout '" + std::string(text) + "'");
  layout.num_numeric = numeric[0];
  return layout;
}

void EncodedDataset::append(std::span<const std::uint32_t> categorical,
                            std::span<const double> numeric, double label) {
  if (categorical.size() != layout_.num_categorical() || numeric.size() != layout_.num_numeric) {
    throw DataError("sample does not match the dataset layout");
  }
  for (std::size_t f = 0; f < categorical.size(); ++f) {
    if (categorical[f] >= layout_.field_sizes[f]) {
      throw DataError("index " + std::to_string(categorical[f]) + " exceeds vocabulary of field " +
                      std::to_string(f));
    }
  }
  for (double x : numeric) {
    if (!std::isfinite(x)) throw DataError("non-finite numeric value");
  }
  if (label != 0.0 && label != 1.0) throw DataError("label must be 0 or 1");
  categorical_.insert(categorical_.end(), categorical.begin(), categorical.end());
  numeric_.insert(numeric_.end(), numeric.begin(), numeric.end());
  labels_.push_back(label);
}

std::span<const std::uint32_t> EncodedDataset::categorical(std::size_t row) const {
  const std::size_t f = layout_.num_categorical();
  return std::span(categorical_).subspan(row * f, f);
}

std::span<const double> EncodedDataset::numeric(std::size_t row) const {
  const std::size_t n = layout_.num_numeric;
  return std::span(numeric_).subspan(row * n, n);
}

double EncodedDataset::label(std::size_t row) const {
  ++label_reads_;
  return labels_.at(row);
}

EncodedDataset EncodedDataset::subset(std::span<const std::size_t> rows) const {
  EncodedDataset out(layout_);
  const std::size_t f = layout_.num_categorical(), n = layout_.num_numeric;
  out.categorical_.reserve(rows.size() * f);
  out.numeric_.reserve(rows.size() * n);
  out.labels_.reserve(rows.size());
  for (auto r : rows) {
    auto c = categorical(r);
    auto x = numeric(r);
    out.categorical_.insert(out.categorical_.end(), c.begin(), c.end());
    out.numeric_.insert(out.numeric_.end(), x.begin(), x.end());
    out.labels_.push_back(labels_.at(r));
  }
  return out;
}

EncodedDataset EncodedDataset::concat(const EncodedDataset& a, const EncodedDataset& b) {
  if (!(a.layout_ == b.layout_)) throw DataError("cannot concatenate datasets of different layout");
  EncodedDataset out = a;
  out.label_reads_ = 0;
  out.categorical_.insert(out.categorical_.end(), b.categorical_.begin(), b.categorical_.end());
  out.numeric_.insert(out.numeric_.end(), b.numeric_.begin(), b.numeric_.end());
  out.labels_.insert(out.labels_.end(), b.labels_.begin(), b.labels_.end());
  return out;
}

Batch make_batch(const EncodedDataset& data, std::span<const std::size_t> rows, bool with_labels) {
  Batch b;
  b.size = rows.size();
  b.num_categorical = data.layout().num_categorical();
  b.num_numeric = data.layout().num_numeric;
  b.categorical.resize(b.size * b.num_categorical);
  b.numeric.resize(b.size * b.num_numeric);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto c = data.categorical(rows[i]);
    for (std::size_t f = 0; f < b.num_categorical; ++f) b.categorical[f * b.size + i] = c[f];
    auto x = data.numeric(rows[i]);
    for (std::size_t j = 0; j < b.num_numeric; ++j) b.numeric[j * b.size + i] = x[j];
  }
  if (with_labels) {
    b.labels.resize(b.size);
    for (std::size_t i = 0; i < rows.size(); ++i) b.labels[i] = data.label(rows[i]);
  }
  return b;
}

std::vector<std::size_t> epoch_order(std::size_t n, bool shuffle, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());
  }
  return order;
}

BatchStream::BatchStream(const EncodedDataset& data, std::size_t batch_size, bool shuffle,
                         std::uint64_t seed, bool with_labels)
    : data_(&data), batch_size_(batch_size), with_labels_(with_labels) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  if (data.empty()) throw DataError("cannot batch an empty dataset");
  order_ = epoch_order(data.size(), shuffle, seed);
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  auto rows = std::span(order_).subspan(cursor_, end - cursor_);
  cursor_ = end;
  return make_batch(*data_, rows, with_labels_);
}

std::size_t BatchStream::num_batches() const {
  return (order_.size() + batch_size_ - 1) / batch_size_;
}

// ---------------------------------------------------------------------------
// Splits

SplitIndices split(std::size_t num_rows, const SplitStrategy& strategy,
                   std::span<const std::string> days) {
  SplitIndices out;
  if (strategy.kind == SplitStrategy::Kind::random_ratio) {
    for (double r : {strategy.train, strategy.val, strategy.test}) {
      if (!(r >= 0.0 && r <= 1.0)) throw std::invalid_argument("split ratios must lie in [0, 1]");
    }
    if (std::abs(strategy.train + strategy.val + strategy.test - 1.0) > 1e-9) {
      throw std::invalid_argument("split ratios must sum to 1");
    }
    auto order = epoch_order(num_rows, true, strategy.seed);
    const auto n = static_cast<double>(num_rows);
    const std::size_t n_train = std::min<std::size_t>(num_rows, std::llround(n * strategy.train));
    const std::size_t n_val =
        std::min<std::size_t>(num_rows - n_train, std::llround(n * strategy.val));
    out.train.assign(order.begin(), order.begin() + n_train);
    out.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    out.test.assign(order.begin() + n_train + n_val, order.end());
  } else {
    if (days.size() != num_rows ||
        std::any_of(days.begin(), days.end(), [](const auto& d) { return d.empty(); })) {
      throw DataError("sequential split needs a day key for every row");
    }
    std::set<std::string_view> distinct(days.begin(), days.end());
    if (strategy.train_days == 0 || strategy.train_days >= distinct.size()) {
      throw std::invalid_argument("sequential split needs 0 < train_days < number of days (" +
                                  std::to_string(distinct.size()) + ")");
    }
    const auto cutoff = *std::next(distinct.begin(), static_cast<long>(strategy.train_days));
    std::vector<std::size_t> tail;
    for (std::size_t i = 0; i < num_rows; ++i) {
      if (std::string_view(days[i]) < cutoff) {
        out.train.push_back(i);
      } else {
        tail.push_back(i);
      }
    }
    Rng rng(strategy.seed);
    rng.shuffle(tail.begin(), tail.end());
    const std::size_t half = tail.size() / 2;
    out.val.assign(tail.begin(), tail.begin() + half);
    out.test.assign(tail.begin() + half, tail.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::vector<std::string> row_order_days(std::size_t num_rows, std::size_t num_days) {
  if (num_days == 0) throw std::invalid_argument("num_days must be positive");
  std::vector<std::string> days(num_rows);
  for (std::size_t i = 0; i < num_rows; ++i) {
    const std::size_t d = i * num_days / num_rows;
    std::string s = std::to_string(d);
    days[i] = std::string(s.size() < 3 ? 3 - s.size() : 0, '0') + s;
  }
  return days;
}

EncodedDataset encode(std::span<const RawRecord> rows, std::span<const std::size_t> subset,
                      const Vocabulary& vocab) {
  InputLayout layout;
  layout.field_sizes = vocab.sizes();
  layout.num_numeric = rows.empty() ? 0 : rows.front().numeric.size();
  EncodedDataset out(layout);
  std::vector<std::uint32_t> cats(vocab.num_fields());
  std::vector<double> nums(layout.num_numeric);
  for (auto i : subset) {
    const auto& r = rows[i];
    if (r.categorical.size() != vocab.num_fields() || r.numeric.size() != layout.num_numeric) {
      throw DataError("row " + std::to_string(i) + " does not match the schema");
    }
    for (std::size_t f = 0; f < cats.size(); ++f) cats[f] = vocab.encode(f, r.categorical[f]);
    for (std::size_t j = 0; j < nums.size(); ++j) nums[j] = transform_numeric(r.numeric[j]);
    out.append(cats, nums, static_cast<double>(r.label));
  }
  return out;
}

PreparedData prepare(std::span<const RawRecord> rows, const TableSchema& schema,
                     const SplitStrategy& strategy, std::size_t min_count) {
  if (rows.empty()) throw DataError("no input rows");
  PreparedData out;
  std::vector<std::string> days;
  if (strategy.kind == SplitStrategy::Kind::sequential) {
    days.reserve(rows.size());
    for (const auto& r : rows) days.push_back(r.day);
  }
  out.split = split(rows.size(), strategy, days);
  if (out.split.train.empty()) throw DataError("training partition is empty");
  out.vocabulary = Vocabulary::build(rows, schema, min_count, out.split.train);
  out.train = encode(rows, out.split.train, out.vocabulary);
  out.val = encode(rows, out.split.val, out.vocabulary);
  out.test = encode(rows, out.split.test, out.vocabulary);

  auto& st = out.stats;
  const std::size_t nf = out.vocabulary.num_fields();
  st.vocab_sizes = out.vocabulary.sizes();
  st.collapsed_tokens.assign(nf, 0);
  st.train_unk_count.assign(nf, 0);
  for (std::size_t f = 0; f < nf; ++f) {
    std::unordered_set<std::string_view> distinct;
    for (auto i : out.split.train) distinct.insert(rows[i].categorical[f]);
    st.collapsed_tokens[f] = distinct.size() - (st.vocab_sizes[f] - 1);
    for (std::size_t r = 0; r < out.train.size(); ++r) {
      if (out.train.categorical(r)[f] == kUnknownIndex) ++st.train_unk_count[f];
    }
  }
  st.train_rows = out.train.size();
  st.val_rows = out.val.size();
  st.test_rows = out.test.size();
  return out;
}

}  // namespace ctrkd::features
