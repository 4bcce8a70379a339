#include "ctrkd/persist.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <sstream>

#include "ctrkd/hash.hpp"

namespace ctrkd::persist {

namespace {

constexpr std::string_view kMagic = "CTRKDCKP";

using Kind = CheckpointError::Kind;

[[noreturn]] void corrupt(const std::string& what) {
  throw CheckpointError(Kind::corrupt, "corrupt checkpoint: " + what);
}

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { out_.append(s); }
  std::string& str() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string_view bytes(std::uint64_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::uint64_t n) const {
    if (n > data_.size() - pos_) corrupt("truncated data");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

using Sections = std::vector<std::pair<std::string, std::string>>;

void put_tensor(Writer& w, std::span<const std::size_t> shape, std::span<const double> values) {
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u64(d);
  for (double v : values) w.f64(v);
}

std::string tensor_payload(const Tensor& t) {
  Writer w;
  put_tensor(w, t.shape(), t.values());
  return std::move(w.str());
}

std::string vector_payload(std::span<const double> values) {
  Writer w;
  const std::size_t n = values.size();
  put_tensor(w, std::span(&n, 1), values);
  return std::move(w.str());
}

Tensor read_tensor(std::string_view payload, const std::string& name) {
  Reader r(payload);
  const std::uint32_t rank = r.u32();
  if (rank > 8) corrupt("tensor '" + name + "' has rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = r.u64();
    if (d != 0 && count > (std::uint64_t{1} << 40) / d) corrupt("tensor '" + name + "' too large");
    count *= d;
  }
  if (r.remaining() != count * 8) corrupt("tensor '" + name + "' payload size mismatch");
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64();
  return Tensor(std::move(shape), std::move(values));
}

std::string encode_container(const Sections& sections) {
  Writer w;
  w.bytes(kMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name);
    w.u64(payload.size());
    w.bytes(payload);
  }
  const std::uint64_t sum = fnv1a(w.str());
  w.u64(sum);
  return std::move(w.str());
}

std::map<std::string, std::string_view, std::less<>> decode_container(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 16) corrupt("file too short");
  if (bytes.substr(0, kMagic.size()) != kMagic) corrupt("bad magic");
  Reader tail(bytes.substr(bytes.size() - 8));
  const std::uint64_t stored = tail.u64();
  const std::string_view body = bytes.substr(0, bytes.size() - 8);

  Reader r(body);
  r.bytes(kMagic.size());
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw CheckpointError(Kind::version, "checkpoint format version " + std::to_string(version) +
                                             ", this build reads " +
                                             std::to_string(kFormatVersion));
  }
  if (fnv1a(body) != stored) corrupt("checksum mismatch");
  const std::uint32_t count = r.u32();
  std::map<std::string, std::string_view, std::less<>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    std::string name(r.bytes(name_len));
    const std::uint64_t len = r.u64();
    if (!out.emplace(std::move(name), r.bytes(len)).second) corrupt("duplicate section");
  }
  if (!r.done()) corrupt("trailing bytes after the last section");
  return out;
}

std::string_view section(const std::map<std::string, std::string_view, std::less<>>& s,
                         std::string_view name) {
  auto it = s.find(name);
  if (it == s.end()) corrupt("missing section '" + std::string(name) + "'");
  return it->second;
}

}  // namespace

AdamSnapshot snapshot(const train::Adam& adam) {
  AdamSnapshot s;
  s.steps = adam.steps();
  for (std::size_t i = 0; i < adam.num_params(); ++i) {
    s.m.push_back(adam.first_moment(i));
    s.v.push_back(adam.second_moment(i));
  }
  return s;
}

std::string encode_model(const models::Model& model, const CheckpointMeta& meta,
                         const train::Adam* adam) {
  Sections sections;
  sections.emplace_back("kind", "model");
  sections.emplace_back("spec", model.spec().to_string());
  sections.emplace_back("layout", model.layout().to_string());
  Writer m;
  m.u64(meta.seed);
  m.u64(meta.epoch);
  m.u8(meta.vocab_fingerprint ? 1 : 0);
  m.u64(meta.vocab_fingerprint.value_or(0));
  sections.emplace_back("meta", std::move(m.str()));
  const auto& params = model.parameters();
  for (const auto& p : params) sections.emplace_back("tensor/" + p.name, tensor_payload(p.tensor));
  if (adam) {
    if (adam->num_params() != params.size()) {
      throw std::invalid_argument("optimizer does not cover exactly the model parameters");
    }
    Writer s;
    s.u64(adam->steps());
    sections.emplace_back("adam/steps", std::move(s.str()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      sections.emplace_back("adam/m/" + params[i].name, vector_payload(adam->first_moment(i)));
      sections.emplace_back("adam/v/" + params[i].name, vector_payload(adam->second_moment(i)));
    }
  }
  return encode_container(sections);
}

LoadedModel decode_model(std::string_view bytes, std::optional<std::uint64_t> expected_fingerprint) {
  const auto s = decode_container(bytes);
  if (section(s, "kind") != "model") {
    throw CheckpointError(Kind::content, "checkpoint does not hold a model");
  }
  models::ModelSpec spec;
  features::InputLayout layout;
  try {
    spec = models::ModelSpec::parse(section(s, "spec"));
    layout = features::InputLayout::parse(section(s, "layout"));
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    corrupt(std::string("unreadable spec or layout: ") + e.what());
  }

  CheckpointMeta meta;
  Reader mr(section(s, "meta"));
  meta.seed = mr.u64();
  meta.epoch = mr.u64();
  const bool has_fp = mr.u8() != 0;
  const std::uint64_t fp = mr.u64();
  if (has_fp) meta.vocab_fingerprint = fp;
  if (expected_fingerprint && meta.vocab_fingerprint &&
      *expected_fingerprint != *meta.vocab_fingerprint) {
    throw CheckpointError(Kind::fingerprint,
                          "checkpoint was trained against a different vocabulary");
  }

  models::Model model(spec, layout, 0);
  auto& params = model.parameters();
  std::size_t tensors = 0;
  for (const auto& [name, _] : s) tensors += name.starts_with("tensor/");
  if (tensors != params.size()) {
    corrupt("expected " + std::to_string(params.size()) + " tensors, found " +
            std::to_string(tensors));
  }
  for (auto& p : params) {
    const Tensor t = read_tensor(section(s, "tensor/" + p.name), p.name);
    if (t.shape() != p.tensor.shape()) {
      corrupt("tensor '" + p.name + "' has shape " + shape_string(t.shape()) + ", expected " +
              shape_string(p.tensor.shape()));
    }
    std::copy(t.values().begin(), t.values().end(), p.tensor.values().begin());
  }

  std::optional<AdamSnapshot> adam;
  if (s.contains("adam/steps")) {
    AdamSnapshot a;
    Reader ar(section(s, "adam/steps"));
    a.steps = ar.u64();
    for (const auto& p : params) {
      const Tensor m = read_tensor(section(s, "adam/m/" + p.name), p.name);
      const Tensor v = read_tensor(section(s, "adam/v/" + p.name), p.name);
      if (m.size() != p.tensor.size() || v.size() != p.tensor.size()) {
        corrupt("optimizer moments for '" + p.name + "' have the wrong size");
      }
      a.m.emplace_back(m.values().begin(), m.values().end());
      a.v.emplace_back(v.values().begin(), v.values().end());
    }
    adam = std::move(a);
  }
  return LoadedModel{std::move(model), meta, std::move(adam)};
}

std::string encode_gate(const distill::TeacherGate& gate) {
  Sections sections;
  sections.emplace_back("kind", "gate");
  sections.emplace_back("tensor/w", tensor_payload(gate.w()));
  sections.emplace_back("tensor/b", tensor_payload(gate.b()));
  return encode_container(sections);
}

distill::TeacherGate decode_gate(std::string_view bytes) {
  const auto s = decode_container(bytes);
  if (section(s, "kind") != "gate") {
    throw CheckpointError(Kind::content, "checkpoint does not hold a teacher gate");
  }
  const Tensor w = read_tensor(section(s, "tensor/w"), "w");
  const Tensor b = read_tensor(section(s, "tensor/b"), "b");
  if (w.rank() != 1 || w.shape() != b.shape() || w.size() == 0) corrupt("gate tensors malformed");
  return distill::TeacherGate({w.values().begin(), w.values().end()},
                              {b.values().begin(), b.values().end()});
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::io, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(Kind::io, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void save_model(const models::Model& model, const std::filesystem::path& path,
                const CheckpointMeta& meta, const train::Adam* adam) {
  write_file(path, encode_model(model, meta, adam));
}

LoadedModel load_model(const std::filesystem::path& path,
                       std::optional<std::uint64_t> expected_fingerprint) {
  return decode_model(read_file(path), expected_fingerprint);
}

void save_gate(const distill::TeacherGate& gate, const std::filesystem::path& path) {
  write_file(path, encode_gate(gate));
}

distill::TeacherGate load_gate(const std::filesystem::path& path) {
  return decode_gate(read_file(path));
}

}  // namespace ctrkd::persist
