#include "ctrkd/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "ctrkd/format.hpp"

namespace ctrkd::experiment {

namespace {

struct Entry {
  std::string value;
  std::size_t line = 0;  // 0 = command-line override
};

using Entries = std::map<std::string, Entry>;

std::string where(const std::string& key, const Entry& e) {
  return e.line ? "line " + std::to_string(e.line) + " (" + key + ")" : "override " + key;
}

void add_entry(Entries& entries, std::string_view raw, std::size_t line, bool allow_replace) {
  const auto eq = raw.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError((line ? "line " + std::to_string(line) : std::string("override")) +
                      ": expected 'key = value', got '" + std::string(raw) + "'");
  }
  std::string key(trim(raw.substr(0, eq)));
  std::string value(trim(raw.substr(eq + 1)));
  if (key.empty() || key.find('.') == std::string::npos) {
    throw ConfigError("line " + std::to_string(line) + ": key '" + key +
                      "' must have the form section.key");
  }
  if (!allow_replace && entries.contains(key)) {
    throw ConfigError("line " + std::to_string(line) + ": duplicate key '" + key + "'");
  }
  entries[key] = Entry{std::move(value), line};
}

Entries read_entries(std::string_view text) {
  Entries entries;
  std::size_t line_no = 0;
  for (auto line : split_view(text, '\n')) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    add_entry(entries, line, line_no, false);
  }
  return entries;
}

// Typed, consuming access to the entry map so leftovers can be reported.
class Reader {
 public:
  explicit Reader(Entries entries) : entries_(std::move(entries)) {}

  bool has(const std::string& key) const { return entries_.contains(key); }

  std::string text(const std::string& key, std::string fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    std::string v = it->second.value;
    entries_.erase(it);
    return v;
  }

  template <class T>
  T number(const std::string& key, T fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const Entry e = it->second;
    entries_.erase(it);
    return parse_number<T>(e.value, key, e);
  }

  bool flag(const std::string& key, bool fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const Entry e = it->second;
    entries_.erase(it);
    if (e.value == "true" || e.value == "1") return true;
    if (e.value == "false" || e.value == "0") return false;
    throw ConfigError(where(key, e) + ": expected true or false, got '" + e.value + "'");
  }

  std::vector<std::string> list(const std::string& key, std::vector<std::string> fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const std::string v = it->second.value;
    entries_.erase(it);
    std::vector<std::string> out;
    if (v.empty()) return out;
    for (auto part : split_view(v, ',')) out.emplace_back(trim(part));
    return out;
  }

  template <class T>
  std::vector<T> numbers(const std::string& key, std::vector<T> fallback) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const Entry e = it->second;
    entries_.erase(it);
    std::vector<T> out;
    if (e.value.empty()) return out;
    for (auto part : split_view(e.value, ',')) out.push_back(parse_number<T>(trim(part), key, e));
    return out;
  }

  // Removes and returns every key under `prefix`.
  std::vector<std::string> keys_with_prefix(std::string_view prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) {
      if (k.starts_with(prefix)) out.push_back(k);
    }
    return out;
  }

  template <class Fn>
  auto wrap(const std::string& key, Fn&& fn) -> decltype(fn(std::string())) {
    auto it = entries_.find(key);
    const Entry e = it == entries_.end() ? Entry{} : it->second;
    try {
      return fn(text(key, ""));
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      throw ConfigError(where(key, e) + ": " + ex.what());
    }
  }

  void finish() const {
    if (entries_.empty()) return;
    const auto& [key, e] = *entries_.begin();
    throw ConfigError(where(key, e) + ": unknown key '" + key + "'");
  }

 private:
  template <class T>
  static T parse_number(std::string_view v, const std::string& key, const Entry& e) {
    T out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
      throw ConfigError(where(key, e) + ": '" + std::string(v) + "' is not a valid number");
    }
    return out;
  }

  Entries entries_;
};

std::string bool_text(bool b) { return b ? "true" : "false"; }

ExperimentConfig build(Entries entries) {
  Reader r(std::move(entries));
  ExperimentConfig c;

  auto& d = c.data;
  d.source = r.text("data.source", d.source);
  d.format = r.text("data.format", d.format);
  if (d.source == "file" && d.format == "criteo") {
    d.split = "sequential";
    d.min_count = 10;
    d.embedding_dim = 20;
    c.train.batch_size = 2000;
  } else if (d.source == "file" && d.format == "avazu") {
    d.min_count = 5;
    d.embedding_dim = 40;
    c.train.batch_size = 2000;
  }
  d.path = r.text("data.path", d.path);
  d.split = r.text("data.split", d.split);
  d.train_ratio = r.number("data.train_ratio", d.train_ratio);
  d.val_ratio = r.number("data.val_ratio", d.val_ratio);
  d.test_ratio = r.number("data.test_ratio", d.test_ratio);
  d.num_days = r.number("data.num_days", d.num_days);
  d.train_days = r.number("data.train_days", d.train_days);
  d.split_seed = r.number("data.split_seed", d.split_seed);
  d.min_count = r.number("data.min_count", d.min_count);
  d.max_rows = r.number("data.max_rows", d.max_rows);
  d.embedding_dim = r.number("data.embedding_dim", d.embedding_dim);
  auto& s = d.synthetic;
  s.samples = r.number("synthetic.samples", s.samples);
  s.fields = r.number("synthetic.fields", s.fields);
  s.vocab_per_field = r.number("synthetic.vocab_per_field", s.vocab_per_field);
  s.numeric_fields = r.number("synthetic.numeric_fields", s.numeric_fields);
  s.latent_dim = r.number("synthetic.latent_dim", s.latent_dim);
  s.first_order_scale = r.number("synthetic.first_order_scale", s.first_order_scale);
  s.interaction_scale = r.number("synthetic.interaction_scale", s.interaction_scale);
  s.bias = r.number("synthetic.bias", s.bias);
  s.skew = r.number("synthetic.skew", s.skew);
  s.seed = r.number("synthetic.seed", s.seed);

  std::set<std::string> model_names;
  for (const auto& key : r.keys_with_prefix("model.")) {
    const auto rest = std::string_view(key).substr(6);
    const auto dot = rest.rfind('.');
    if (dot == std::string_view::npos || dot == 0) {
      throw ConfigError("model keys have the form model.<name>.<field>, got '" + key + "'");
    }
    model_names.emplace(rest.substr(0, dot));
  }
  for (const auto& name : model_names) {
    const std::string p = "model." + name + ".";
    const std::string arch = r.text(p + "arch", name);
    models::ModelSpec spec;
    try {
      const auto base = models::ModelSpec::preset(arch, {64, 64}, d.embedding_dim);
      const auto hidden = r.numbers<std::size_t>(p + "hidden", base.hidden);
      const auto dim = r.number(p + "embedding_dim", base.embedding_dim);
      spec = models::ModelSpec::preset(arch, hidden, dim);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& ex) {
      throw ConfigError("model." + name + ": " + ex.what());
    }
    spec.dropout = r.number(p + "dropout", spec.dropout);
    spec.cross_layers = r.number(p + "cross_layers", spec.cross_layers);
    spec.cin_maps = r.numbers<std::size_t>(p + "cin_maps", spec.cin_maps);
    spec.activation = r.text(p + "activation", spec.activation);
    c.models[name] = spec;
    c.model_arch[name] = arch;
  }

  c.teachers = r.list("teacher.models", {});
  auto& e = c.ensemble;
  e.mode = r.text("ensemble.mode", e.mode);
  e.models = r.list("ensemble.models", {});
  e.copies = r.number("ensemble.copies", e.copies);
  e.partitions = r.number("ensemble.partitions", e.partitions);
  e.average = r.text("ensemble.average", e.average);
  c.student = r.text("student.model", "");

  auto& ds = c.distill;
  ds.config.method = r.wrap("distill.method", [&](const std::string& v) {
    return v.empty() ? ds.config.method : distill::parse_method(v);
  });
  ds.config.scheme = r.wrap("distill.scheme", [&](const std::string& v) {
    return v.empty() ? ds.config.scheme : distill::parse_scheme(v);
  });
  if (ds.config.method == distill::Method::hint) {
    ds.config.beta = 1e-4;
    ds.config.gamma = 1.0;
  }
  ds.config.tau = r.number("distill.tau", ds.config.tau);
  ds.config.beta = r.number("distill.beta", ds.config.beta);
  ds.config.gamma = r.number("distill.gamma", ds.config.gamma);
  ds.config.gating = r.flag("distill.gating", ds.config.gating);
  ds.config.teachers = r.list("distill.teachers", {});
  ds.monitor = r.wrap("distill.monitor", [&](const std::string& v) {
    return v.empty() ? ds.monitor : train::parse_monitor_mode(v);
  });
  ds.monitor_fraction = r.number("distill.monitor_fraction", ds.monitor_fraction);
  ds.merge_validation = r.flag("distill.merge_validation", ds.merge_validation);
  ds.baseline = r.flag("distill.baseline", ds.baseline);

  auto& t = c.train;
  t.lr = r.number("train.lr", t.lr);
  t.batch_size = r.number("train.batch_size", t.batch_size);
  t.max_epochs = r.number("train.max_epochs", t.max_epochs);
  t.patience = r.number("train.patience", t.patience);
  t.l2 = r.number("train.l2", t.l2);
  t.shuffle = r.flag("train.shuffle", t.shuffle);
  t.eval_batch_size = r.number("train.eval_batch_size", t.eval_batch_size);

  c.seeds = r.numbers<std::uint64_t>("experiment.seeds", c.seeds);
  c.output_dir = r.text("experiment.output_dir", c.output_dir.string());
  c.name = r.text("experiment.name", c.name);
  c.baseline = r.text("report.baseline", "");
  r.finish();
  c.validate();
  return c;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text) { return build(read_entries(text)); }

ExperimentConfig ExperimentConfig::parse(std::string_view text,
                                         const std::vector<std::string>& overrides) {
  Entries entries = read_entries(text);
  for (const auto& o : overrides) add_entry(entries, o, 0, true);
  return build(std::move(entries));
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ExperimentConfig::validate() const {
  const auto& d = data;
  if (d.source != "synthetic" && d.source != "file") {
    throw ConfigError("data.source must be synthetic or file");
  }
  if (d.source == "file" && d.path.empty()) throw ConfigError("data.path is required for file data");
  if (d.format != "criteo" && d.format != "avazu") {
    throw ConfigError("data.format must be criteo or avazu");
  }
  if (d.split != "random" && d.split != "sequential") {
    throw ConfigError("data.split must be random or sequential");
  }
  if (d.split == "sequential" && d.source == "synthetic") {
    throw ConfigError("synthetic data supports random splits only");
  }
  if (d.min_count == 0) throw ConfigError("data.min_count must be at least 1");
  if (d.embedding_dim == 0) throw ConfigError("data.embedding_dim must be at least 1");
  for (const auto& [name, spec] : models) {
    try {
      spec.validate();
    } catch (const std::exception& e) {
      throw ConfigError("model." + name + ": " + e.what());
    }
  }
  auto check_model = [&](const std::string& name, const std::string& key) {
    try {
      (void)model_spec(name);
    } catch (const std::exception&) {
      throw ConfigError(key + ": unknown model '" + name + "'");
    }
  };
  for (const auto& n : teachers) check_model(n, "teacher.models");
  for (const auto& n : ensemble.models) check_model(n, "ensemble.models");
  if (!student.empty()) check_model(student, "student.model");
  if (ensemble.mode != "M" && ensemble.mode != "D") throw ConfigError("ensemble.mode must be M or D");
  if (ensemble.mode == "D" && ensemble.partitions < 2) {
    throw ConfigError("ensemble.partitions must be at least 2 in mode D");
  }
  if (ensemble.copies == 0) throw ConfigError("ensemble.copies must be at least 1");
  if (ensemble.average != "metric" && ensemble.average != "prediction") {
    throw ConfigError("ensemble.average must be metric or prediction");
  }
  try {
    distill.config.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("distill: ") + e.what());
  }
  if (!(distill.monitor_fraction > 0.0 && distill.monitor_fraction < 1.0)) {
    throw ConfigError("distill.monitor_fraction must lie in (0, 1)");
  }
  if (train.batch_size == 0 || train.eval_batch_size == 0) {
    throw ConfigError("batch sizes must be at least 1");
  }
  if (train.patience == 0) throw ConfigError("train.patience must be at least 1");
  if (!(train.lr > 0.0)) throw ConfigError("train.lr must be positive");
  if (!(train.l2 >= 0.0)) throw ConfigError("train.l2 must be non-negative");
  if (seeds.empty()) throw ConfigError("experiment.seeds must list at least one seed");
  if (std::set(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ConfigError("experiment.seeds contains duplicates");
  }
}

models::ModelSpec ExperimentConfig::model_spec(const std::string& name) const {
  if (auto it = models.find(name); it != models.end()) return it->second;
  return models::ModelSpec::preset(name, {64, 64}, data.embedding_dim);
}

std::string ExperimentConfig::baseline_label() const {
  if (!baseline.empty()) return baseline;
  return student.empty() ? std::string() : "student." + student;
}

std::string ExperimentConfig::serialize() const {
  std::map<std::string, std::string> kv;
  const auto& d = data;
  kv["data.source"] = d.source;
  kv["data.path"] = d.path;
  kv["data.format"] = d.format;
  kv["data.split"] = d.split;
  kv["data.train_ratio"] = format_double(d.train_ratio);
  kv["data.val_ratio"] = format_double(d.val_ratio);
  kv["data.test_ratio"] = format_double(d.test_ratio);
  kv["data.num_days"] = std::to_string(d.num_days);
  kv["data.train_days"] = std::to_string(d.train_days);
  kv["data.split_seed"] = std::to_string(d.split_seed);
  kv["data.min_count"] = std::to_string(d.min_count);
  kv["data.max_rows"] = std::to_string(d.max_rows);
  kv["data.embedding_dim"] = std::to_string(d.embedding_dim);
  const auto& s = d.synthetic;
  kv["synthetic.samples"] = std::to_string(s.samples);
  kv["synthetic.fields"] = std::to_string(s.fields);
  kv["synthetic.vocab_per_field"] = std::to_string(s.vocab_per_field);
  kv["synthetic.numeric_fields"] = std::to_string(s.numeric_fields);
  kv["synthetic.latent_dim"] = std::to_string(s.latent_dim);
  kv["synthetic.first_order_scale"] = format_double(s.first_order_scale);
  kv["synthetic.interaction_scale"] = format_double(s.interaction_scale);
  kv["synthetic.bias"] = format_double(s.bias);
  kv["synthetic.skew"] = format_double(s.skew);
  kv["synthetic.seed"] = std::to_string(s.seed);
  for (const auto& [name, spec] : models) {
    const std::string p = "model." + name + ".";
    kv[p + "arch"] = model_arch.contains(name) ? model_arch.at(name) : name;
    kv[p + "hidden"] = join(spec.hidden);
    kv[p + "embedding_dim"] = std::to_string(spec.embedding_dim);
    kv[p + "dropout"] = format_double(spec.dropout);
    kv[p + "cross_layers"] = std::to_string(spec.cross_layers);
    kv[p + "cin_maps"] = join(spec.cin_maps);
    kv[p + "activation"] = spec.activation;
  }
  kv["teacher.models"] = join(teachers);
  kv["ensemble.mode"] = ensemble.mode;
  kv["ensemble.models"] = join(ensemble.models);
  kv["ensemble.copies"] = std::to_string(ensemble.copies);
  kv["ensemble.partitions"] = std::to_string(ensemble.partitions);
  kv["ensemble.average"] = ensemble.average;
  kv["student.model"] = student;
  const auto& dc = distill.config;
  kv["distill.method"] = std::string(distill::to_string(dc.method));
  kv["distill.scheme"] = std::string(distill::to_string(dc.scheme));
  kv["distill.tau"] = format_double(dc.tau);
  kv["distill.beta"] = format_double(dc.beta);
  kv["distill.gamma"] = format_double(dc.gamma);
  kv["distill.gating"] = bool_text(dc.gating);
  kv["distill.teachers"] = join(dc.teachers);
  kv["distill.monitor"] = std::string(train::to_string(distill.monitor));
  kv["distill.monitor_fraction"] = format_double(distill.monitor_fraction);
  kv["distill.merge_validation"] = bool_text(distill.merge_validation);
  kv["distill.baseline"] = bool_text(distill.baseline);
  kv["train.lr"] = format_double(train.lr);
  kv["train.batch_size"] = std::to_string(train.batch_size);
  kv["train.max_epochs"] = std::to_string(train.max_epochs);
  kv["train.patience"] = std::to_string(train.patience);
  kv["train.l2"] = format_double(train.l2);
  kv["train.shuffle"] = bool_text(train.shuffle);
  kv["train.eval_batch_size"] = std::to_string(train.eval_batch_size);
  kv["experiment.seeds"] = join(seeds);
  kv["experiment.output_dir"] = output_dir.string();
  kv["experiment.name"] = name;
  kv["report.baseline"] = baseline;

  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::string recipe(std::string_view format) {
  if (format == "criteo") {
    return "data.source = file\n"
           "data.format = criteo\n"
           "data.path = train.txt\n"
           "data.split = sequential\n"
           "data.num_days = 7\n"
           "data.train_days = 5\n"
           "data.min_count = 10\n"
           "data.embedding_dim = 20\n"
           "train.batch_size = 2000\n";
  }
  if (format == "avazu") {
    return "data.source = file\n"
           "data.format = avazu\n"
           "data.path = train.csv\n"
           "data.split = random\n"
           "data.train_ratio = 0.8\n"
           "data.val_ratio = 0.1\n"
           "data.test_ratio = 0.1\n"
           "data.min_count = 5\n"
           "data.embedding_dim = 40\n"
           "train.batch_size = 2000\n";
  }
  if (format == "synthetic") {
    return "data.source = synthetic\n"
           "synthetic.samples = 100000\n"
           "synthetic.fields = 8\n"
           "synthetic.vocab_per_field = 50\n"
           "train.batch_size = 256\n";
  }
  throw ConfigError("no recipe for '" + std::string(format) + "' (criteo, avazu, synthetic)");
}

}  // namespace ctrkd::experiment
