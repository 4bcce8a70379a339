#include "ctrkd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>

#include "ctrkd/format.hpp"
#include "ctrkd/persist.hpp"
#include "ctrkd/synthetic.hpp"
#include "ctrkd/train.hpp"

namespace ctrkd::experiment {

namespace fs = std::filesystem;
using features::EncodedDataset;

std::optional<std::uint64_t> ExperimentData::fingerprint() const {
  if (!vocabulary) return std::nullopt;
  return vocabulary->fingerprint();
}

namespace {

void write_text(const fs::path& path, std::string_view text) { persist::write_file(path, text); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

template <class Fn>
auto staged(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

// Runs fn(i) for every seed index, on up to worker_count() threads. Each call
// must only touch its own outputs.
template <class Fn>
void for_each_seed(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

train::TrainHyper hyper_for(const ExperimentConfig& config, std::uint64_t seed) {
  train::TrainHyper h = config.train;
  h.seed = seed;
  h.data_seed.reset();
  h.on_step = nullptr;
  return h;
}

void save_trained(const ExperimentConfig& config, const ExperimentData& data,
                  const std::string& label, std::uint64_t seed, const models::Model& model,
                  std::size_t best_epoch, const train::TrainRecord& record) {
  persist::save_model(model, checkpoint_path(config, label, seed),
                      {seed, best_epoch, data.fingerprint()});
  write_text(record_path(config, label, seed), record.to_csv());
}

std::string stats_text(const features::PipelineStats& s) {
  std::string out;
  out += "train_rows = " + std::to_string(s.train_rows) + "\n";
  out += "val_rows = " + std::to_string(s.val_rows) + "\n";
  out += "test_rows = " + std::to_string(s.test_rows) + "\n";
  out += "vocab_sizes = " + join(s.vocab_sizes) + "\n";
  out += "collapsed_tokens = " + join(s.collapsed_tokens) + "\n";
  out += "train_unk_count = " + join(s.train_unk_count) + "\n";
  return out;
}

// Label and seed from "<label>__s<seed>.ckpt".
std::optional<std::pair<std::string, std::uint64_t>> parse_checkpoint_name(const fs::path& p) {
  if (p.extension() != ".ckpt") return std::nullopt;
  const std::string stem = p.stem().string();
  const auto pos = stem.rfind("__s");
  if (pos == std::string::npos) return std::nullopt;
  try {
    return std::pair{stem.substr(0, pos), std::stoull(stem.substr(pos + 3))};
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

double record_seconds(const fs::path& path) {
  if (!fs::exists(path)) return 0.0;
  double total = 0.0;
  std::size_t line_no = 0;
  const std::string text = read_text(path);
  for (auto line : split_view(text, '\n')) {
    if (line_no++ == 0 || trim(line).empty()) continue;
    const auto cols = split_view(line, ',');
    if (cols.size() >= 4) total += std::stod(std::string(cols[3]));
  }
  return total;
}

}  // namespace

std::size_t worker_count() {
  if (const char* env = std::getenv("CTRKD_WORKERS")) {
    try {
      const long n = std::stol(env);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
  }
  return 1;
}

fs::path checkpoint_path(const ExperimentConfig& config, const std::string& label,
                         std::uint64_t seed) {
  return config.output_dir / "checkpoints" / (label + "__s" + std::to_string(seed) + ".ckpt");
}

fs::path record_path(const ExperimentConfig& config, const std::string& label, std::uint64_t seed) {
  return config.output_dir / "records" / (label + "__s" + std::to_string(seed) + ".csv");
}

ExperimentData load_data(const ExperimentConfig& config) {
  const auto& d = config.data;
  ExperimentData out;
  features::SplitStrategy strategy;
  strategy.seed = d.split_seed;
  if (d.split == "sequential") {
    strategy.kind = features::SplitStrategy::Kind::sequential;
    strategy.train_days = d.train_days;
  } else {
    strategy.train = d.train_ratio;
    strategy.val = d.val_ratio;
    strategy.test = d.test_ratio;
  }

  if (d.source == "synthetic") {
    auto spec = d.synthetic;
    if (d.max_rows > 0) spec.samples = std::min(spec.samples, d.max_rows);
    auto synth = features::make_synthetic(spec);
    const auto parts = features::split(synth.data.size(), strategy);
    out.train = synth.data.subset(parts.train);
    out.val = synth.data.subset(parts.val);
    out.test = synth.data.subset(parts.test);
    out.stats.vocab_sizes = synth.data.layout().field_sizes;
    out.stats.collapsed_tokens.assign(out.stats.vocab_sizes.size(), 0);
    out.stats.train_unk_count.assign(out.stats.vocab_sizes.size(), 0);
    out.stats.train_rows = out.train.size();
    out.stats.val_rows = out.val.size();
    out.stats.test_rows = out.test.size();
    return out;
  }

  const auto schema = d.format == "avazu" ? features::avazu_schema() : features::criteo_schema();
  auto rows = features::read_table(d.path, schema);
  if (d.max_rows > 0 && rows.size() > d.max_rows) rows.resize(d.max_rows);
  if (d.split == "sequential" && d.format == "criteo") {
    const auto days = features::row_order_days(rows.size(), d.num_days);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].day = days[i];
  }
  auto prepared = features::prepare(rows, schema, strategy, d.min_count);
  out.train = std::move(prepared.train);
  out.val = std::move(prepared.val);
  out.test = std::move(prepared.test);
  out.vocabulary = std::move(prepared.vocabulary);
  out.stats = std::move(prepared.stats);
  return out;
}

std::vector<std::string> ensemble_labels(const ExperimentConfig& config) {
  const auto& e = config.ensemble;
  std::vector<std::string> labels;
  if (e.models.empty()) return labels;
  if (e.mode == "D") {
    for (std::size_t p = 0; p < e.partitions; ++p) {
      labels.push_back("ens.p" + std::to_string(p + 1) + "." + e.models[p % e.models.size()]);
    }
    return labels;
  }
  for (const auto& m : e.models) {
    for (std::size_t c = 0; c < e.copies; ++c) {
      labels.push_back(e.copies == 1 ? "ens." + m : "ens." + m + ".c" + std::to_string(c + 1));
    }
  }
  return labels;
}

std::vector<std::string> distill_teacher_labels(const ExperimentConfig& config) {
  std::vector<std::string> labels;
  for (const auto& t : config.distill.config.teachers) {
    if (t == "ensemble") {
      for (auto& l : ensemble_labels(config)) labels.push_back(std::move(l));
    } else if (t.find('.') != std::string::npos) {
      labels.push_back(t);
    } else {
      labels.push_back("teacher." + t);
    }
  }
  return labels;
}

ExperimentData preprocess(const ExperimentConfig& config) {
  return staged("preprocess", [&] {
    auto data = load_data(config);
    fs::create_directories(config.output_dir);
    write_text(config.output_dir / "config.resolved", config.serialize());
    write_text(config.output_dir / "stats.txt", stats_text(data.stats));
    if (data.vocabulary) data.vocabulary->save(config.output_dir / "vocab.tsv");
    return data;
  });
}

std::vector<fs::path> train_teachers(const ExperimentConfig& config, const ExperimentData& data) {
  return staged("train-teacher", [&] {
    std::vector<fs::path> out;
    for (const auto& name : config.teachers) {
      const auto spec = config.model_spec(name);
      for_each_seed(config.seeds.size(), [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        const ExperimentData local = worker_count() > 1 ? data : ExperimentData{};
        const ExperimentData& d = worker_count() > 1 ? local : data;
        auto r = train::train_teacher(spec, {&d.train, &d.val}, hyper_for(config, seed));
        save_trained(config, data, "teacher." + name, seed, r.model, r.best_epoch, r.record);
      });
      for (auto s : config.seeds) out.push_back(checkpoint_path(config, "teacher." + name, s));
    }
    return out;
  });
}

Partition ensemble_partition(const ExperimentConfig& config, const ExperimentData& data,
                             std::size_t k) {
  const std::size_t n = data.train.size() + data.val.size();
  const auto order = features::epoch_order(n, true, derive_seed(config.data.split_seed, 100 + k));
  Partition p;
  p.val.assign(order.begin(), order.begin() + static_cast<long>(data.val.size()));
  p.train.assign(order.begin() + static_cast<long>(data.val.size()), order.end());
  std::sort(p.val.begin(), p.val.end());
  std::sort(p.train.begin(), p.train.end());
  return p;
}

std::vector<fs::path> make_ensemble(const ExperimentConfig& config, const ExperimentData& data) {
  return staged("make-ensemble", [&] {
    const auto& e = config.ensemble;
    if (e.models.empty()) throw std::invalid_argument("ensemble.models is empty");
    if (e.mode == "D" && e.partitions < 2) {
      throw std::invalid_argument("mode D needs at least 2 partitions");
    }
    const auto labels = ensemble_labels(config);
    std::vector<fs::path> out;
    for (std::size_t k = 0; k < labels.size(); ++k) {
      for_each_seed(config.seeds.size(), [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        EncodedDataset train_part, val_part;
        std::string model_name;
        std::uint64_t member_seed = seed;
        if (e.mode == "D") {
          // Fresh train/val cut of the pooled rows per teacher; test untouched.
          model_name = e.models[k % e.models.size()];
          const auto pool = EncodedDataset::concat(data.train, data.val);
          const auto cut = ensemble_partition(config, data, k);
          train_part = pool.subset(cut.train);
          val_part = pool.subset(cut.val);
        } else {
          model_name = e.models[k / e.copies];
          const std::size_t copy = k % e.copies;
          if (copy > 0) member_seed = derive_seed(seed, 100 + copy);
          train_part = data.train;
          val_part = data.val;
        }
        auto r = train::train_teacher(config.model_spec(model_name), {&train_part, &val_part},
                                      hyper_for(config, member_seed));
        save_trained(config, data, labels[k], seed, r.model, r.best_epoch, r.record);
      });
      for (auto s : config.seeds) out.push_back(checkpoint_path(config, labels[k], s));
    }
    return out;
  });
}

std::vector<fs::path> distill_students(const ExperimentConfig& config, const ExperimentData& data) {
  return staged("distill", [&] {
    if (config.student.empty()) throw std::invalid_argument("student.model is not set");
    const auto& dc = config.distill.config;
    const auto student_spec = config.model_spec(config.student);
    const auto labels = distill_teacher_labels(config);
    if (labels.empty()) throw std::invalid_argument("distill.teachers is empty");
    const bool cotrain = dc.scheme == distill::Scheme::cotrain;
    if (cotrain && labels.size() != 1) {
      throw std::invalid_argument("co-training takes exactly one teacher");
    }
    // Pre-flight: every teacher checkpoint must exist before anything trains.
    if (!cotrain) {
      for (const auto& l : labels) {
        for (auto s : config.seeds) {
          const auto p = checkpoint_path(config, l, s);
          if (!fs::exists(p)) throw std::runtime_error("missing teacher checkpoint " + p.string());
        }
      }
    }

    std::vector<fs::path> out;
    const std::string kd_label = "kd." + config.student;
    for_each_seed(config.seeds.size(), [&](std::size_t i) {
      const std::uint64_t seed = config.seeds[i];
      const ExperimentData local = worker_count() > 1 ? data : ExperimentData{};
      const ExperimentData& d = worker_count() > 1 ? local : data;
      const auto hyper = hyper_for(config, seed);
      const train::DataSplits splits{&d.train, &d.val};

      if (config.distill.baseline) {
        auto r = train::train_teacher(student_spec, splits, hyper);
        save_trained(config, data, "student." + config.student, seed, r.model, r.best_epoch,
                     r.record);
      }
      if (cotrain) {
        const std::string& l = labels[0];
        const std::string teacher_name = l.substr(l.rfind('.') + 1);
        auto r = train::train_student_cotrain(config.model_spec(teacher_name), student_spec, dc,
                                              splits, hyper, hyper, config.distill.monitor);
        save_trained(config, data, "cotrain." + teacher_name, seed, r.teacher,
                     r.teacher_best_epoch, r.teacher_record);
        save_trained(config, data, kd_label, seed, r.student, r.student_best_epoch,
                     r.student_record);
        return;
      }
      std::vector<models::Model> teachers;
      for (const auto& l : labels) {
        teachers.push_back(
            persist::load_model(checkpoint_path(config, l, seed), data.fingerprint()).model);
      }
      std::vector<const models::Model*> ptrs;
      for (const auto& t : teachers) ptrs.push_back(&t);
      train::StudentOptions options;
      options.monitor = config.distill.monitor;
      options.monitor_fraction = config.distill.monitor_fraction;
      options.merge_validation = config.distill.merge_validation;
      auto r = train::train_student_pretrain(student_spec, ptrs, dc, splits, hyper, options);
      save_trained(config, data, kd_label, seed, r.student, r.best_epoch, r.record);
      if (r.gate) {
        auto gate_path = checkpoint_path(config, kd_label, seed);
        gate_path.replace_extension(".gate");
        persist::save_gate(*r.gate, gate_path);
      }
    });
    for (auto s : config.seeds) out.push_back(checkpoint_path(config, kd_label, s));
    return out;
  });
}

std::vector<ResultRow> evaluate(const ExperimentConfig& config, const ExperimentData& data) {
  return staged("evaluate", [&] {
    const fs::path dir = config.output_dir / "checkpoints";
    if (!fs::exists(dir)) throw std::runtime_error("no checkpoints under " + dir.string());
    std::vector<std::pair<std::string, std::uint64_t>> found;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (auto parsed = parse_checkpoint_name(entry.path())) found.push_back(*parsed);
    }
    // Seeds in config order, labels sorted.
    std::sort(found.begin(), found.end());
    std::vector<ResultRow> rows;
    std::map<std::uint64_t, std::vector<std::vector<double>>> member_probs;
    std::map<std::uint64_t, std::vector<ResultRow>> member_rows;
    const std::set<std::string> members = [&] {
      auto l = ensemble_labels(config);
      return std::set<std::string>(l.begin(), l.end());
    }();

    for (const auto& [label, seed] : found) {
      const auto loaded =
          persist::load_model(checkpoint_path(config, label, seed), data.fingerprint());
      const auto probs = train::predict_probs(loaded.model, data.test, config.train.eval_batch_size);
      const auto m = train::evaluate_probs(probs, data.test);
      ResultRow row{label, seed, m.auc, m.logloss, static_cast<std::size_t>(loaded.meta.epoch),
                    record_seconds(record_path(config, label, seed))};
      rows.push_back(row);
      if (members.contains(label)) {
        member_probs[seed].push_back(probs);
        member_rows[seed].push_back(row);
      }
    }
    for (const auto& [seed, mrows] : member_rows) {
      if (mrows.size() < 2) continue;
      ResultRow row{"ensemble", seed, 0.0, 0.0, 0, 0.0};
      if (config.ensemble.average == "prediction") {
        const auto& all = member_probs.at(seed);
        std::vector<double> avg(all.front().size(), 0.0);
        for (const auto& p : all) {
          for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += p[i];
        }
        for (auto& v : avg) v /= static_cast<double>(all.size());
        const auto m = train::evaluate_probs(avg, data.test);
        row.auc = m.auc;
        row.logloss = m.logloss;
      } else {
        std::vector<double> aucs, lls;
        for (const auto& r : mrows) {
          aucs.push_back(r.auc);
          lls.push_back(r.logloss);
        }
        row.auc = mean(aucs);
        row.logloss = mean(lls);
      }
      for (const auto& r : mrows) row.seconds += r.seconds;
      rows.push_back(row);
    }
    // Stable presentation: by label, then by the configured seed order.
    std::map<std::uint64_t, std::size_t> seed_rank;
    for (std::size_t i = 0; i < config.seeds.size(); ++i) seed_rank[config.seeds[i]] = i;
    std::stable_sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) {
      if (a.model != b.model) return a.model < b.model;
      const auto ra = seed_rank.contains(a.seed) ? seed_rank[a.seed] : SIZE_MAX;
      const auto rb = seed_rank.contains(b.seed) ? seed_rank[b.seed] : SIZE_MAX;
      return ra != rb ? ra < rb : a.seed < b.seed;
    });
    write_text(config.output_dir / "results.csv", rows_csv(rows));
    return rows;
  });
}

ExperimentReport report(const ExperimentConfig& config) {
  return staged("report", [&] {
    const auto rows = parse_rows_csv(read_text(config.output_dir / "results.csv"));
    std::string baseline = config.baseline_label();
    if (baseline.empty() && !rows.empty()) baseline = rows.front().model;
    auto rep = build_report(rows, baseline);
    write_text(config.output_dir / "report.txt", report_text(rep));
    write_text(config.output_dir / "report.csv", report_csv(rep));
    return rep;
  });
}

ExperimentReport run(const ExperimentConfig& config) {
  const fs::path marker = config.output_dir / "FAILED";
  try {
    fs::create_directories(config.output_dir);
    if (fs::exists(marker)) fs::remove(marker);
    // Pre-flight before any training: the distill stage's teachers must either
    // exist already or be produced by an earlier stage of this run.
    if (!config.student.empty() && config.distill.config.scheme == distill::Scheme::pretrain) {
      std::set<std::string> produced;
      for (const auto& t : config.teachers) produced.insert("teacher." + t);
      for (const auto& l : ensemble_labels(config)) produced.insert(l);
      for (const auto& l : distill_teacher_labels(config)) {
        if (produced.contains(l)) continue;
        for (auto s : config.seeds) {
          const auto p = checkpoint_path(config, l, s);
          if (!fs::exists(p)) {
            throw StageError("distill", "missing teacher checkpoint " + p.string());
          }
        }
      }
    }
    const auto data = preprocess(config);
    if (!config.teachers.empty()) train_teachers(config, data);
    if (!config.ensemble.models.empty()) make_ensemble(config, data);
    if (!config.student.empty()) distill_students(config, data);
    evaluate(config, data);
    return report(config);
  } catch (const StageError& e) {
    std::error_code ec;
    fs::create_directories(config.output_dir, ec);
    std::ofstream(marker) << "stage = " << e.stage() << "\nerror = " << e.what() << "\n";
    throw;
  }
}

}  // namespace ctrkd::experiment
