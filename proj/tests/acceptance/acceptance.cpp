// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
// `ctrkd_acceptance <name>...` runs only the named criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "ctrkd/config.hpp"
#include "ctrkd/distill.hpp"
#include "ctrkd/experiment.hpp"
#include "ctrkd/format.hpp"
#include "ctrkd/persist.hpp"
#include "ctrkd/synthetic.hpp"
#include "ctrkd/train.hpp"
#include "test_support.hpp"

using namespace ctrkd;
using features::EncodedDataset;
using features::InputLayout;
using models::Model;
using models::ModelSpec;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& line) { std::printf("    %s\n", line.c_str()); }

std::vector<double> flat_params(const Model& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) {
    out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
  }
  return out;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

double seconds_since(Clock::time_point t) {
  return std::chrono::duration<double>(Clock::now() - t).count();
}

struct Splits {
  EncodedDataset train, val, test;
};

Splits synthetic_splits(std::size_t samples, std::uint64_t data_seed) {
  features::SyntheticSpec spec;
  spec.samples = samples;
  spec.fields = 8;
  spec.vocab_per_field = 50;
  spec.seed = data_seed;
  const auto all = features::make_synthetic(spec).data;
  features::SplitStrategy s;
  s.seed = data_seed;
  const auto idx = features::split(all.size(), s);
  return {all.subset(idx.train), all.subset(idx.val), all.subset(idx.test)};
}

// ---------------------------------------------------------------------------

Outcome gradient_check() {
  const auto start = Clock::now();
  const InputLayout layout{{5, 4, 6}, 2};
  const auto data = testing::random_dataset(layout, 2, 11);
  const auto batch = testing::whole_batch(data);
  double worst = 0.0;
  std::string where;
  std::size_t weights = 0;
  for (const auto& name : testing::zoo_names()) {
    auto spec = ModelSpec::preset(name, {16, 16}, 4);
    if (name == "dcn") spec.cross_layers = 2;
    if (name == "xdeepfm") spec.cin_maps = {4};
    Model m(spec, layout, 5);
    testing::randomize(m, 6, 0.3);
    const auto g = testing::check_model_gradients(m, batch);
    note(fmt("%-8s %6zu weights  max rel err %.2e", name.c_str(), g.checked, g.max_rel_error));
    weights += g.checked;
    if (g.max_rel_error > worst) {
      worst = g.max_rel_error;
      where = name + " " + g.worst;
    }
  }
  const double secs = seconds_since(start);
  return {worst < 1e-4 && secs < 60.0,
          fmt("max rel err %.2e (%s) over %zu weights, %.1fs (limit 1e-4, 60s)", worst,
              where.c_str(), weights, secs)};
}

Outcome loss_identities() {
  bool ok = true;
  double worst_ln2 = 0.0;
  for (double tau : {1.0, 2.0, 10.0}) {
    worst_ln2 = std::max(worst_ln2, std::abs(distill::soft_label_loss(0.0, 0.0, tau) - std::log(2.0)));
    Tape tape(false);
    const Tensor zero(Shape{3}, 0.0);
    worst_ln2 = std::max(worst_ln2,
                         std::abs(distill::soft_label_loss(tape, zero, zero, tau).item() - std::log(2.0)));
  }
  ok &= worst_ln2 <= 1e-12;

  // tau = 1 against cross-entropy of the sigmoided logits
  Rng rng(1);
  std::size_t tau1_mismatch = 0;
  std::vector<double> zt(64), zs(64), pt(64), ps(64);
  for (std::size_t i = 0; i < 64; ++i) {
    zt[i] = rng.normal(0, 3);
    zs[i] = rng.normal(0, 3);
    pt[i] = stable_sigmoid(zt[i]);
    ps[i] = stable_sigmoid(zs[i]);
    tau1_mismatch += distill::soft_label_loss(zt[i], zs[i], 1.0) !=
                     distill::cross_entropy({&pt[i], 1}, {&ps[i], 1});
  }
  {
    Tape tape(false);
    const auto a = distill::soft_label_loss(tape, Tensor::vector(zt), Tensor::vector(zs), 1.0).item();
    const auto b = tape.cross_entropy(Tensor::vector(ps), Tensor::vector(pt)).item();
    tau1_mismatch += a != b;
  }
  ok &= tau1_mismatch == 0;

  // identity projection, equal hints
  Rng prng(2);
  distill::HintProjector eye(6, 6, prng);
  std::vector<double> hv(4 * 6);
  for (auto& v : hv) v = rng.normal();
  double hint_value;
  {
    Tape tape(false);
    const Tensor h(Shape{4, 6}, hv);
    hint_value = distill::hint_loss(tape, h, h, eye).item();
  }
  const double plain_hint = distill::hint_loss(std::span(hv).subspan(0, 6), std::span(hv).subspan(0, 6),
                                               eye.weight().values(), 6, 6);
  ok &= hint_value == 0.0 && plain_hint == 0.0;

  // beta = 0 returns the cross-entropy bit for bit
  std::vector<double> labels(64);
  for (auto& y : labels) y = rng.uniform() < 0.4 ? 1.0 : 0.0;
  bool beta0 = true;
  {
    Tape tape(false);
    const auto ce = tape.cross_entropy(Tensor::vector(ps), Tensor::vector(labels));
    const auto kd = distill::soft_label_loss(tape, Tensor::vector(zt), Tensor::vector(zs), 2.0);
    const double a = distill::student_loss(tape, ce, kd, 0.0, 1.0).item();
    const double b = ce.item();
    beta0 &= std::memcmp(&a, &b, sizeof a) == 0;
    const double bce = distill::bce_loss(labels, ps);
    const double c = distill::student_loss(bce, 0.7, 0.0, 1.0);
    beta0 &= std::memcmp(&c, &bce, sizeof c) == 0;
  }
  ok &= beta0;
  return {ok, fmt("|soft(0,0,tau)-ln2| max %.1e, tau=1 mismatches %zu, hint(I,v,v) = %g, "
                  "beta=0 bitwise %s",
                  worst_ln2, tau1_mismatch, hint_value, beta0 ? "yes" : "no")};
}

Outcome gating() {
  Rng rng(3);
  double worst_sum = 0.0, worst_shift = 0.0;
  bool in_open_interval = true;
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t m = 1 + rng.below(8);
    std::vector<double> w(m), b(m), z(m);
    for (std::size_t i = 0; i < m; ++i) {
      w[i] = rng.normal(0, 2);
      b[i] = rng.normal(0, 2);
      z[i] = rng.normal(0, 4);
    }
    const auto alpha = distill::gate_weights(z, distill::TeacherGate(w, b));
    double s = 0.0;
    for (double a : alpha) {
      s += a;
      in_open_interval &= a >= 0.0 && a <= 1.0;
    }
    worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    const double c = rng.normal(0, 20);
    auto shifted = b;
    for (auto& x : shifted) x += c;
    const auto beta = distill::gate_weights(z, distill::TeacherGate(w, shifted));
    for (std::size_t i = 0; i < m; ++i) worst_shift = std::max(worst_shift, std::abs(alpha[i] - beta[i]));
  }

  // One teacher: gated and ungated students follow the same trajectory.
  const auto d = synthetic_splits(5000, 21);
  train::TrainHyper h;
  h.batch_size = 128;
  h.max_epochs = 3;
  h.seed = 4;
  const auto teacher = train::train_teacher(ModelSpec::preset("deepfm", {16}, 4), {&d.train, &d.val}, h);
  const Model* ts[] = {&teacher.model};
  distill::DistillConfig cfg;
  cfg.tau = 2.0;
  std::vector<std::vector<double>> gated_trace, plain_trace;
  auto gh = h;
  cfg.gating = true;
  gh.on_step = [&](const train::StepInfo&, const Model& s) { gated_trace.push_back(flat_params(s)); };
  train::train_student_pretrain(ModelSpec::preset("dnn", {16}, 4), ts, cfg, {&d.train, &d.val}, gh);
  cfg.gating = false;
  gh.on_step = [&](const train::StepInfo&, const Model& s) { plain_trace.push_back(flat_params(s)); };
  train::train_student_pretrain(ModelSpec::preset("dnn", {16}, 4), ts, cfg, {&d.train, &d.val}, gh);
  bool same = gated_trace.size() == plain_trace.size() && !gated_trace.empty();
  for (std::size_t i = 0; same && i < gated_trace.size(); ++i) same = same_bits(gated_trace[i], plain_trace[i]);

  return {worst_sum <= 1e-12 && worst_shift <= 1e-12 && in_open_interval && same,
          fmt("10^4 inputs: max |sum-1| %.1e, max shift diff %.1e, alpha in [0,1] %s; "
              "single-teacher gated == ungated over %zu steps: %s",
              worst_sum, worst_shift, in_open_interval ? "yes" : "no", gated_trace.size(),
              same ? "yes" : "no")};
}

Outcome unidirectional_flow() {
  const auto d = synthetic_splits(10000, 31);
  train::TrainHyper th;
  th.batch_size = 256;
  th.max_epochs = 3;
  th.seed = 17;
  auto sh = th;
  sh.seed = 18;
  sh.data_seed = 17;
  distill::DistillConfig cfg;
  cfg.scheme = distill::Scheme::cotrain;
  cfg.tau = 2.0;
  const auto tspec = ModelSpec::preset("deepfm", {32, 16}, 8);
  auto sspec = ModelSpec::preset("dnn", {16}, 8);
  tspec.validate();

  std::vector<std::vector<double>> co, alone;
  std::size_t nonzero_grads = 0;
  auto h = th;
  h.on_step = [&](const train::StepInfo&, const Model& t) { co.push_back(flat_params(t)); };
  train::CotrainHooks hooks;
  hooks.on_step = [&](const train::StepInfo&, const Model& t, const Model&) {
    for (const auto& p : t.parameters()) {
      for (double g : p.tensor.grad()) nonzero_grads += g != 0.0;
    }
  };
  auto spec_t = tspec;
  spec_t.dropout = 0.2;  // exercises the dropout stream too
  train::train_student_cotrain(spec_t, sspec, cfg, {&d.train, &d.val}, h, sh,
                               train::MonitorMode::kd_loss_min, hooks);
  h.on_step = [&](const train::StepInfo&, const Model& t) { alone.push_back(flat_params(t)); };
  train::train_teacher(spec_t, {&d.train, &d.val}, h);

  std::size_t equal = 0;
  for (std::size_t i = 0; i < std::min(co.size(), alone.size()); ++i) equal += same_bits(co[i], alone[i]);
  const bool ok = co.size() == alone.size() && equal == co.size() && !co.empty() && nonzero_grads == 0;
  return {ok, fmt("%zu/%zu steps bitwise equal to standalone teacher (%zu co-train steps), "
                  "non-zero teacher grads after student steps: %zu",
                  equal, alone.size(), co.size(), nonzero_grads)};
}

Outcome auc_oracle() {
  Rng rng(5);
  double worst = 0.0;
  std::size_t tied_vectors = 0;
  for (int v = 0; v < 100; ++v) {
    const std::size_t n = 2 + rng.below(999);
    std::vector<double> s(n), y(n);
    const bool ties = v % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = ties ? static_cast<double>(rng.below(1 + v / 4)) / 7.0 : rng.uniform();
      y[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
    }
    y[0] = 1.0;
    y[1] = 0.0;
    tied_vectors += ties;
    worst = std::max(worst, std::abs(train::auc(s, y) - testing::auc_all_pairs(s, y)));
  }
  return {worst <= 1e-9, fmt("100 vectors (%zu with heavy ties), max |rank - pairs| = %.1e (limit 1e-9)",
                             tied_vectors, worst)};
}

// -- knowledge distillation on synthetic data ---------------------------------

struct KdExperiment {
  std::vector<double> student_only, kd_deepfm, kd_dcn, kd_xdeepfm, kd_3t;
  std::vector<double> teacher_deepfm, teacher_dcn, teacher_xdeepfm;
  double kd_seconds = 0.0;  // teacher + both students for the DeepFM arm
  double oracle_auc = 0.0;
  bool val_labels_untouched = true;
};

const KdExperiment& kd_experiment() {
  static const KdExperiment result = [] {
    KdExperiment r;
    features::SyntheticSpec spec;
    spec.samples = 100000;
    spec.fields = 8;
    spec.vocab_per_field = 50;
    spec.seed = 2019;
    const auto synth = features::make_synthetic(spec);
    features::SplitStrategy split;
    split.seed = 2019;
    const auto idx = features::split(synth.data.size(), split);
    const auto train = synth.data.subset(idx.train);
    auto val = synth.data.subset(idx.val);
    const auto test = synth.data.subset(idx.test);
    {
      std::vector<double> p, y;
      for (auto i : idx.test) {
        p.push_back(synth.probability[i]);
        y.push_back(synth.data.label(i));
      }
      r.oracle_auc = train::auc(p, y);
    }
    note(fmt("synthetic: %zu train / %zu val / %zu test, true-probability test AUC %.4f",
             train.size(), val.size(), test.size(), r.oracle_auc));

    const auto student_spec = ModelSpec::preset("dnn", {32, 32}, 8);
    distill::DistillConfig single;
    single.tau = 1.0;
    single.beta = 0.5;
    single.gamma = 0.5;
    auto ensemble = single;
    ensemble.gating = true;

    auto test_auc = [&](const Model& m) { return train::evaluate(m, test).auc; };
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      train::TrainHyper h;
      h.batch_size = 256;
      h.max_epochs = 40;
      h.seed = seed;
      const train::DataSplits splits{&train, &val};

      const auto t0 = Clock::now();
      const auto deepfm = train::train_teacher(ModelSpec::preset("deepfm", {32, 32}, 8), splits, h);
      const auto plain = train::train_teacher(student_spec, splits, h);
      const Model* one[] = {&deepfm.model};
      val.reset_label_reads();
      const auto kd = train::train_student_pretrain(student_spec, one, single, splits, h);
      r.val_labels_untouched &= val.label_reads() == 0;
      r.kd_seconds += seconds_since(t0);

      const auto dcn = train::train_teacher(ModelSpec::preset("dcn", {32, 32}, 8), splits, h);
      const auto xdeepfm = train::train_teacher(ModelSpec::preset("xdeepfm", {32, 32}, 8), splits, h);
      const Model* dcn_only[] = {&dcn.model};
      const Model* xdeepfm_only[] = {&xdeepfm.model};
      const Model* three[] = {&deepfm.model, &dcn.model, &xdeepfm.model};
      const auto kd_dcn = train::train_student_pretrain(student_spec, dcn_only, single, splits, h);
      const auto kd_x = train::train_student_pretrain(student_spec, xdeepfm_only, single, splits, h);
      const auto kd3 = train::train_student_pretrain(student_spec, three, ensemble, splits, h);

      r.teacher_deepfm.push_back(test_auc(deepfm.model));
      r.teacher_dcn.push_back(test_auc(dcn.model));
      r.teacher_xdeepfm.push_back(test_auc(xdeepfm.model));
      r.student_only.push_back(test_auc(plain.model));
      r.kd_deepfm.push_back(test_auc(kd.student));
      r.kd_dcn.push_back(test_auc(kd_dcn.student));
      r.kd_xdeepfm.push_back(test_auc(kd_x.student));
      r.kd_3t.push_back(test_auc(kd3.student));
      note(fmt("seed %llu: teachers deepfm %.4f dcn %.4f xdeepfm %.4f | student-only %.4f | "
               "KD deepfm %.4f dcn %.4f xdeepfm %.4f 3T %.4f",
               static_cast<unsigned long long>(seed), r.teacher_deepfm.back(), r.teacher_dcn.back(),
               r.teacher_xdeepfm.back(), r.student_only.back(), r.kd_deepfm.back(),
               r.kd_dcn.back(), r.kd_xdeepfm.back(), r.kd_3t.back()));
      std::fflush(stdout);
    }
    return r;
  }();
  return result;
}

double mean_of(const std::vector<double>& v) { return experiment::mean(v); }

Outcome kd_directional() {
  const auto& r = kd_experiment();
  std::size_t wins = 0;
  for (std::size_t i = 0; i < r.kd_deepfm.size(); ++i) wins += r.kd_deepfm[i] > r.student_only[i];
  const double kd = mean_of(r.kd_deepfm), plain = mean_of(r.student_only);
  return {kd >= plain && wins >= 4 && r.kd_seconds < 600.0,
          fmt("mean test AUC KD %.4f vs student-only %.4f (%+.1f per mille), wins %zu/5, "
              "%.0fs for teacher + both students (limit 600s)",
              kd, plain, (kd - plain) * 1000.0, wins, r.kd_seconds)};
}

Outcome ensemble_vs_single() {
  const auto& r = kd_experiment();
  const double best_single = std::max({mean_of(r.kd_deepfm), mean_of(r.kd_dcn), mean_of(r.kd_xdeepfm)});
  const double ens = mean_of(r.kd_3t);
  return {ens >= best_single - 0.002,
          fmt("3T-distilled mean AUC %.4f vs best single-teacher-distilled %.4f "
              "(deepfm %.4f, dcn %.4f, xdeepfm %.4f); bound -0.002",
              ens, best_single, mean_of(r.kd_deepfm), mean_of(r.kd_dcn), mean_of(r.kd_xdeepfm))};
}

Outcome early_stop() {
  using train::EarlyStopMonitor;
  using train::MonitorMode;
  using train::StopDecision;
  bool ok = true;
  auto trace = [](MonitorMode mode, const std::vector<double>& values) {
    EarlyStopMonitor m(mode, 3);
    std::vector<std::size_t> since;
    std::size_t stop_at = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const bool stop = m.update(values[i]) == StopDecision::stop;
      since.push_back(m.epochs_since_best());
      if (stop) {
        stop_at = i + 1;
        break;
      }
    }
    return std::pair{since, stop_at};
  };
  const auto [a_since, a_stop] = trace(MonitorMode::val_auc_max, {0.80, 0.79, 0.79, 0.79, 0.81});
  ok &= a_stop == 4 && a_since == std::vector<std::size_t>{0, 1, 2, 3};
  const auto [b_since, b_stop] = trace(MonitorMode::kd_loss_min, {0.5, 0.4, 0.41, 0.39, 0.395, 0.39, 0.392});
  ok &= b_stop == 7 && b_since == std::vector<std::size_t>{0, 0, 1, 0, 1, 2, 3};
  std::vector<double> rising;
  for (int i = 0; i < 100; ++i) rising.push_back(0.5 + i * 1e-3);
  ok &= trace(MonitorMode::val_auc_max, rising).second == 0;

  // restoring the best checkpoint on stop
  auto w = Tensor::parameter({1}, {1.0});
  EarlyStopMonitor m(MonitorMode::kd_loss_min, 3, {w});
  for (double v : {0.5, 0.3, 0.4, 0.45, 0.6}) {
    w.values()[0] += 1.0;
    if (m.update(v) == StopDecision::stop) break;
  }
  ok &= w[0] == 3.0 && m.best_epoch() == 2;

  const bool labels = kd_experiment().val_labels_untouched;
  // A direct check outside the big experiment, with the validation set merged in as well.
  auto d = synthetic_splits(4000, 41);
  train::TrainHyper h;
  h.batch_size = 128;
  h.max_epochs = 4;
  const auto teacher = train::train_teacher(ModelSpec::preset("deepfm", {8}, 4), {&d.train, &d.val}, h);
  const Model* ts[] = {&teacher.model};
  d.val.reset_label_reads();
  train::train_student_pretrain(ModelSpec::preset("dnn", {8}, 4), ts, distill::DistillConfig{},
                                {&d.train, &d.val}, h);
  const std::size_t reads = d.val.label_reads();
  train::StudentOptions merged;
  merged.merge_validation = true;
  train::train_student_pretrain(ModelSpec::preset("dnn", {8}, 4), ts, distill::DistillConfig{},
                                {&d.train, &d.val}, h, merged);
  ok &= labels && reads == 0;
  return {ok, fmt("traces stop at epochs %zu and %zu as expected, best restored %s; "
                  "validation label reads in kd_loss_min mode: %zu (KD experiment: %s)",
                  a_stop, b_stop, w[0] == 3.0 ? "yes" : "no", reads, labels ? "0" : "non-zero")};
}

Outcome persistence() {
  const InputLayout layout{{30, 12, 50, 7}, 3};
  const auto data = testing::random_dataset(layout, 100, 51);
  const auto batch = testing::whole_batch(data, false);
  const auto dir = testing::scratch_dir("acceptance_persist");
  std::size_t identical = 0;
  for (const auto& name : testing::zoo_names()) {
    Model m(ModelSpec::preset(name, {16, 16}, 6), layout, 52);
    testing::randomize(m, 53, 0.2);
    const auto path = dir / (name + ".ckpt");
    persist::save_model(m, path, {52, 1, 0x1234ULL});
    const auto back = persist::load_model(path, 0x1234ULL);
    const bool same = same_bits(m.predict(batch), back.model.predict(batch)) &&
                      same_bits(flat_params(m), flat_params(back.model));
    identical += same;
    if (!same) note(name + ": predictions differ after reload");
  }
  const auto n = testing::zoo_names().size();
  return {identical == n, fmt("%zu/%zu models reproduce 100 predictions bitwise after save/load",
                              identical, n)};
}

std::map<std::string, std::string> read_expected(const std::string& path) {
  std::ifstream in(path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
  }
  return out;
}

Outcome pipeline_fidelity() {
  const std::string dir = CTRKD_TEST_DATA_DIR;
  const auto expected = read_expected(dir + "/criteo_fixture.expected");
  if (expected.empty()) return {false, "missing " + dir + "/criteo_fixture.expected"};
  const auto config = experiment::ExperimentConfig::parse(
      experiment::recipe("criteo"), {"data.path=" + dir + "/criteo_fixture.txt.gz"});
  const auto data = experiment::load_data(config);
  const auto& st = data.stats;

  std::size_t mismatches = 0;
  auto check = [&](const std::string& key, const std::string& got) {
    const auto it = expected.find(key);
    if (it == expected.end() || it->second != got) {
      ++mismatches;
      note(key + ": expected " + (it == expected.end() ? "?" : it->second) + ", got " + got);
    }
  };
  check("train_rows", std::to_string(st.train_rows));
  check("val_rows", std::to_string(st.val_rows));
  check("test_rows", std::to_string(st.test_rows));
  check("rows", std::to_string(st.train_rows + st.val_rows + st.test_rows));
  check("vocab_sizes", join(st.vocab_sizes));
  check("collapsed_tokens", join(st.collapsed_tokens));
  check("train_unk_count", join(st.train_unk_count));

  double numeric_sum = 0.0;
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    for (double v : data.train.numeric(i)) numeric_sum += v;
  }
  const double want = std::stod(expected.at("train_numeric_sum"));
  const double rel = std::abs(numeric_sum - want) / std::abs(want);
  if (rel > 1e-12) {
    ++mismatches;
    note(fmt("train_numeric_sum: expected %.17g, got %.17g", want, numeric_sum));
  }
  std::size_t vocab_total = 0;
  for (auto v : st.vocab_sizes) vocab_total += v;
  return {mismatches == 0,
          fmt("%zu/%zu/%zu rows, %zu vocabulary entries over 26 fields, %zu mismatches vs oracle "
              "(numeric sum rel diff %.1e)",
              st.train_rows, st.val_rows, st.test_rows, vocab_total, mismatches, rel)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient_check", gradient_check},
      {"loss_identities", loss_identities},
      {"gating", gating},
      {"unidirectional_flow", unidirectional_flow},
      {"auc_oracle", auc_oracle},
      {"kd_directional", kd_directional},
      {"ensemble_vs_single", ensemble_vs_single},
      {"early_stop", early_stop},
      {"persistence", persistence},
      {"pipeline_fidelity", pipeline_fidelity},
  };
  std::vector<std::string> only(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(),
                seconds_since(start));
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
