#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "ctrkd/config.hpp"
#include "ctrkd/experiment.hpp"
#include "ctrkd/persist.hpp"
#include "ctrkd/report.hpp"
#include "test_support.hpp"

using namespace ctrkd;
using namespace ctrkd::experiment;
namespace fs = std::filesystem;

namespace {

std::string tiny_config(const fs::path& out, const std::string& extra = "") {
  return "data.source = synthetic\n"
         "synthetic.samples = 1500\n"
         "synthetic.fields = 4\n"
         "synthetic.vocab_per_field = 10\n"
         "model.deepfm.arch = deepfm\n"
         "model.deepfm.hidden = 8\n"
         "model.dnn.arch = dnn\n"
         "model.dnn.hidden = 6\n"
         "train.max_epochs = 2\n"
         "train.batch_size = 128\n"
         "experiment.output_dir = " +
         out.string() + "\n" + extra;
}

std::size_t rows_for(const ExperimentReport& r, const std::string& model) {
  std::size_t n = 0;
  for (const auto& row : r.rows) n += row.model == model;
  return n;
}

}  // namespace

TEST_CASE("config parse/serialize is a fixed point") {
  const auto text = tiny_config("/tmp/x",
                                "teacher.models = deepfm\n"
                                "student.model = dnn\n"
                                "distill.teachers = deepfm\n"
                                "distill.tau = 3   # comment\n"
                                "distill.beta = 0.3\n"
                                "distill.gamma = 0.7\n"
                                "model.x.arch = xdeepfm\n"
                                "model.x.cin_maps = 3,2\n"
                                "experiment.seeds = 1,2,3\n");
  const auto a = ExperimentConfig::parse(text);
  const auto s1 = a.serialize();
  const auto b = ExperimentConfig::parse(s1);
  CHECK(b.serialize() == s1);
  CHECK(b.distill.config.tau == 3.0);
  CHECK(b.seeds == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(b.model_spec("x").cin_maps == std::vector<std::size_t>{3, 2});
  CHECK(b.model_spec("x") == a.model_spec("x"));
}

TEST_CASE("config rejects unknown and duplicate keys with line numbers") {
  try {
    ExperimentConfig::parse("data.source = synthetic\ntrain.learning_rate = 0.1\n");
    FAIL("accepted an unknown key");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  CHECK_THROWS_AS(ExperimentConfig::parse("train.lr = 0.1\ntrain.lr = 0.2\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("train.lr = fast\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("distill.beta = 0.9\ndistill.gamma = 0.9\n"), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::parse("ensemble.mode = D\nensemble.partitions = 1\n"
                                          "ensemble.models = dnn\n"),
                  ConfigError);
}

TEST_CASE("overrides replace config values") {
  const auto c = ExperimentConfig::parse(tiny_config("/tmp/x"), {"train.lr=0.5", "experiment.seeds=4,5"});
  CHECK(c.train.lr == 0.5);
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK_THROWS_AS(ExperimentConfig::parse(tiny_config("/tmp/x"), {"train.nope=1"}), ConfigError);
}

TEST_CASE("dataset recipes") {
  const auto criteo = ExperimentConfig::parse(recipe("criteo"), {"data.path=x.txt"});
  CHECK(criteo.data.min_count == 10);
  CHECK(criteo.data.embedding_dim == 20);
  CHECK(criteo.data.split == "sequential");
  CHECK(criteo.data.num_days == 7);
  CHECK(criteo.data.train_days == 5);
  CHECK(criteo.train.batch_size == 2000);
  CHECK(criteo.train.lr == 0.001);
  const auto avazu = ExperimentConfig::parse(recipe("avazu"), {"data.path=x.csv"});
  CHECK(avazu.data.min_count == 5);
  CHECK(avazu.data.embedding_dim == 40);
  CHECK(avazu.data.split == "random");
  CHECK(avazu.data.train_ratio == 0.8);
  CHECK(avazu.model_spec("deepfm").embedding_dim == 40);
  CHECK_THROWS_AS(recipe("kdd12"), ConfigError);
}

TEST_CASE("report arithmetic") {
  SUBCASE("baseline against itself is 0.0 per mille") {
    const auto r = build_report({{"dnn", 1, 0.75, 0.45, 3, 1.0}}, "dnn");
    CHECK(r.aggregate("dnn").auc_delta_permille == 0.0);
    CHECK(report_text(r).find("+0.0‰") != std::string::npos);
  }
  SUBCASE("0.7512 vs 0.7500 is +1.2 per mille") {
    const auto r = build_report({{"base", 1, 0.7500, 0.45, 3, 1.0}, {"kd", 1, 0.7512, 0.44, 3, 1.0}},
                                "base");
    CHECK(r.aggregate("kd").auc_delta_permille == doctest::Approx(1.2).epsilon(1e-9));
    CHECK(report_text(r).find("+1.2‰") != std::string::npos);
    CHECK(report_text(r).find("-10.0‰") != std::string::npos);
  }
  SUBCASE("five-seed aggregate") {
    const std::vector<double> aucs{0.71, 0.74, 0.735, 0.702, 0.75};
    std::vector<ResultRow> rows;
    for (std::size_t i = 0; i < aucs.size(); ++i) rows.push_back({"m", i + 1, aucs[i], 1.0 - aucs[i], 1, 0.5});
    const auto a = build_report(rows, "m").aggregate("m");
    double m = 0.0;
    for (double v : aucs) m += v;
    m /= 5.0;
    double ss = 0.0;
    for (double v : aucs) ss += (v - m) * (v - m);
    CHECK(a.runs == 5);
    CHECK(a.auc_mean == doctest::Approx(m).epsilon(1e-14));
    CHECK(a.auc_std == doctest::Approx(std::sqrt(ss / 4.0)).epsilon(1e-12));
    CHECK(a.logloss_std == doctest::Approx(std::sqrt(ss / 4.0)).epsilon(1e-9));
  }
  SUBCASE("unknown baseline") {
    CHECK_THROWS_AS(build_report({{"a", 1, 0.7, 0.5, 1, 1.0}}, "b"), std::invalid_argument);
  }
  SUBCASE("results csv round trip") {
    const std::vector<ResultRow> rows{{"a", 3, 0.123456789012345, 0.5, 4, 1.25}, {"b.c", 1, 1.0, 0.0, 0, 0}};
    const auto back = parse_rows_csv(rows_csv(rows));
    REQUIRE(back.size() == 2);
    CHECK(back[0].auc == rows[0].auc);
    CHECK(back[1].model == "b.c");
    CHECK(back[0].best_epoch == 4);
  }
}

TEST_CASE("run: one row per seed, deterministic") {
  const auto dir = testing::scratch_dir("run_cardinality");
  const auto text = tiny_config(dir / "a",
                                "teacher.models = deepfm\n"
                                "student.model = dnn\n"
                                "distill.teachers = deepfm\n"
                                "distill.tau = 2\n"
                                "experiment.seeds = 1,2,3,4,5\n");
  const auto rep = run(ExperimentConfig::parse(text));
  for (const auto* m : {"teacher.deepfm", "student.dnn", "kd.dnn"}) {
    CHECK(rows_for(rep, m) == 5);
    CHECK(rep.aggregate(m).runs == 5);
  }
  CHECK(rep.baseline == "student.dnn");
  CHECK(fs::exists(dir / "a" / "report.txt"));
  CHECK(fs::exists(dir / "a" / "report.csv"));
  CHECK(fs::exists(dir / "a" / "records" / "kd.dnn__s3.csv"));
  CHECK(!fs::exists(dir / "a" / "FAILED"));

  const auto text_b = tiny_config(dir / "b",
                                  "teacher.models = deepfm\n"
                                  "student.model = dnn\n"
                                  "distill.teachers = deepfm\n"
                                  "distill.tau = 2\n"
                                  "experiment.seeds = 1,2,3,4,5\n");
  const auto again = run(ExperimentConfig::parse(text_b));
  REQUIRE(again.rows.size() == rep.rows.size());
  for (std::size_t i = 0; i < rep.rows.size(); ++i) {
    CHECK(again.rows[i].model == rep.rows[i].model);
    CHECK(again.rows[i].auc == rep.rows[i].auc);
    CHECK(again.rows[i].logloss == rep.rows[i].logloss);
    CHECK(again.rows[i].best_epoch == rep.rows[i].best_epoch);
  }
}

TEST_CASE("run: missing teacher checkpoint fails before training") {
  const auto dir = testing::scratch_dir("run_missing");
  const auto text = tiny_config(dir, "student.model = dnn\ndistill.teachers = deepfm\n");
  try {
    run(ExperimentConfig::parse(text));
    FAIL("run succeeded without its teacher");
  } catch (const StageError& e) {
    CHECK(e.stage() == "distill");
  }
  CHECK(fs::exists(dir / "FAILED"));
  CHECK(!fs::exists(dir / "checkpoints"));
}

TEST_CASE("make_ensemble mode M") {
  const auto dir = testing::scratch_dir("ens_m");
  SUBCASE("three architectures") {
    const auto c = ExperimentConfig::parse(tiny_config(dir,
                                                       "model.dcn.arch = dcn\nmodel.dcn.hidden = 8\n"
                                                       "model.xdeepfm.arch = xdeepfm\nmodel.xdeepfm.hidden = 8\n"
                                                       "ensemble.models = deepfm, dcn, xdeepfm\n"));
    const auto data = preprocess(c);
    const auto paths = make_ensemble(c, data);
    CHECK(paths.size() == 3);
    for (const auto& p : paths) CHECK(fs::exists(p));
    const auto rows = evaluate(c, data);
    std::set<std::string> labels;
    for (const auto& r : rows) labels.insert(r.model);
    CHECK(labels == std::set<std::string>{"ens.deepfm", "ens.dcn", "ens.xdeepfm", "ensemble"});
  }
  SUBCASE("one architecture, two seeds") {
    const auto c = ExperimentConfig::parse(tiny_config(dir, "ensemble.models = dnn\nensemble.copies = 2\n"));
    const auto data = preprocess(c);
    const auto paths = make_ensemble(c, data);
    REQUIRE(paths.size() == 2);
    const auto a = persist::load_model(paths[0]).model;
    const auto b = persist::load_model(paths[1]).model;
    bool differs = false;
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
      const auto x = a.parameters()[i].tensor.values();
      const auto y = b.parameters()[i].tensor.values();
      differs |= std::memcmp(x.data(), y.data(), x.size() * sizeof(double)) != 0;
    }
    CHECK(differs);
  }
}

TEST_CASE("make_ensemble mode D") {
  const auto dir = testing::scratch_dir("ens_d");
  const auto c = ExperimentConfig::parse(
      tiny_config(dir, "ensemble.mode = D\nensemble.models = dnn\nensemble.partitions = 3\n"));
  const auto data = preprocess(c);
  std::vector<Partition> parts;
  for (std::size_t k = 0; k < 3; ++k) parts.push_back(ensemble_partition(c, data, k));
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(parts[i].val.size() == data.val.size());
    CHECK(parts[i].train.size() == data.train.size());
    for (std::size_t j = i + 1; j < 3; ++j) CHECK(parts[i].train != parts[j].train);
  }
  const auto paths = make_ensemble(c, data);
  CHECK(paths.size() == 3);
  // the test split is untouched by re-partitioning
  const auto again = preprocess(c);
  CHECK(again.test.size() == data.test.size());
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto x = data.test.categorical(i), y = again.test.categorical(i);
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }

  auto bad = c;
  bad.ensemble.partitions = 1;
  CHECK_THROWS_AS(make_ensemble(bad, data), StageError);
}

TEST_CASE("co-train through the harness") {
  const auto dir = testing::scratch_dir("run_cotrain");
  const auto rep = run(ExperimentConfig::parse(tiny_config(dir,
                                                           "student.model = dnn\n"
                                                           "distill.teachers = deepfm\n"
                                                           "distill.scheme = cotrain\n")));
  CHECK(rows_for(rep, "cotrain.deepfm") == 1);
  CHECK(rows_for(rep, "kd.dnn") == 1);
  CHECK(rows_for(rep, "student.dnn") == 1);
}
