#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "ctrkd/config.hpp"
#include "ctrkd/distill.hpp"
#include "ctrkd/experiment.hpp"
#include "ctrkd/persist.hpp"
#include "ctrkd/report.hpp"
#include "ctrkd/synthetic.hpp"
#include "ctrkd/train.hpp"

namespace py = pybind11;
using namespace ctrkd;

namespace {

struct Splits {
  features::EncodedDataset train, val, test;
};

Splits synthetic_splits(const features::SyntheticSpec& spec, double train, double val, double test) {
  const auto all = features::make_synthetic(spec).data;
  features::SplitStrategy s;
  s.train = train;
  s.val = val;
  s.test = test;
  s.seed = spec.seed;
  const auto idx = features::split(all.size(), s);
  return {all.subset(idx.train), all.subset(idx.val), all.subset(idx.test)};
}

train::TrainHyper hyper(double lr, std::size_t batch_size, std::size_t max_epochs, std::size_t patience,
                        double l2, std::uint64_t seed) {
  train::TrainHyper h;
  h.lr = lr;
  h.batch_size = batch_size;
  h.max_epochs = max_epochs;
  h.patience = patience;
  h.l2 = l2;
  h.seed = seed;
  return h;
}

std::vector<const models::Model*> pointers(const std::vector<models::Model*>& teachers) {
  return {teachers.begin(), teachers.end()};
}

}  // namespace

PYBIND11_MODULE(_ctrkd, m) {
  m.doc() = "CTR models with knowledge distillation from teacher ensembles";

  py::register_exception<experiment::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<train::TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<persist::CheckpointError>(m, "CheckpointError", PyExc_RuntimeError);

  py::class_<features::SyntheticSpec>(m, "SyntheticSpec")
      .def(py::init<>())
      .def_readwrite("samples", &features::SyntheticSpec::samples)
      .def_readwrite("fields", &features::SyntheticSpec::fields)
      .def_readwrite("vocab_per_field", &features::SyntheticSpec::vocab_per_field)
      .def_readwrite("numeric_fields", &features::SyntheticSpec::numeric_fields)
      .def_readwrite("latent_dim", &features::SyntheticSpec::latent_dim)
      .def_readwrite("seed", &features::SyntheticSpec::seed);

  py::class_<features::EncodedDataset>(m, "Dataset")
      .def("__len__", &features::EncodedDataset::size)
      .def_property_readonly("field_sizes",
                             [](const features::EncodedDataset& d) { return d.layout().field_sizes; })
      .def_property_readonly("num_numeric",
                             [](const features::EncodedDataset& d) { return d.layout().num_numeric; })
      .def("labels", [](const features::EncodedDataset& d) {
        std::vector<double> y(d.size());
        for (std::size_t i = 0; i < y.size(); ++i) y[i] = d.label(i);
        return y;
      });

  py::class_<Splits>(m, "Splits")
      .def_readonly("train", &Splits::train)
      .def_readonly("val", &Splits::val)
      .def_readonly("test", &Splits::test);

  m.def("synthetic_splits", &synthetic_splits, py::arg("spec"), py::arg("train") = 0.8,
        py::arg("val") = 0.1, py::arg("test") = 0.1,
        "Generate synthetic click data and split it randomly.");

  py::class_<models::Model>(m, "Model")
      .def(py::init([](const std::string& spec, const features::EncodedDataset& like, std::uint64_t seed) {
             return models::Model(models::ModelSpec::parse(spec), like.layout(), seed);
           }),
           py::arg("spec"), py::arg("like"), py::arg("seed") = 1)
      .def_property_readonly("spec", [](const models::Model& mdl) { return mdl.spec().to_string(); })
      .def("parameter_count",
           [](const models::Model& mdl) {
             std::size_t n = 0;
             for (const auto& p : mdl.parameters()) n += p.tensor.values().size();
             return n;
           })
      .def("predict",
           [](const models::Model& mdl, const features::EncodedDataset& d) {
             return train::predict_probs(mdl, d);
           })
      .def("logits", [](const models::Model& mdl, const features::EncodedDataset& d) {
        return train::predict_logits(mdl, d);
      });

  m.def("preset_spec",
        [](const std::string& name, std::vector<std::size_t> hidden, std::size_t dim) {
          return models::ModelSpec::preset(name, std::move(hidden), dim).to_string();
        },
        py::arg("name"), py::arg("hidden") = std::vector<std::size_t>{64, 64},
        py::arg("embedding_dim") = 8);

  py::class_<train::Metrics>(m, "Metrics")
      .def_readonly("auc", &train::Metrics::auc)
      .def_readonly("logloss", &train::Metrics::logloss)
      .def("__repr__", [](const train::Metrics& x) {
        return "Metrics(auc=" + std::to_string(x.auc) + ", logloss=" + std::to_string(x.logloss) + ")";
      });

  m.def("auc", [](const std::vector<double>& s, const std::vector<double>& y) { return train::auc(s, y); });
  m.def("evaluate", [](const models::Model& mdl, const features::EncodedDataset& d) {
    return train::evaluate(mdl, d);
  });
  m.def("soft_label_loss", py::overload_cast<double, double, double>(&distill::soft_label_loss),
        py::arg("teacher_logit"), py::arg("student_logit"), py::arg("tau") = 1.0);

  m.def(
      "train_teacher",
      [](const std::string& spec, const Splits& d, double lr, std::size_t batch_size,
         std::size_t max_epochs, std::size_t patience, double l2, std::uint64_t seed) {
        py::gil_scoped_release release;
        return train::train_teacher(models::ModelSpec::parse(spec), {&d.train, &d.val},
                                    hyper(lr, batch_size, max_epochs, patience, l2, seed))
            .model;
      },
      py::arg("spec"), py::arg("data"), py::arg("lr") = 1e-3, py::arg("batch_size") = 256,
      py::arg("max_epochs") = 100, py::arg("patience") = 3, py::arg("l2") = 0.0, py::arg("seed") = 1);

  m.def(
      "train_student",
      [](const std::string& spec, const std::vector<models::Model*>& teachers, const Splits& d,
         double tau, double beta, bool gating, double lr, std::size_t batch_size,
         std::size_t max_epochs, std::uint64_t seed) {
        distill::DistillConfig cfg;
        cfg.tau = tau;
        cfg.beta = beta;
        cfg.gamma = 1.0 - beta;
        cfg.gating = gating;
        const auto ts = pointers(teachers);
        py::gil_scoped_release release;
        return train::train_student_pretrain(models::ModelSpec::parse(spec), ts, cfg,
                                             {&d.train, &d.val},
                                             hyper(lr, batch_size, max_epochs, 3, 0.0, seed))
            .student;
      },
      py::arg("spec"), py::arg("teachers"), py::arg("data"), py::arg("tau") = 1.0,
      py::arg("beta") = 0.5, py::arg("gating") = false, py::arg("lr") = 1e-3,
      py::arg("batch_size") = 256, py::arg("max_epochs") = 100, py::arg("seed") = 1,
      "Soft-label distillation from fixed teachers, stopped on the distillation loss.");

  m.def("save_model",
        [](const models::Model& mdl, const std::filesystem::path& path, std::uint64_t seed) {
          persist::save_model(mdl, path, {seed, 0, std::nullopt});
        },
        py::arg("model"), py::arg("path"), py::arg("seed") = 0);
  m.def("load_model", [](const std::filesystem::path& path) { return persist::load_model(path).model; });

  m.def(
      "run_config",
      [](const std::string& text, const std::vector<std::string>& overrides) {
        const auto config = experiment::ExperimentConfig::parse(text, overrides);
        py::gil_scoped_release release;
        return experiment::report_text(experiment::run(config));
      },
      py::arg("text"), py::arg("overrides") = std::vector<std::string>{},
      "Run every stage of a config given as text; returns the report table.");
  m.def("recipe", &experiment::recipe);
}
