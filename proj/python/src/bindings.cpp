#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <spdlog/spdlog.h>

#include "cfhar/harness.hpp"
#include "cfhar/metrics.hpp"

namespace py = pybind11;
using namespace cfhar;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using I32 = py::array_t<int, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Sample sample_from(const F64& x, const I32& meta, const U8& valid) {
  if (x.ndim() != 2) throw InputError("waveforms must have shape [channels, length]");
  const auto c = static_cast<std::size_t>(x.shape(0)), l = static_cast<std::size_t>(x.shape(1));
  if (meta.ndim() != 2 || static_cast<std::size_t>(meta.shape(0)) != c || meta.shape(1) != 4) {
    throw InputError("metadata must have shape [channels, 4]");
  }
  if (valid.ndim() != 1 || static_cast<std::size_t>(valid.shape(0)) != c) throw InputError("mask must have shape [channels]");
  Sample s(c, l);
  std::copy_n(x.data(), c * l, s.data.data());
  for (std::size_t k = 0; k < c; ++k) {
    const int* m = meta.data() + 4 * k;
    s.meta[k] = {m[0], m[1], m[2], m[3]};
    s.valid[k] = valid.data()[k] ? 1 : 0;
  }
  return s;
}

py::tuple sample_to(const Sample& s) {
  F64 x({s.channels, s.length});
  std::copy(s.data.begin(), s.data.end(), x.mutable_data());
  I32 meta({s.channels, std::size_t{4}});
  U8 valid(std::vector<py::ssize_t>{static_cast<py::ssize_t>(s.channels)});
  for (std::size_t k = 0; k < s.channels; ++k) {
    const auto ids = s.meta[k].ids();
    std::copy(ids.begin(), ids.end(), meta.mutable_data() + 4 * k);
    valid.mutable_data()[k] = s.valid[k];
  }
  return py::make_tuple(x, meta, valid);
}

// Batches of equal-shaped samples: x[b, C, L], meta[b, C, 4], valid[b, C].
Dataset batch_from(const F64& x, const I32& meta, const U8& valid) {
  if (x.ndim() != 3 || meta.ndim() != 3 || valid.ndim() != 2) {
    throw InputError("expected x[b, C, L], meta[b, C, 4] and valid[b, C]");
  }
  const auto b = static_cast<std::size_t>(x.shape(0)), c = static_cast<std::size_t>(x.shape(1)),
             l = static_cast<std::size_t>(x.shape(2));
  if (static_cast<std::size_t>(meta.shape(0)) != b || static_cast<std::size_t>(meta.shape(1)) != c ||
      meta.shape(2) != 4 || static_cast<std::size_t>(valid.shape(0)) != b ||
      static_cast<std::size_t>(valid.shape(1)) != c) {
    throw InputError("x, meta and valid disagree on batch size or channel count");
  }
  Dataset out;
  for (std::size_t i = 0; i < b; ++i) {
    Sample s(c, l);
    std::copy_n(x.data() + i * c * l, c * l, s.data.data());
    for (std::size_t k = 0; k < c; ++k) {
      const int* m = meta.data() + 4 * (i * c + k);
      s.meta[k] = {m[0], m[1], m[2], m[3]};
      s.valid[k] = valid.data()[i * c + k] ? 1 : 0;
    }
    out.push_back(std::move(s));
  }
  return out;
}

F64 tensor_to(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  F64 out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

/// A double-precision model for direct forward passes.
struct PyModel {
  std::unique_ptr<HarModel<double>> model;
  MetaVocab vocab;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Channel-free human activity recognition core";
  spdlog::set_level(spdlog::level::warn);

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<InputError>(m, "InputError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("build_id", &build_id);
  m.def("set_log_level", [](const std::string& level) { spdlog::set_level(spdlog::level::from_str(level)); });

  py::class_<ExperimentConfig>(m, "Config")
      .def(py::init<>())
      .def_static("parse", &ExperimentConfig::parse, py::arg("text"))
      .def_static("load", &ExperimentConfig::load, py::arg("path"))
      .def("set", &ExperimentConfig::set, py::arg("key"), py::arg("value"))
      .def("to_text", &ExperimentConfig::to_text)
      .def("hash", &ExperimentConfig::hash_hex)
      .def("validate", &ExperimentConfig::validate)
      .def_readwrite("run_id", &ExperimentConfig::run_id)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir);

  py::class_<MetaVocab>(m, "Vocab")
      .def(py::init<>())
      .def("names", [](const MetaVocab& v, int field) { return v.names(static_cast<MetaField>(field)); })
      .def("intern",
           [](MetaVocab& v, int field, const std::string& name) { return v.intern(static_cast<MetaField>(field), name); })
      .def("lookup",
           [](const MetaVocab& v, int field, const std::string& name) { return v.lookup(static_cast<MetaField>(field), name); });

  py::class_<PreparedData>(m, "Data")
      .def("__len__", [](const PreparedData& d) { return d.samples.size(); })
      .def("__getitem__",
           [](const PreparedData& d, std::size_t i) {
             if (i >= d.samples.size()) throw py::index_error();
             const Sample& s = d.samples[i];
             auto t = sample_to(s);
             return py::make_tuple(t[0], t[1], t[2], s.label, s.subject);
           })
      .def_readonly("vocab", &PreparedData::vocab)
      .def_readonly("num_classes", &PreparedData::num_classes)
      .def_readonly("min_channels", &PreparedData::min_channels)
      .def_readonly("max_channels", &PreparedData::max_channels);

  m.def("prepare_data", [](const ExperimentConfig& cfg) { return prepare_data(cfg); }, py::arg("config"),
        "Synthesize or load the configured dataset as windows.");

  m.def(
      "perturb",
      [](const F64& x, const I32& meta, const U8& valid, const std::string& kind, double intensity, std::uint64_t seed,
         std::optional<double> second) {
        return sample_to(perturb(sample_from(x, meta, valid), {parse_perturb_kind(kind), intensity, second, seed}));
      },
      py::arg("x"), py::arg("meta"), py::arg("valid"), py::arg("kind"), py::arg("intensity"), py::arg("seed") = 0,
      py::arg("second_intensity") = py::none(),
      "Apply one test-time perturbation to a window; returns (x, meta, valid).");

  m.def(
      "macro_f1",
      [](const std::vector<int>& truth, const std::vector<int>& pred, std::size_t classes) {
        ConfusionMatrix cm(classes);
        cm.add(truth, pred);
        return py::make_tuple(cm.accuracy(), cm.macro_f1());
      },
      py::arg("truth"), py::arg("pred"), py::arg("classes"), "Returns (accuracy, macro_f1).");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const ExperimentConfig& cfg, const PreparedData& data, std::uint64_t seed) {
             return PyModel{make_model<double>(resolve_model_config(cfg, data, seed, 0), data.vocab), data.vocab};
           }),
           py::arg("config"), py::arg("data"), py::arg("seed") = 0)
      .def(
          "forward",
          [](PyModel& pm, const F64& x, const I32& meta, const U8& valid, bool train) {
            const Dataset batch = batch_from(x, meta, valid);
            NoGradGuard guard;
            auto out = pm.model->forward(make_batch<double>(std::span<const Sample>(batch)),
                                         train ? Mode::kTrain : Mode::kEval);
            return tensor_to(out.y_fused.value());
          },
          py::arg("x"), py::arg("meta"), py::arg("valid"), py::arg("train") = false,
          "Fused logits [b, classes]; train=True uses batch statistics and updates running ones.")
      .def("parameter_count", [](PyModel& pm) { return pm.model->parameter_count(); })
      .def(
          "macs",
          [](PyModel& pm, std::size_t channels, std::size_t length) {
            const auto b = pm.model->macs(channels, length);
            py::dict d;
            d["mixing"] = b.mixing;
            d["backbone"] = b.backbone;
            d["metadata"] = b.metadata;
            d["heads"] = b.heads;
            d["total"] = b.total();
            return d;
          },
          py::arg("channels"), py::arg("length") = kWindowLength);

  m.def(
      "train",
      [](const ExperimentConfig& cfg, const std::string& checkpoint_dir) {
        py::gil_scoped_release release;
        const auto data = prepare_data(cfg);
        return report_to_json(train_run(cfg, data, checkpoint_dir).report);
      },
      py::arg("config"), py::arg("checkpoint_dir") = "", "LOSO training and evaluation; returns the report as JSON.");

  m.def(
      "sweep",
      [](const ExperimentConfig& cfg, const std::vector<std::string>& kinds, std::vector<double> grid) {
        py::gil_scoped_release release;
        std::vector<PerturbKind> ks;
        for (const auto& k : kinds) ks.push_back(parse_perturb_kind(k));
        if (grid.empty()) grid = default_intensity_grid();
        const auto data = prepare_data(cfg);
        auto outcome = train_run(cfg, data);
        outcome.report.command = "sweep";
        outcome.report.curves = sweep_intensity(outcome.folds, data.vocab, ks, grid, cfg);
        return report_to_json(outcome.report);
      },
      py::arg("config"), py::arg("kinds"), py::arg("grid") = std::vector<double>{},
      "Train, then evaluate accuracy against perturbation intensity; returns the report as JSON.");

  m.def(
      "bench",
      [](const ExperimentConfig& cfg, std::vector<std::size_t> channels, std::vector<std::size_t> batches, bool timed) {
        py::gil_scoped_release release;
        BenchOptions opts;
        opts.channels = std::move(channels);
        opts.batches = std::move(batches);
        opts.timed = timed;
        opts.length = cfg.synth.length;
        return efficiency_to_json(efficiency_bench(cfg, opts));
      },
      py::arg("config"), py::arg("channels") = std::vector<std::size_t>{1, 3, 6, 12, 24, 40},
      py::arg("batches") = std::vector<std::size_t>{1, 32}, py::arg("timed") = true,
      "Parameter, MAC and latency benchmark; returns the report as JSON.");
}
