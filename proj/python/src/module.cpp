#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "rla/analysis.hpp"
#include "rla/error.hpp"
#include "rla/timeseries.hpp"
#include "rla/verify.hpp"

namespace py = pybind11;
using namespace rla;

namespace {

using Settings = std::map<std::string, std::string>;

ModelSpec spec_from(const Settings& settings) {
  Config cfg;
  for (const auto& [k, v] : settings) cfg.set(k, v);
  cfg.reject_unknown(ModelSpec::config_keys());
  return ModelSpec::from_config(cfg);
}

py::dict stats_dict(const ModelStats& s) {
  py::list layers;
  for (const auto& l : s.layers) {
    py::dict d;
    d["name"] = l.name;
    d["kind"] = l.kind;
    d["params"] = l.params;
    d["macs"] = l.macs;
    d["elementwise"] = l.elementwise;
    layers.append(d);
  }
  py::dict out;
  out["total_params"] = s.total_params;
  out["total_macs"] = s.total_macs;
  out["total_elementwise"] = s.total_elementwise;
  out["resolution"] = s.resolution;
  out["layers"] = layers;
  return out;
}

py::array_t<float> forward(const Settings& settings, const py::array_t<float, py::array::c_style | py::array::forcecast>& images) {
  if (images.ndim() != 4) throw ShapeError("images must be a 4-d (N, 3, R, R) array");
  const Model<float> model(spec_from(settings));
  const Shape shape{images.shape(0), images.shape(1), images.shape(2), images.shape(3)};
  std::vector<float> data(images.data(), images.data() + images.size());
  Tensor<float> logits;
  {
    py::gil_scoped_release release;
    Graph<float> g(GraphMode::eval, const_cast<ParamStore<float>*>(&model.params()));
    logits = g.value(model.forward(g, g.input(Tensor<float>(shape, std::move(data)))));
  }
  py::array_t<float> out({logits.shape().n, logits.shape().c});
  std::copy(logits.data().begin(), logits.data().end(), out.mutable_data());
  return out;
}

}  // namespace

PYBIND11_MODULE(_rla, m) {
  m.doc() = "Recurrent layer aggregation: models, accounting, verification suites";

  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const rla::ValueError& e) {
      PyErr_SetString(PyExc_ValueError, e.what());
    } catch (const rla::IoError& e) {
      PyErr_SetString(PyExc_OSError, e.what());
    } catch (const rla::Error& e) {
      PyErr_SetString(PyExc_RuntimeError, e.what());
    }
  });

  m.def("model_names", [] {
    return std::vector<std::string>{"resnet110",      "rla-resnet110",       "resnet164",
                                    "rla-resnet164",  "densenet-bc100",      "shared-lag-densenet",
                                    "shared-ordinal-densenet", "resnet50", "rla-resnet50"};
  });
  m.def(
      "count_parameters", [](const Settings& s) { return stats_dict(count_parameters(Model<float>(spec_from(s)))); },
      py::arg("config"));
  m.def(
      "count_macs",
      [](const Settings& s, std::int64_t resolution) {
        return stats_dict(count_macs(Model<float>(spec_from(s)), resolution));
      },
      py::arg("config"), py::arg("resolution"));
  m.def(
      "golden_target",
      [](const Settings& s) -> std::optional<std::pair<double, double>> {
        const auto t = golden_target(spec_from(s));
        if (!t) return std::nullopt;
        return std::make_pair(t->millions, t->tolerance);
      },
      py::arg("config"), "(millions, tolerance) of the published total, or None");
  m.def(
      "shared_norms",
      [](const Settings& s) {
        std::vector<std::vector<double>> out;
        for (const auto& stage : extract_shared_norms(Model<float>(spec_from(s)))) {
          std::vector<double> row;
          for (const auto& e : stage.entries) row.push_back(e.l1);
          out.push_back(row);
        }
        return out;
      },
      py::arg("config"));
  m.def("forward", &forward, py::arg("config"), py::arg("images"),
        "Eval-mode logits (N, classes) of a freshly initialized model");

  m.def(
      "fit_exponential",
      [](const std::vector<double>& series) {
        const DecayFit f = fit_exponential(series);
        return py::make_tuple(f.a, f.b, f.r_squared);
      },
      py::arg("series"), "(a, b, r_squared) of y = a exp(-b l), l = 1..n");

  m.def(
      "arma_ar_coefficients",
      [](double beta, double gamma, int max_lag) { return arma_ar_coefficients({beta, gamma}, max_lag); },
      py::arg("beta"), py::arg("gamma"), py::arg("max_lag"));
  m.def(
      "arma_impulse_response",
      [](double beta, double gamma, int horizon) { return arma_impulse_response({beta, gamma}, horizon); },
      py::arg("beta"), py::arg("gamma"), py::arg("horizon"));
  m.def(
      "recurrence_expand",
      [](double alpha, double gamma, double beta1, double beta2, int T) {
        return recurrence_expand({alpha, gamma, beta1, beta2}, T);
      },
      py::arg("alpha"), py::arg("gamma"), py::arg("beta1"), py::arg("beta2"), py::arg("T"));
  m.def(
      "recurrence_closed_form",
      [](double alpha, double gamma, double beta1, double beta2, int T) {
        return recurrence_closed_form({alpha, gamma, beta1, beta2}, T);
      },
      py::arg("alpha"), py::arg("gamma"), py::arg("beta1"), py::arg("beta2"), py::arg("T"));

  m.def(
      "run_suite",
      [](const std::string& name, const Settings& s) {
        verify::Report r;
        {
          const Model<double> model(spec_from(s));
          py::gil_scoped_release release;
          r = verify::run_suite(name, model);
        }
        return py::make_tuple(r.passed(), r.text());
      },
      py::arg("name"), py::arg("config") = Settings{}, "(passed, report text)");
}
