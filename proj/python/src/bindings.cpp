// Copyright 2026 The fedshield Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "fedshield/data/dataset.hpp"
#include "fedshield/errors.hpp"
#include "fedshield/experiment/config.hpp"
#include "fedshield/experiment/runner.hpp"
#include "fedshield/io/npz.hpp"
#include "fedshield/metrics/metrics.hpp"
#include "fedshield/objectives/losses.hpp"

namespace py = pybind11;
using namespace fedshield;
using nlohmann::json;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

experiment::Overrides make_overrides(const std::optional<std::string>& profile,
                                     std::optional<std::uint64_t> seed,
                                     std::optional<std::string> out,
                                     std::optional<int> threads) {
  experiment::Overrides o;
  if (profile) o.profile = experiment::parse_profile(*profile);
  o.seed = seed;
  o.output_dir = std::move(out);
  o.threads = threads;
  return o;
}

py::dict summary_dict(const experiment::RunSummary& s) {
  py::dict d;
  d["dir"] = s.dir;
  d["row"] = s.row;
  d["client_acc"] = s.client_accuracy;
  d["f1"] = s.f1;
  d["recon_psnr_db"] = s.recon_psnr_db;
  d["recon_mse_norm"] = s.recon_mse_norm;
  d["recon_mse_px"] = s.recon_mse_px;
  d["probe_acc"] = s.probe_accuracy;
  d["attacked"] = s.attacked;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Native core of fedshield";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<IngestError>(m, "IngestError", base.ptr());
  py::register_exception<ConstructionError>(m, "ConstructionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  // Config documents cross the boundary as JSON text.
  m.def("default_config", [](const std::string& profile, const std::string& dataset,
                             const std::string& defense) {
    return experiment::default_config(experiment::parse_profile(profile), dataset, defense).dump();
  }, py::arg("profile"), py::arg("dataset"), py::arg("defense"));
  m.def("resolve_config", [](const std::string& user, std::optional<std::string> profile,
                             std::optional<std::uint64_t> seed, std::optional<std::string> out,
                             std::optional<int> threads) {
    return experiment::resolve_config(json::parse(user),
                                      make_overrides(profile, seed, std::move(out), threads))
        .dump();
  }, py::arg("user"), py::arg("profile") = py::none(), py::arg("seed") = py::none(),
        py::arg("out") = py::none(), py::arg("threads") = py::none());
  m.def("metrics_columns", &experiment::metrics_columns);

  m.def("pretrain", [](const std::string& resolved) {
    py::gil_scoped_release release;
    return experiment::cmd_pretrain(json::parse(resolved));
  }, py::arg("resolved"));
  m.def("run", [](const std::string& resolved) {
    experiment::RunSummary s;
    {
      py::gil_scoped_release release;
      s = experiment::cmd_run(json::parse(resolved));
    }
    return summary_dict(s);
  }, py::arg("resolved"));
  m.def("sweep", [](const std::string& resolved) {
    experiment::SweepSummary s;
    {
      py::gil_scoped_release release;
      s = experiment::cmd_sweep(json::parse(resolved));
    }
    py::dict d;
    d["csv"] = s.csv;
    d["failures"] = s.failures;
    return d;
  }, py::arg("resolved"));
  m.def("plot", &experiment::cmd_plot, py::arg("csvs"), py::arg("out"));

  m.def("mse", [](py::array_t<double> x, py::array_t<double> y) {
    return metrics::mse(to_tensor(x), to_tensor(y));
  });
  m.def("psnr", [](py::array_t<double> x, py::array_t<double> y, double max_val) {
    return metrics::psnr(to_tensor(x), to_tensor(y), max_val);
  }, py::arg("x"), py::arg("y"), py::arg("max_val"));
  m.def("accuracy", &metrics::accuracy, py::arg("predictions"), py::arg("labels"));
  m.def("f1_macro", &metrics::f1_macro, py::arg("predictions"), py::arg("labels"));

  m.def("pearson", [](const std::vector<double>& x, const std::vector<double>& y) {
    return objectives::pearson_r(x, y).r;
  });
  m.def("hsic", [](py::array_t<double> a, py::array_t<double> b) {
    return objectives::hsic(to_tensor(a), to_tensor(b)).value;
  });
  m.def("total_variation", [](py::array_t<double> images) {
    return objectives::total_variation(to_tensor(images)).loss.value;
  });

  m.def("make_synthetic", [](std::int64_t n, std::int64_t channels, std::int64_t height,
                             std::int64_t width, int num_classes, std::uint64_t seed) {
    const auto split = data::make_synthetic({n, channels, height, width, num_classes, seed});
    return py::make_tuple(to_array(split.images), split.labels);
  }, py::arg("n"), py::arg("channels") = 3, py::arg("height") = 16, py::arg("width") = 16,
        py::arg("num_classes") = 2, py::arg("seed") = 0);
  m.def("write_synthetic_bloodmnist", &data::write_synthetic_bloodmnist, py::arg("path"),
        py::arg("n_train"), py::arg("n_val"), py::arg("n_test"), py::arg("seed"),
        py::arg("side") = 28);

  // Members as (dtype, shape, raw bytes); the package wraps them in numpy arrays.
  m.def("read_npz", [](const std::filesystem::path& path) {
    py::dict d;
    for (const auto& [key, arr] : io::read_npz(path)) {
      d[py::str(key)] = py::make_tuple(
          arr.descr, arr.shape,
          py::bytes(reinterpret_cast<const char*>(arr.bytes.data()), arr.bytes.size()));
    }
    return d;
  }, py::arg("path"));
}
