#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>
#include <thread>

#include "arq/certify.hpp"
#include "arq/config.hpp"
#include "arq/cost.hpp"
#include "arq/dataset.hpp"
#include "arq/model_io.hpp"
#include "arq/quant.hpp"
#include "arq/search.hpp"
#include "arq/stats.hpp"
#include "arq/train.hpp"

namespace py = pybind11;
using namespace arq;

namespace {

using Array = py::array_t<Real, py::array::c_style | py::array::forcecast>;

config::RunConfig make_config(const py::dict& overrides) {
  config::RunConfig cfg;
  for (const auto& [k, v] : overrides) {
    const auto value = py::isinstance<py::bool_>(v) ? std::string(v.cast<bool>() ? "true" : "false")
                                                    : py::str(v).cast<std::string>();
    config::set_value(cfg, k.cast<std::string>(), value);
  }
  if (cfg.threads == 0) cfg.threads = std::max(1u, std::thread::hardware_concurrency());
  cfg.sync();
  return cfg;
}

py::array to_numpy(const data::Dataset& ds) {
  std::vector<py::ssize_t> shape{static_cast<py::ssize_t>(ds.size())};
  for (auto s : ds.sample_shape) shape.push_back(static_cast<py::ssize_t>(s));
  Array out(shape);
  std::copy(ds.values.begin(), ds.values.end(), out.mutable_data());
  return out;
}

std::span<const Real> as_input(const Array& x, const nn::Network& net) {
  if (static_cast<std::size_t>(x.size()) != net.input_size()) {
    throw ShapeError("expected " + std::to_string(net.input_size()) + " input values, got " +
                     std::to_string(x.size()));
  }
  return {x.data(), static_cast<std::size_t>(x.size())};
}

py::dict record_dict(const cert::CertificationRecord& r) {
  py::dict d;
  d["input_id"] = r.input_id;
  d["label"] = r.label;
  d["predicted"] = r.predicted;
  d["p_lower"] = r.p_lower;
  d["radius"] = r.radius;
  d["abstain"] = r.abstain;
  d["correct"] = r.correct;
  d["n"] = r.n_used;
  return d;
}

py::dict report_dict(const cert::ACRReport& rep) {
  py::dict d;
  d["acr"] = rep.acr;
  d["clean_accuracy"] = rep.clean_accuracy();
  d["certified_accuracy"] = rep.certified_accuracy;
  py::list records;
  for (const auto& r : rep.records) records.append(record_dict(r));
  d["records"] = records;
  return d;
}

quant::QuantPolicy uniform(const nn::Network& net, int bits, const config::RunConfig& cfg) {
  const auto& s = cfg.search;
  return quant::uniform_policy(net, bits, std::min(bits, s.bit_min), std::max(bits, s.bit_max), s.pin_ends);
}

}  // namespace

PYBIND11_MODULE(_arq, m) {
  m.doc() = "Mixed-precision quantization search that keeps certified robustness.";

  auto base = py::register_exception<Error>(m, "ArqError");
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<BudgetError>(m, "BudgetError", base);
  py::register_exception<FormatError>(m, "FormatError", base);

  m.def("norm_cdf", &stats::norm_cdf);
  m.def("inv_norm_cdf", &stats::inv_norm_cdf);
  m.def("binom_lower_bound", &stats::binom_lower_bound, py::arg("k"), py::arg("n"), py::arg("alpha"));
  m.def("binom_upper_bound", &stats::binom_upper_bound, py::arg("k"), py::arg("n"), py::arg("alpha"));
  m.def("action_to_bitwidth", &cost::action_to_bitwidth, py::arg("a"), py::arg("bit_min"), py::arg("bit_max"));
  m.def(
      "quantize", [](Real v, int bits, Real clip, bool symmetric) {
        return quant::quantize_value(v, bits, clip, symmetric ? quant::QuantMode::weight : quant::QuantMode::activation);
      },
      py::arg("value"), py::arg("bits"), py::arg("clip"), py::arg("symmetric") = true);

  py::class_<config::RunConfig>(m, "Config")
      .def(py::init(&make_config), py::arg("overrides") = py::dict())
      .def("get", [](const config::RunConfig& c, const std::string& k) { return config::get_value(c, k); })
      .def("set",
           [](config::RunConfig& c, const std::string& k, const std::string& v) {
             config::set_value(c, k, v);
             c.sync();
           })
      .def_static("keys",
                  [] {
                    std::vector<std::string> out;
                    for (const auto& k : config::known_keys()) out.push_back(k.key);
                    return out;
                  })
      .def("__str__", [](const config::RunConfig& c) {
        std::ostringstream os;
        config::write_config(os, c);
        return os.str();
      });

  py::class_<data::Dataset>(m, "Dataset")
      .def("__len__", &data::Dataset::size)
      .def_readonly("num_classes", &data::Dataset::num_classes)
      .def_readonly("sample_shape", &data::Dataset::sample_shape)
      .def_property_readonly("samples", &to_numpy)
      .def_property_readonly("labels",
                             [](const data::Dataset& d) { return py::array_t<std::uint32_t>(d.labels.size(), d.labels.data()); })
      .def("save", [](const data::Dataset& d, const std::filesystem::path& p) { data::save_dataset(d, p); });
  m.def("load_dataset", &data::load_dataset);

  py::class_<data::DatasetSplits>(m, "Splits")
      .def_readonly("train", &data::DatasetSplits::train)
      .def_readonly("cert", &data::DatasetSplits::cert)
      .def_readonly("eval", &data::DatasetSplits::eval);
  m.def("generate_data", [](const config::RunConfig& c) { return data::generate_synthetic(c.data); });

  py::class_<nn::Network>(m, "Network")
      .def_property_readonly("param_count", &nn::Network::param_count)
      .def_property_readonly("input_size", &nn::Network::input_size)
      .def_readonly("num_classes", &nn::Network::num_classes)
      .def("forward",
           [](const nn::Network& n, const Array& x) {
             const auto t = nn::forward(n, as_input(x, n));
             return Array(static_cast<py::ssize_t>(t.numel()), t.values.data());
           })
      .def("predict", [](const nn::Network& n, const Array& x) { return nn::predict(n, as_input(x, n)); })
      .def("save", [](const nn::Network& n, const std::filesystem::path& p) { io::save_model(n, p); })
      .def("__eq__", [](const nn::Network& a, const nn::Network& b) { return a == b; });
  m.def("load_model", &io::load_model);
  m.def(
      "init_model",
      [](const config::RunConfig& c) {
        return nn::make_tiny_convnet(c.model, substream_seed(c.seed, 0, StreamPhase::init));
      },
      "Untrained TinyConvNet as configured.");
  m.def(
      "train",
      [](const config::RunConfig& c, const data::Dataset& train) {
        py::gil_scoped_release release;
        auto net = nn::make_tiny_convnet(c.model, substream_seed(c.seed, 0, StreamPhase::init));
        return nn::train_gaussian(std::move(net), train, c.train);
      },
      py::arg("config"), py::arg("train"), "Train a TinyConvNet with Gaussian noise augmentation.");

  py::class_<quant::QuantPolicy>(m, "Policy")
      .def_readonly("bit_min", &quant::QuantPolicy::bit_min)
      .def_readonly("bit_max", &quant::QuantPolicy::bit_max)
      .def_readonly("pin_ends", &quant::QuantPolicy::pin_ends)
      .def_property_readonly("entries",
                             [](const quant::QuantPolicy& p) {
                               std::vector<std::tuple<std::size_t, int, int>> out;
                               for (const auto& e : p.entries) out.emplace_back(e.layer, e.weight_bits, e.act_bits);
                               return out;
                             })
      .def("__str__", &quant::policy_string)
      .def("__eq__", [](const quant::QuantPolicy& a, const quant::QuantPolicy& b) { return a == b; })
      .def("save", [](const quant::QuantPolicy& p, const std::filesystem::path& f) { quant::save_policy(p, f); });
  m.def("load_policy", &quant::load_policy);
  m.def("uniform_policy", &uniform, py::arg("network"), py::arg("bits"), py::arg("config"));
  m.def(
      "bitops",
      [](const nn::Network& n, const quant::QuantPolicy& p) { return cost::policy_cost(n, p).total_bops; },
      py::arg("network"), py::arg("policy"));

  m.def(
      "certify",
      [](const nn::Network& net, const data::Dataset& inputs, const config::RunConfig& c) {
        const auto& s = c.search;
        cert::Certification out;
        {
          py::gil_scoped_release release;
          out = cert::certify_dataset(cert::NetworkClassifier(net), inputs, {s.sigma, s.n0, 0, s.alpha, s.seed, s.threads});
        }
        return report_dict(out.report);
      },
      py::arg("network"), py::arg("inputs"), py::arg("config"),
      "Randomized-smoothing certification of every input.");

  m.def(
      "search",
      [](const nn::Network& net, const data::DatasetSplits& splits, const config::RunConfig& c) {
        auto s = c.search;
        if (s.budget == 0) s.budget = search::uniform_budget(net, c.budget_bits, s);
        search::SearchResult r;
        {
          py::gil_scoped_release release;
          r = search::run_search(net, splits, s);
        }
        py::dict d;
        d["budget"] = r.budget;
        d["original_acr"] = r.original.acr;
        d["best_reward"] = r.best_reward;
        d["best_policy"] = r.best_policy ? py::cast(*r.best_policy) : py::none();
        py::list history;
        for (const auto& h : r.history) {
          py::dict e;
          e["episode"] = h.episode;
          e["reward"] = h.reward;
          e["acr_p"] = h.acr_p;
          e["bops"] = h.bops;
          e["size_bits"] = h.size_bits;
          e["policy"] = quant::policy_string(h.policy);
          history.append(e);
        }
        d["history"] = history;
        return d;
      },
      py::arg("network"), py::arg("splits"), py::arg("config"),
      "Search a mixed-precision policy under the configured BitOPs budget.");

  m.def(
      "evaluate",
      [](const nn::Network& net, const quant::QuantPolicy& policy, const data::Dataset& train,
         const data::Dataset& inputs, const config::RunConfig& c) {
        search::PolicyEvaluation ev;
        {
          py::gil_scoped_release release;
          ev = search::evaluate_policy(net, policy, train, inputs, c.search);
        }
        auto d = report_dict(ev.report);
        d["bops"] = ev.cost.total_bops;
        d["size_bits"] = ev.cost.total_size_bits;
        return d;
      },
      py::arg("network"), py::arg("policy"), py::arg("train"), py::arg("inputs"), py::arg("config"),
      "Fine-tune the quantized network and certify it from scratch.");
}
