#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "fedlwr/cka.hpp"
#include "fedlwr/config.hpp"
#include "fedlwr/errors.hpp"
#include "fedlwr/experiment.hpp"
#include "fedlwr/fedsim.hpp"
#include "fedlwr/metrics.hpp"

namespace py = pybind11;
using namespace fedlwr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_numpy(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape.begin(), t.shape.end()));
  std::copy(t.data.begin(), t.data.end(), out.mutable_data());
  return out;
}

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_numpy(const Matrix& m) {
  Array out({static_cast<py::ssize_t>(m.rows()), static_cast<py::ssize_t>(m.cols())});
  std::copy(m.values().begin(), m.values().end(), out.mutable_data());
  return out;
}

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return Matrix(rows, cols, std::vector<double>(a.data(), a.data() + a.size()));
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Layer-wise re-weighting federated learning simulator";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error);
  py::register_exception<NumericError>(m, "NumericError", error);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", error);
  py::register_exception<UnknownTopology>(m, "UnknownTopology", error);
  py::register_exception<ConfigError>(m, "ConfigError", error);
  auto format = py::register_exception<FormatError>(m, "FormatError", error);
  py::register_exception<TruncatedFileError>(m, "TruncatedFileError", format);
  py::register_exception<ShapeMismatchError>(m, "ShapeMismatchError", format);

  // --- similarity ----------------------------------------------------------
  m.def("gram", [](const Array& u) { return to_numpy(gram(to_matrix(u))); }, py::arg("features"));
  m.def("center_gram", [](const Array& k) { return to_numpy(center_gram(to_matrix(k))); }, py::arg("kernel"));
  m.def("hsic", [](const Array& k, const Array& l) { return hsic(to_matrix(k), to_matrix(l)); }, py::arg("k"),
        py::arg("l"));

  py::class_<SimilarityScore>(m, "SimilarityScore")
      .def_readonly("value", &SimilarityScore::value)
      .def_readonly("degenerate", &SimilarityScore::degenerate)
      .def_property_readonly("method", [](const SimilarityScore& s) { return std::string(to_string(s.method)); })
      .def("__float__", [](const SimilarityScore& s) { return s.value; })
      .def("__repr__", [](const SimilarityScore& s) {
        std::ostringstream out;
        out << "SimilarityScore(value=" << s.value << ", method=" << to_string(s.method)
            << ", degenerate=" << (s.degenerate ? "True" : "False") << ")";
        return out.str();
      });
  m.def("cka", [](const Array& u, const Array& v) { return cka(to_matrix(u), to_matrix(v)); }, py::arg("u"),
        py::arg("v"));
  m.def("cosine_mean", [](const Array& u, const Array& v) { return cosine_mean(to_matrix(u), to_matrix(v)); },
        py::arg("u"), py::arg("v"));

  // --- model ---------------------------------------------------------------
  py::class_<ModelParams>(m, "ModelParams")
      .def_readonly("topology_id", &ModelParams::topology_id)
      .def_property_readonly("layer_count", &ModelParams::layer_count)
      .def_property_readonly("parameter_count", &ModelParams::parameter_count)
      .def("weights", [](const ModelParams& p, int layer) { return to_numpy(p.layers.at(layer - 1).weights); },
           py::arg("layer"), "Weights of a 1-based layer")
      .def("biases", [](const ModelParams& p, int layer) { return to_numpy(p.layers.at(layer - 1).biases); },
           py::arg("layer"))
      .def("__eq__", [](const ModelParams& a, const ModelParams& b) { return a == b; });

  m.def("registered_topologies", &registered_topologies);
  m.def("build_model", &build_model, py::arg("topology_id") = "tinyseg4", py::arg("seed") = 0);
  m.def(
      "forward",
      [](const ModelParams& model, const Array& batch) {
        const auto trace = forward(model, to_tensor(batch));
        py::dict activations;
        for (const auto& [id, f] : trace.activations) activations[py::int_(id)] = to_numpy(f);
        return py::make_tuple(to_numpy(trace.logits), activations);
      },
      py::arg("model"), py::arg("batch"), "Returns (logits, {layer_id: activations}).");
  m.def(
      "dice_loss", [](const Array& logits, const Array& target, double smoothing) {
        return dice_loss(to_tensor(logits), to_tensor(target), smoothing);
      },
      py::arg("logits"), py::arg("target"), py::arg("smoothing") = kDiceSmoothing);
  m.def(
      "gradients",
      [](const ModelParams& model, const Array& batch, const Array& target) {
        const auto g = backward(model, forward(model, to_tensor(batch)), to_tensor(target));
        py::list out;
        for (const auto& layer : g.layers) out.append(py::make_tuple(to_numpy(layer.weights), to_numpy(layer.biases)));
        return out;
      },
      py::arg("model"), py::arg("batch"), py::arg("target"), "Per-layer (dW, db) of the Dice loss.");

  // --- aggregation ---------------------------------------------------------
  m.def(
      "convert_weights",
      [](const std::vector<std::vector<double>>& delta) {
        std::vector<SimilarityProfile> profiles;
        for (std::size_t k = 0; k < delta.size(); ++k) {
          profiles.push_back({static_cast<int>(k) + 1, delta[k], std::vector<bool>(delta[k].size(), false)});
        }
        const auto w = convert_weights(profiles);
        return py::make_tuple(w.rho, w.uniform_fallback);
      },
      py::arg("delta"), "delta[k][m] -> (rho[k][m], uniform_fallback[m])");

  // --- data ----------------------------------------------------------------
  py::class_<DomainSpec>(m, "DomainSpec")
      .def(py::init<>())
      .def_readwrite("gain", &DomainSpec::gain)
      .def_readwrite("bias", &DomainSpec::bias)
      .def_readwrite("noise_sigma", &DomainSpec::noise_sigma)
      .def_readwrite("blob_count_min", &DomainSpec::blob_count_min)
      .def_readwrite("blob_count_max", &DomainSpec::blob_count_max)
      .def_readwrite("blob_radius_min", &DomainSpec::blob_radius_min)
      .def_readwrite("blob_radius_max", &DomainSpec::blob_radius_max)
      .def_readwrite("texture_freq", &DomainSpec::texture_freq);

  py::class_<DatasetBundle>(m, "DatasetBundle")
      .def_readonly("height", &DatasetBundle::height)
      .def_readonly("width", &DatasetBundle::width)
      .def_readonly("domain", &DatasetBundle::domain)
      .def_readonly("train_index", &DatasetBundle::train_index)
      .def_readonly("val_index", &DatasetBundle::val_index)
      .def_readonly("test_index", &DatasetBundle::test_index)
      .def("__len__", [](const DatasetBundle& b) { return b.samples.size(); })
      .def("images", [](const DatasetBundle& b) { return to_numpy(stack_images(b.samples)); })
      .def("masks", [](const DatasetBundle& b) { return to_numpy(stack_masks(b.samples)); })
      .def("__eq__", [](const DatasetBundle& a, const DatasetBundle& b) { return a == b; });

  m.def("benchmark_domains", &benchmark_domains, py::arg("name") = "shift4");
  m.def(
      "generate_client_dataset",
      [](const DomainSpec& spec, std::size_t n, std::size_t height, std::size_t width, std::uint64_t seed) {
        return generate_client_dataset(spec, n, height, width, seed);
      },
      py::arg("spec"), py::arg("n"), py::arg("height") = 16, py::arg("width") = 16, py::arg("seed") = 0);
  m.def("save_dataset", &save_dataset, py::arg("bundle"), py::arg("path"));
  m.def("load_dataset", &load_dataset, py::arg("path"));

  // --- metrics -------------------------------------------------------------
  m.def(
      "dice_coefficient", [](const Array& a, const Array& b) { return dice_coefficient(to_tensor(a), to_tensor(b)); },
      py::arg("pred_mask"), py::arg("true_mask"));
  m.def("population_std", [](const std::vector<double>& v) { return population_std(v); }, py::arg("values"));
  m.def(
      "fairer_by_std", [](double a, double b) { return std::string(to_string(fairer_by_std(a, b))); }, py::arg("std_a"),
      py::arg("std_b"));

  // --- experiments ---------------------------------------------------------
  py::class_<ExperimentConfig>(m, "ExperimentConfig")
      .def(py::init<>())
      .def_property(
          "strategies",
          [](const ExperimentConfig& c) {
            std::vector<std::string> out;
            for (auto s : c.strategies) out.emplace_back(to_string(s));
            return out;
          },
          [](ExperimentConfig& c, const std::vector<std::string>& names) {
            c.strategies.clear();
            for (const auto& n : names) c.strategies.push_back(parse_strategy(n));
          })
      .def_readwrite("seeds", &ExperimentConfig::seeds)
      .def_readwrite("rounds", &ExperimentConfig::rounds)
      .def_readwrite("output_dir", &ExperimentConfig::output_dir)
      .def_readwrite("clients", &ExperimentConfig::clients)
      .def_readwrite("local_epochs", &ExperimentConfig::local_epochs)
      .def_readwrite("cka_sample_size", &ExperimentConfig::cka_sample_size)
      .def_readwrite("v2_layer", &ExperimentConfig::v2_layer)
      .def_readwrite("reset_optimizer_each_round", &ExperimentConfig::reset_optimizer_each_round)
      .def_readwrite("lr", &ExperimentConfig::lr)
      .def_readwrite("weight_decay", &ExperimentConfig::weight_decay)
      .def_readwrite("batch_size", &ExperimentConfig::batch_size)
      .def_readwrite("topology", &ExperimentConfig::topology)
      .def_readwrite("benchmark", &ExperimentConfig::benchmark)
      .def_readwrite("dataset_paths", &ExperimentConfig::dataset_paths)
      .def_readwrite("samples_per_client", &ExperimentConfig::samples_per_client)
      .def_readwrite("height", &ExperimentConfig::height)
      .def_readwrite("width", &ExperimentConfig::width)
      .def("__eq__", [](const ExperimentConfig& a, const ExperimentConfig& b) { return a == b; });

  m.def("parse_config", [](const std::string& text) { return parse_config(text); }, py::arg("yaml_text"));
  m.def("load_config", &load_config, py::arg("path"));
  m.def("render_config", &render_config, py::arg("config"));
  m.def("validate_config", &validate_config, py::arg("config"));
  m.def(
      "run_experiment",
      [](const ExperimentConfig& config, unsigned threads) {
        ExperimentOutputs out;
        {
          py::gil_scoped_release release;
          out = run_experiment(config, threads);
        }
        py::dict result;
        result["curves"] = out.curves;
        result["weights"] = out.weights;
        result["summary"] = out.summary;
        return result;
      },
      py::arg("config"), py::arg("threads") = 1,
      "Runs every (strategy, seed) pair and returns the written CSV paths.");

  py::class_<SummaryRow>(m, "SummaryRow")
      .def_readonly("strategy", &SummaryRow::strategy)
      .def_readonly("per_client", &SummaryRow::per_client)
      .def_readonly("avg", &SummaryRow::avg)
      .def_readonly("std", &SummaryRow::std);
  m.def("read_summary_csv", &read_summary_csv, py::arg("path"));
  m.def(
      "compare",
      [](const std::filesystem::path& summary, const std::string& a, const std::string& b) {
        const auto c = compare_strategies(read_summary_csv(summary), a, b);
        std::ostringstream text;
        print_comparison(c, text);
        const char* avg = c.average == AverageVerdict::a_higher   ? "a_higher"
                          : c.average == AverageVerdict::b_higher ? "b_higher"
                                                                  : "tie";
        py::dict out;
        out["fairness"] = std::string(to_string(c.fairness));
        out["average"] = avg;
        out["text"] = text.str();
        return out;
      },
      py::arg("summary"), py::arg("a"), py::arg("b"));
}
