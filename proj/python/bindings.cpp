#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "xcnn/commands.hpp"
#include "xcnn/dataset.hpp"
#include "xcnn/layers.hpp"
#include "xcnn/loss.hpp"
#include "xcnn/metrics.hpp"
#include "xcnn/ops.hpp"
#include "xcnn/shap.hpp"

namespace py = pybind11;
using xcnn::Tensord;

namespace {

Tensord from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                   bool requires_grad) {
  xcnn::Shape shape(a.shape(), a.shape() + a.ndim());
  if (shape.empty()) shape = {1};
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensord(std::move(shape), std::move(data), requires_grad);
}

py::array_t<double> to_array(const xcnn::Shape& shape, std::span<const double> values) {
  std::vector<py::ssize_t> dims(shape.begin(), shape.end());
  py::array_t<double> out(dims);
  std::copy(values.begin(), values.end(), out.mutable_data());
  return out;
}

py::dict audit_dict(const xcnn::ParameterAudit& a) {
  py::list layers;
  for (const auto& l : a.per_layer) {
    py::dict d;
    d["layer"] = l.layer;
    d["kind"] = std::string(xcnn::layer_kind_name(l.kind));
    d["count"] = l.count;
    d["trainable"] = l.trainable;
    layers.append(d);
  }
  py::dict d;
  d["all"] = a.all;
  d["trainable"] = a.trainable;
  d["conv_linear"] = a.conv_linear;
  d["batchnorm_affine"] = a.batchnorm_affine;
  d["per_layer"] = layers;
  return d;
}

int run_command(const std::string& name, const xcnn::CommandOptions& o) {
  std::ostringstream log, err;
  int code = xcnn::exit_code::kFailure;
  if (name == "train") {
    code = xcnn::cmd_train(o, log, err);
  } else if (name == "evaluate") {
    code = xcnn::cmd_evaluate(o, log, err);
  } else if (name == "explain") {
    code = xcnn::cmd_explain(o, log, err);
  } else if (name == "report") {
    code = xcnn::cmd_report(o, log, err);
  } else {
    throw xcnn::InvalidArgument("unknown command '" + name + "'");
  }
  py::print(log.str(), py::arg("end") = "");
  if (!err.str().empty()) py::print(err.str(), py::arg("end") = "", py::arg("file") = py::module_::import("sys").attr("stderr"));
  return code;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Core of the xcnn toolkit: autodiff tensors, CNN specs, metrics, and KernelSHAP.";

  static py::exception<xcnn::Error> base_error(m, "XcnnError", PyExc_ValueError);
  py::register_exception<xcnn::ShapeError>(m, "ShapeError", base_error.ptr());
  py::register_exception<xcnn::DomainError>(m, "DomainError", base_error.ptr());
  py::register_exception<xcnn::InvalidArgument>(m, "InvalidArgument", base_error.ptr());
  py::register_exception<xcnn::BudgetError>(m, "BudgetError", base_error.ptr());
  py::register_exception<xcnn::UndefinedAucError>(m, "UndefinedAucError", base_error.ptr());
  py::register_exception<xcnn::SplitError>(m, "SplitError", base_error.ptr());

  py::class_<Tensord>(m, "Tensor")
      .def(py::init(&from_array), py::arg("values"), py::arg("requires_grad") = false)
      .def_property_readonly("shape", [](const Tensord& t) { return t.shape(); })
      .def_property_readonly("requires_grad", &Tensord::requires_grad)
      .def_property_readonly("op", [](const Tensord& t) { return std::string(t.op()); })
      .def("numpy", [](const Tensord& t) { return to_array(t.shape(), t.data()); })
      .def_property_readonly("grad",
                             [](const Tensord& t) -> py::object {
                               if (!t.has_grad()) return py::none();
                               return to_array(t.shape(), t.grad());
                             })
      .def("item", &Tensord::item)
      .def("backward", &Tensord::backward)
      .def("zero_grad", &Tensord::zero_grad)
      .def("detach", &Tensord::detach)
      .def("__add__", [](const Tensord& a, const Tensord& b) { return xcnn::add(a, b); })
      .def("__sub__", [](const Tensord& a, const Tensord& b) { return xcnn::sub(a, b); })
      .def("__mul__", [](const Tensord& a, const Tensord& b) { return xcnn::mul(a, b); })
      .def("__matmul__", [](const Tensord& a, const Tensord& b) { return xcnn::matmul(a, b); })
      .def("__repr__", [](const Tensord& t) { return "Tensor(shape=" + xcnn::shape_str(t.shape()) + ")"; });

  m.def("relu", &xcnn::relu<double>);
  m.def("exp", &xcnn::exp<double>);
  m.def("log", &xcnn::log<double>);
  m.def("sum", &xcnn::sum<double>);
  m.def("mean", &xcnn::mean<double>);
  m.def("softmax", &xcnn::softmax<double>);
  m.def("matmul", &xcnn::matmul<double>);
  m.def("linear", &xcnn::linear<double>, py::arg("x"), py::arg("weight"), py::arg("bias"));
  m.def("conv2d", &xcnn::conv2d<double>, py::arg("x"), py::arg("weight"), py::arg("bias"),
        py::arg("stride") = 1, py::arg("padding") = 1);
  m.def("maxpool2x2", &xcnn::maxpool2x2<double>);
  m.def(
      "weighted_cross_entropy",
      [](const Tensord& logits, const std::vector<std::size_t>& labels, const std::vector<double>& w) {
        return xcnn::weighted_cross_entropy(logits, labels, w);
      },
      py::arg("logits"), py::arg("labels"), py::arg("weights"));

  m.def(
      "custom_cnn_audit",
      [](std::size_t size, std::size_t classes, std::size_t fc_hidden) {
        return audit_dict(xcnn::audit_parameters(xcnn::custom_cnn_spec({3, size, size}, classes, fc_hidden)));
      },
      py::arg("size") = 256, py::arg("classes") = 3, py::arg("fc_hidden") = 5461);
  m.def(
      "custom_cnn_shapes",
      [](std::size_t size, std::size_t classes, std::size_t fc_hidden) {
        return xcnn::propagate_shapes(xcnn::custom_cnn_spec({3, size, size}, classes, fc_hidden));
      },
      py::arg("size") = 256, py::arg("classes") = 3, py::arg("fc_hidden") = 5461);
  m.def(
      "head_audit",
      [](std::size_t feature_dim, std::size_t hidden, std::size_t classes) {
        return audit_dict(xcnn::audit_parameters(xcnn::head_spec(feature_dim, hidden, classes)));
      },
      py::arg("feature_dim"), py::arg("hidden"), py::arg("classes"));

  m.def("class_weights", &xcnn::class_weights, py::arg("counts"), py::arg("total") = py::none());
  m.def(
      "stratified_split",
      [](const std::vector<std::size_t>& labels, const std::vector<std::string>& names,
         std::array<double, 3> ratios, std::uint64_t seed) {
        const auto s = xcnn::stratified_split(labels, names, {ratios[0], ratios[1], ratios[2]}, seed);
        return py::make_tuple(s.indices(xcnn::Split::kTrain), s.indices(xcnn::Split::kVal),
                              s.indices(xcnn::Split::kTest));
      },
      py::arg("labels"), py::arg("class_names"), py::arg("ratios") = std::array<double, 3>{0.70, 0.15, 0.15},
      py::arg("seed") = 0);

  m.def(
      "confusion_matrix",
      [](const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred, std::size_t k) {
        const auto cm = xcnn::confusion_matrix(truth, pred, k);
        std::vector<std::vector<std::size_t>> rows(k, std::vector<std::size_t>(k));
        for (std::size_t i = 0; i < k; ++i) {
          for (std::size_t j = 0; j < k; ++j) rows[i][j] = cm.at(i, j);
        }
        return rows;
      },
      py::arg("truth"), py::arg("predicted"), py::arg("k"));
  m.def(
      "macro_prf1",
      [](const std::vector<std::size_t>& truth, const std::vector<std::size_t>& pred, std::size_t k) {
        const auto r = xcnn::macro_prf1(xcnn::confusion_matrix(truth, pred, k));
        py::list per;
        for (const auto& c : r.per_class) {
          py::dict d;
          d["precision"] = c.precision;
          d["recall"] = c.recall;
          d["f1"] = c.f1;
          d["support"] = c.support;
          d["degenerate"] = c.degenerate;
          per.append(d);
        }
        py::dict d;
        d["per_class"] = per;
        d["macro_precision"] = r.macro_precision;
        d["macro_recall"] = r.macro_recall;
        d["macro_f1"] = r.macro_f1;
        d["accuracy"] = r.accuracy;
        return d;
      },
      py::arg("truth"), py::arg("predicted"), py::arg("k"));
  m.def(
      "roc_curve_auc",
      [](const std::vector<double>& scores, const std::vector<bool>& positive) {
        std::vector<std::uint8_t> pos(positive.begin(), positive.end());
        const auto c = xcnn::roc_curve_auc(scores, pos);
        std::vector<std::tuple<double, double, double>> points;
        for (const auto& p : c.points) points.emplace_back(p.fpr, p.tpr, p.threshold);
        return py::make_tuple(points, c.auc, c.auc_numerator, c.auc_denominator);
      },
      py::arg("scores"), py::arg("positive"));

  m.def("shapley_kernel_weight", &xcnn::shapley_kernel_weight, py::arg("m"), py::arg("s"));
  m.def(
      "exact_shapley",
      [](const std::function<double(std::vector<int>)>& v, std::size_t players) {
        return xcnn::exact_shapley(
            [&](const xcnn::Coalition& z) { return v(std::vector<int>(z.begin(), z.end())); }, players);
      },
      py::arg("value"), py::arg("m"));
  m.def(
      "kernel_shap",
      [](const std::function<double(std::vector<int>)>& v, std::size_t players, std::size_t budget,
         std::uint64_t seed) {
        const auto r = xcnn::kernel_shap(
            xcnn::ValueFunction([&](const xcnn::Coalition& z) { return v(std::vector<int>(z.begin(), z.end())); }),
            players, xcnn::ShapOptions{budget, seed});
        py::dict d;
        d["phi"] = r.phi;
        d["base_value"] = r.base_value;
        d["full_value"] = r.full_value;
        d["mode"] = std::string(xcnn::shap_mode_name(r.mode));
        d["evaluations"] = r.evaluations;
        return d;
      },
      py::arg("value"), py::arg("m"), py::arg("budget") = 2048, py::arg("seed") = 0);

  m.def(
      "run",
      [](const std::string& command, std::optional<std::filesystem::path> config, std::filesystem::path out,
         std::optional<std::uint64_t> seed, std::optional<std::filesystem::path> checkpoint,
         std::optional<std::filesystem::path> image, std::optional<std::string> target_class,
         std::optional<std::size_t> grid, std::optional<std::size_t> budget) {
        xcnn::CommandOptions o;
        o.config = std::move(config);
        o.out = std::move(out);
        o.seed = seed;
        o.checkpoint = std::move(checkpoint);
        o.image = std::move(image);
        o.target_class = std::move(target_class);
        o.grid = grid;
        o.budget = budget;
        return run_command(command, o);
      },
      py::arg("command"), py::arg("config") = py::none(), py::arg("out") = ".", py::arg("seed") = py::none(),
      py::arg("checkpoint") = py::none(), py::arg("image") = py::none(),
      py::arg("target_class") = py::none(), py::arg("grid") = py::none(), py::arg("budget") = py::none(),
      "Runs a CLI command in-process and returns its exit code.");
  m.def(
      "synth",
      [](std::filesystem::path out, std::uint64_t seed, std::size_t unit, std::size_t size) {
        std::ostringstream log, err;
        return xcnn::cmd_synth({std::move(out), seed, unit, size}, log, err);
      },
      py::arg("out"), py::arg("seed") = 0, py::arg("unit") = 20, py::arg("size") = 32);
}
