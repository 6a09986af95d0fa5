// Python bindings for the scalar/vector-level core operations. Training
// loops stay in C++; this module exposes the pieces that are useful to
// verify or script from Python.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "sslct/contrastive.hpp"
#include "sslct/downstream.hpp"
#include "sslct/explain.hpp"
#include "sslct/mask.hpp"
#include "sslct/spark.hpp"

namespace py = pybind11;
using namespace sslct;

namespace {

double info_nce_py(const std::vector<double>& query, const std::vector<double>& positive,
                   const std::vector<std::vector<double>>& negatives, double tau) {
  check_cfg(!query.empty() && query.size() == positive.size(), "info_nce: dim mismatch");
  KeyQueue<double> queue((int)std::max<size_t>(negatives.size(), 1), (int)query.size());
  queue.push(negatives);
  return info_nce_value(query, positive, queue, tau);
}

double swav_loss_py(const std::vector<double>& logits_a, const std::vector<double>& logits_b,
                    const std::vector<double>& codes_a, const std::vector<double>& codes_b, int B,
                    int K) {
  auto a = make_node<double>({B, K}, std::vector<double>(logits_a));
  auto b = make_node<double>({B, K}, std::vector<double>(logits_b));
  return swav_swapped_loss(a, b, codes_a, codes_b)->value[0];
}

double byol_loss_py(const std::vector<double>& predicted, const std::vector<double>& target,
                    int B, int D) {
  auto p = make_node<double>({B, D}, std::vector<double>(predicted));
  auto t = make_node<double>({B, D}, std::vector<double>(target));
  return byol_loss(p, t)->value[0];
}

double heatmap_correlation_py(const std::vector<float>& a, const std::vector<float>& b, int h,
                              int w) {
  Heatmap ha, hb;
  ha.h = hb.h = h;
  ha.w = hb.w = w;
  ha.map = a;
  hb.map = b;
  return heatmap_correlation(ha, hb);
}

std::int64_t encoder_params_py(const std::vector<int>& blocks, const std::vector<int>& widths) {
  EncoderConfig ec;
  ec.blocks = blocks;
  ec.widths = widths;
  ec.validate();
  return encoder_param_count_formula(ec);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "sslct core operations";
  m.attr("__version__") = version();

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);

  m.def("derive_seed", &derive_seed, py::arg("seed"), py::arg("label"), py::arg("index") = 0,
        "Derive a named deterministic sub-stream seed.");

  // preprocessing
  m.def("hu_interval_map_value", &hu_interval_map_value, py::arg("hu"),
        "Map a Hounsfield value over [-1024, 3071] to [0, 255].");
  m.def("apply_window_value", &apply_window_value, py::arg("hu"), py::arg("level"),
        py::arg("width"), "Apply a level/width intensity window to one Hounsfield value.");
  m.def(
      "resize_bilinear",
      [](const std::vector<double>& src, int sh, int sw, int th, int tw) {
        return resize_bilinear(src, sh, sw, th, tw);
      },
      py::arg("src"), py::arg("src_h"), py::arg("src_w"), py::arg("out_h"), py::arg("out_w"));

  // masking
  py::class_<PatchMask>(m, "PatchMask")
      .def_readonly("grid_h", &PatchMask::grid_h)
      .def_readonly("grid_w", &PatchMask::grid_w)
      .def_readonly("patch", &PatchMask::patch)
      .def_readonly("kept", &PatchMask::kept)
      .def("kept_count", &PatchMask::kept_count)
      .def("masked_count", &PatchMask::masked_count);
  m.def("generate_patch_mask", &generate_patch_mask, py::arg("h"), py::arg("w"), py::arg("patch"),
        py::arg("mask_ratio"), py::arg("seed"), py::arg("exact_count") = false);

  // losses and balancing
  m.def("info_nce", &info_nce_py, py::arg("query"), py::arg("positive"), py::arg("negatives"),
        py::arg("tau"));
  m.def("swav_swapped_loss", &swav_loss_py, py::arg("logits_a"), py::arg("logits_b"),
        py::arg("codes_a"), py::arg("codes_b"), py::arg("batch"), py::arg("prototypes"));
  m.def("byol_loss", &byol_loss_py, py::arg("predicted"), py::arg("target"), py::arg("batch"),
        py::arg("dim"));
  m.def(
      "sinkhorn_codes",
      [](const std::vector<double>& scores, int B, int K, double epsilon, int iterations) {
        return sinkhorn_codes(scores, B, K, epsilon, iterations);
      },
      py::arg("scores"), py::arg("batch"), py::arg("prototypes"), py::arg("epsilon"),
      py::arg("iterations"));

  // evaluation
  py::class_<MetricSet>(m, "MetricSet")
      .def_readonly("accuracy", &MetricSet::accuracy)
      .def_readonly("auc", &MetricSet::auc)
      .def_readonly("f1", &MetricSet::f1);
  m.def("compute_metrics", &compute_metrics, py::arg("scores"), py::arg("n"), py::arg("k"),
        py::arg("labels"));
  m.def("binary_auc", &binary_auc, py::arg("scores"), py::arg("labels"));
  m.def("heatmap_correlation", &heatmap_correlation_py, py::arg("a"), py::arg("b"), py::arg("h"),
        py::arg("w"));

  // dataset reduction
  m.def("reduction_plan", &reduction_plan, py::arg("n"), py::arg("fractions"));
  m.def("stratified_subsample_indices", &stratified_subsample_indices, py::arg("labels"),
        py::arg("fraction"), py::arg("seed"));

  // model accounting
  m.def("encoder_param_count", &encoder_params_py, py::arg("blocks"), py::arg("widths"));
}
