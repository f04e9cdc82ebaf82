// Copyright (c) 2026, The clipforge Authors
// SPDX-License-Identifier: Apache-2.0
//
// Thin Python surface over the core library: metrics, schedules, the tokenizer
// and the command-line entry point.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>
#include <string>
#include <vector>

#include "clipforge/cli.hpp"
#include "clipforge/contrastive.hpp"
#include "clipforge/errors.hpp"
#include "clipforge/eval.hpp"
#include "clipforge/model.hpp"
#include "clipforge/optim.hpp"
#include "clipforge/tokenizer.hpp"
#include "clipforge/trainer.hpp"

namespace py = pybind11;
using namespace clipforge;

namespace {

using DoubleMatrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> matrix_values(const DoubleMatrix& m, std::size_t& rows, std::size_t& cols) {
  if (m.ndim() != 2) throw InputError("expected a 2-d array, got " + std::to_string(m.ndim()) + " dimensions");
  rows = static_cast<std::size_t>(m.shape(0));
  cols = static_cast<std::size_t>(m.shape(1));
  return {m.data(), m.data() + rows * cols};
}

}  // namespace

PYBIND11_MODULE(_clipforge, m) {
  m.doc() = "clipforge core bindings";

  static py::exception<Error> base(m, "ClipforgeError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      base(e.what());
    }
  });

  m.def("tokenize",
        [](const std::string& caption, std::size_t context_length) {
          return tokenize(caption, TokenizerSpec{context_length});
        },
        py::arg("caption"), py::arg("context_length") = kDefaultContextLength);
  m.def("detokenize", &detokenize, py::arg("ids"));

  m.def("layer_scales", &layer_scales, py::arg("layer_decay"), py::arg("num_layers"));
  m.def("lr_at",
        [](std::int64_t warmup, std::int64_t total, const std::string& shape, double peak, std::int64_t step) {
          const Schedule s{warmup, total, parse_schedule_shape(shape)};
          s.validate();
          return lr_at(s, peak, step);
        },
        py::arg("warmup_steps"), py::arg("total_steps"), py::arg("shape"), py::arg("peak"), py::arg("step"));

  m.def("count_params",
        [](const std::string& preset) {
          const ParamCount c = count_params(model_from_preset(preset));
          return py::make_tuple(c.image, c.text);
        },
        py::arg("preset"), "(image, text) parameter counts of a named preset.");

  m.def("clip_loss",
        [](const DoubleMatrix& logits) {
          std::size_t r = 0, c = 0;
          const auto v = matrix_values(logits, r, c);
          return static_cast<double>(clip_loss(Tensor::from({r, c}, std::vector<float>(v.begin(), v.end()))).item());
        },
        py::arg("logits"), "Symmetric contrastive loss of a square logit matrix.");

  m.def("round1", &round1, py::arg("x"));
  m.def("robustness_gap",
        [](double reference, const std::vector<double>& variants) {
          const RobustnessGap g = robustness_gap(reference, variants);
          py::dict d;
          d["avg"] = g.avg;
          d["delta"] = g.delta;
          d["avg_1dp"] = g.avg_1dp;
          d["delta_1dp"] = g.delta_1dp;
          return d;
        },
        py::arg("reference_top1"), py::arg("variant_top1s"));
  m.def("recall_at_k",
        [](const DoubleMatrix& scores, const std::vector<std::vector<std::size_t>>& truth,
           const std::vector<std::size_t>& ks) {
          std::size_t q = 0, g = 0;
          const auto v = matrix_values(scores, q, g);
          return recall_at_k_scores(v, q, g, truth, ks);
        },
        py::arg("scores"), py::arg("ground_truth"), py::arg("ks") = std::vector<std::size_t>{1, 5, 10});

  m.def("run_cli",
        [](const std::vector<std::string>& args) {
          std::vector<std::string> full = {"clipforge"};
          full.insert(full.end(), args.begin(), args.end());
          std::ostringstream out, err;
          int status = 0;
          {
            py::gil_scoped_release release;
            status = run(full, out, err);
          }
          return py::make_tuple(status, out.str(), err.str());
        },
        py::arg("args"), "Runs one command; returns (status, stdout, stderr).");
}
