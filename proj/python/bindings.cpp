#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <stdexcept>

#include "ha2f/change_head.hpp"
#include "ha2f/config.hpp"
#include "ha2f/data.hpp"
#include "ha2f/metrics.hpp"
#include "ha2f/model.hpp"
#include "ha2f/ops.hpp"
#include "ha2f/trainer.hpp"

namespace py = pybind11;
using namespace ha2f;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DArray& a) {
  std::vector<int> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[size_t(i)] = int(a.shape(i));
  std::vector<double> v(a.data(), a.data() + a.size());
  return Tensor::from_vector(shape, v, /*requires_grad=*/false);
}

py::array from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape;
  for (int i = 0; i < int(t.shape().size()); ++i) shape.push_back(t.dim(i));
  py::array_t<double> out(shape);
  std::copy(t.values().begin(), t.values().end(), out.mutable_data());
  return out;
}

BinaryMask to_mask(const U8Array& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mask must be 2-d");
  BinaryMask m;
  m.h = int(a.shape(0));
  m.w = int(a.shape(1));
  m.v.assign(a.data(), a.data() + a.size());
  for (uint8_t v : m.v)
    if (v > 1) throw std::invalid_argument("mask values must be 0 or 1");
  return m;
}

py::array mask_to_array(const BinaryMask& m) {
  py::array_t<uint8_t> out({py::ssize_t(m.h), py::ssize_t(m.w)});
  std::copy(m.v.begin(), m.v.end(), out.mutable_data());
  return out;
}

py::array image_to_array(const Image& img) {
  py::array_t<double> out({py::ssize_t(img.c), py::ssize_t(img.h), py::ssize_t(img.w)});
  std::copy(img.v.begin(), img.v.end(), out.mutable_data());
  return out;
}

// accepts (3,S,S) or (N,3,S,S); returns (N,3,S,S)
Tensor batched_images(const DArray& a) {
  std::vector<int> shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[size_t(i)] = int(a.shape(i));
  if (shape.size() == 3) shape.insert(shape.begin(), 1);
  std::vector<double> v(a.data(), a.data() + a.size());
  return Tensor::from_vector(shape, v, /*requires_grad=*/false);
}

py::dict scores_to_dict(const Scores& s, const ConfusionCounts& c) {
  py::dict counts;
  counts["tp"] = c.tp;
  counts["tn"] = c.tn;
  counts["fp"] = c.fp;
  counts["fn"] = c.fn;
  py::dict d;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["oa"] = s.oa;
  d["f1"] = s.f1;
  d["iou"] = s.iou;
  d["degenerate"] = s.degenerate;
  d["counts"] = counts;
  return d;
}

class Model {
 public:
  Model(const BackboneConfig& cfg, bool hafs, bool sat, bool use_dfsm)
      : net_(cfg, AblationToggles{hafs, sat, use_dfsm}) {}

  static Model from_checkpoint(const std::string& path) {
    LoadedCheckpoint ckpt = read_checkpoint(path);
    ExperimentConfig cfg = ExperimentConfig::from_json(ckpt.config_json);
    Model m(cfg.backbone, cfg.train.ablation.hafs, cfg.train.ablation.sat,
            cfg.train.ablation.dfsm);
    load_into(m.net_, ckpt);
    return m;
  }

  py::array logits(const DArray& a, const DArray& b) {
    return from_tensor(net_.forward_logits(batched_images(a), batched_images(b), false));
  }

  py::dict predict(const DArray& a, const DArray& b, double threshold) {
    Tensor lg = net_.forward_logits(batched_images(a), batched_images(b), false);
    int n = lg.dim(0), h = lg.dim(2), w = lg.dim(3);
    py::array_t<double> prob({py::ssize_t(n), py::ssize_t(h), py::ssize_t(w)});
    py::array_t<uint8_t> mask({py::ssize_t(n), py::ssize_t(h), py::ssize_t(w)});
    for (int i = 0; i < n; ++i) {
      const double* src = lg.data() + size_t(i) * h * w;
      ChangeMap cm = classify(Tensor::from_vector({h, w}, {src, src + size_t(h) * w}), threshold);
      std::copy(cm.prob.begin(), cm.prob.end(), prob.mutable_data() + size_t(i) * h * w);
      std::copy(cm.mask.v.begin(), cm.mask.v.end(), mask.mutable_data() + size_t(i) * h * w);
    }
    py::dict d;
    d["prob"] = prob;
    d["mask"] = mask;
    return d;
  }

  long long param_count() const { return net_.param_count(); }
  int input_size() const { return net_.config().input_size; }

 private:
  Ha2fNet net_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "HA2F change detection core";

  m.def(
      "warp",
      [](const DArray& x, const DArray& flow) {
        return from_tensor(ops::warp(to_tensor(x), to_tensor(flow)));
      },
      py::arg("x"), py::arg("flow"),
      "Bilinear backward warp of (N,C,H,W) features by an (N,2,H,W) flow field");

  m.def(
      "poly_lr",
      [](long step, double lr0, long max_steps, double power) {
        TrainConfig tc;
        tc.lr0 = lr0;
        tc.max_steps = max_steps;
        tc.poly_power = power;
        return poly_lr(step, tc);
      },
      py::arg("step"), py::arg("lr0") = 2e-4, py::arg("max_steps") = 2000,
      py::arg("power") = 0.9, "Polynomial learning-rate decay");

  m.def(
      "scores",
      [](const U8Array& pred, const U8Array& gt) {
        ConfusionCounts counts;
        accumulate(to_mask(pred), to_mask(gt), counts);
        return scores_to_dict(scores(counts), counts);
      },
      py::arg("pred"), py::arg("gt"),
      "Precision/recall/OA/F1/IoU of a binary prediction against ground truth");

  m.def(
      "render_error_map",
      [](const U8Array& pred, const U8Array& gt) {
        RgbImage img = render_error_map(to_mask(pred), to_mask(gt));
        py::array_t<uint8_t> out({py::ssize_t(img.h), py::ssize_t(img.w), py::ssize_t(3)});
        std::copy(img.v.begin(), img.v.end(), out.mutable_data());
        return out;
      },
      py::arg("pred"), py::arg("gt"), "RGB error map: TP white, FP red, FN green, TN black");

  m.def(
      "synth_pair",
      [](int index, int size, uint64_t seed, double noise_sigma, int shift_px) {
        SynthConfig sc;
        sc.size = size;
        sc.seed = seed;
        sc.noise_sigma = noise_sigma;
        sc.shift_px = shift_px;
        ImagePair p = synth_pair(sc, index);
        py::dict d;
        d["a"] = image_to_array(p.a);
        d["b"] = image_to_array(p.b);
        d["label"] = mask_to_array(p.label);
        d["id"] = p.id;
        return d;
      },
      py::arg("index") = 0, py::arg("size") = 64, py::arg("seed") = 0,
      py::arg("noise_sigma") = 0.01, py::arg("shift_px") = 1,
      "Deterministic synthetic bi-temporal pair with its change mask");

  py::class_<Model>(m, "Model")
      .def(py::init([](int input_size, int vit_dim, int vit_depth, int vit_heads,
                       std::array<int, 4> cnn_channels, int fused_channels, uint64_t seed,
                       bool hafs, bool sat, bool dfsm) {
             BackboneConfig cfg;
             cfg.input_size = input_size;
             cfg.vit_dim = vit_dim;
             cfg.vit_depth = vit_depth;
             cfg.vit_heads = vit_heads;
             cfg.cnn_channels = cnn_channels;
             cfg.fused_channels = fused_channels;
             cfg.seed = seed;
             cfg.validate();
             return Model(cfg, hafs, sat, dfsm);
           }),
           py::arg("input_size") = 64, py::arg("vit_dim") = 64, py::arg("vit_depth") = 4,
           py::arg("vit_heads") = 4,
           py::arg("cnn_channels") = std::array<int, 4>{16, 32, 64, 64},
           py::arg("fused_channels") = 64, py::arg("seed") = 0, py::arg("hafs") = true,
           py::arg("sat") = true, py::arg("dfsm") = true)
      .def_static("from_checkpoint", &Model::from_checkpoint, py::arg("path"),
                  "Rebuild a model from a training checkpoint")
      .def("logits", &Model::logits, py::arg("a"), py::arg("b"),
           "Raw (N,1,S,S) change logits for two image batches")
      .def("predict", &Model::predict, py::arg("a"), py::arg("b"), py::arg("threshold") = 0.5,
           "Per-pixel change probability and thresholded mask")
      .def_property_readonly("param_count", &Model::param_count)
      .def_property_readonly("input_size", &Model::input_size);
}
