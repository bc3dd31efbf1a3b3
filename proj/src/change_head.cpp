#include "ha2f/change_head.hpp"

#include <cmath>
#include <string>

#include "ha2f/errors.hpp"
#include "ha2f/ops.hpp"

namespace ha2f {

HeadParams::HeadParams(nn::ParamStore& ps, const std::string& name, int channels)
    : conv3(ps, name + ".conv3", channels, channels, 3, 1, 1),
      conv1(ps, name + ".conv1", channels, 1, 1, 1, 0) {}

DecoderParams::DecoderParams(nn::ParamStore& ps, const BackboneConfig& cfg,
                             const NafrmToggles& t) {
  // running state starts at fused_channels (diffs[16]) and takes each level's width
  const int high_c[3] = {cfg.cnn_channels[2], cfg.cnn_channels[1], cfg.cnn_channels[0]};
  int low_c = cfg.fused_channels;
  const char* names[3] = {"decoder.nafrm8", "decoder.nafrm4", "decoder.nafrm2"};
  for (int i = 0; i < 3; ++i) {
    levels[i] = NafrmParams(ps, names[i], low_c, high_c[i], t);
    low_c = high_c[i];
  }
  head = HeadParams(ps, "decoder.head", cfg.cnn_channels[0]);
}

Tensor decode(const DifferencePyramid& diffs, const DecoderParams& p, const NafrmToggles& t) {
  for (int s : {2, 4, 8, 16})
    if (!diffs.levels.count(s))
      throw ContractError("decode: difference pyramid missing scale " + std::to_string(s));
  FeatureMap x = diffs.levels.at(16);
  const int scales[3] = {8, 4, 2};
  for (int i = 0; i < 3; ++i) x = nafrm_forward(x, diffs.levels.at(scales[i]), p.levels[i], t);
  Tensor y = ops::relu(p.head.conv3.forward(ops::bilinear_up2(x.data)));
  return p.head.conv1.forward(y);
}

Tensor loss(const Tensor& logits, const Tensor& label, double lambda_bce, double lambda_dice) {
  if (logits.shape() != label.shape()) throw ContractError("loss: logits/label shape mismatch");
  for (double v : label.values())
    if (v != 0.0 && v != 1.0)
      throw ContractError("loss: label must be binary, found " + std::to_string(v));

  Tensor bce = ops::bce_with_logits_mean(logits, label);

  // soft Dice, per sample, smoothing 1
  const int n = logits.dim(0);
  const double plane = static_cast<double>(logits.numel() / n);
  Tensor p = ops::sigmoid(logits);
  Tensor inter = ops::scale(ops::global_avg_pool(ops::mul(p, label)), plane);  // (N,1)
  Tensor psum = ops::scale(ops::global_avg_pool(p), plane);
  Tensor lsum = ops::scale(ops::global_avg_pool(label), plane);
  Tensor dice = ops::div(ops::add_scalar(ops::scale(inter, 2.0), 1.0),
                         ops::add_scalar(ops::add(psum, lsum), 1.0));
  Tensor dice_loss = ops::add_scalar(ops::scale(ops::mean_all(dice), -1.0), 1.0);

  return ops::add(ops::scale(bce, lambda_bce), ops::scale(dice_loss, lambda_dice));
}

ChangeMap classify(const Tensor& logits, double threshold) {
  if (!logits.all_finite()) throw NumericError("classify: non-finite logits");
  int h, w;
  if (logits.rank() == 4 && logits.dim(0) == 1 && logits.dim(1) == 1) {
    h = logits.dim(2);
    w = logits.dim(3);
  } else if (logits.rank() == 2) {
    h = logits.dim(0);
    w = logits.dim(1);
  } else {
    throw ShapeError("classify: expected (1,1,H,W) or (H,W) logits");
  }
  ChangeMap cm;
  cm.h = h;
  cm.w = w;
  cm.threshold = threshold;
  cm.prob.resize(static_cast<size_t>(h) * w);
  cm.mask.h = h;
  cm.mask.w = w;
  cm.mask.v.resize(cm.prob.size());
  const double* pl = logits.data();
  for (size_t i = 0; i < cm.prob.size(); ++i) {
    const double x = pl[i];
    cm.prob[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    cm.mask.v[i] = cm.prob[i] >= threshold ? 1 : 0;
  }
  return cm;
}

}  // namespace ha2f
