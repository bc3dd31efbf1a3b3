#pragma once

#include <array>
#include <vector>

#include "ha2f/dhfcm.hpp"
#include "ha2f/nafrm.hpp"
#include "ha2f/nn.hpp"

namespace ha2f {

struct HeadParams {
  nn::Conv2d conv3;  // 3x3 after the final upsample
  nn::Conv2d conv1;  // 1x1 to a single logit channel

  HeadParams() = default;
  HeadParams(nn::ParamStore& ps, const std::string& name, int channels);
};

struct DecoderParams {
  std::array<NafrmParams, 3> levels;  // consuming diffs at scales 8, 4, 2
  HeadParams head;

  DecoderParams() = default;
  DecoderParams(nn::ParamStore& ps, const BackboneConfig& cfg, const NafrmToggles& t);
};

/// Fold the pyramid deepest-to-shallowest through NAFRM, then upsample to full
/// resolution and classify. Returns (N,1,S,S) logits.
Tensor decode(const DifferencePyramid& diffs, const DecoderParams& p, const NafrmToggles& t);

/// weights = (lambda_bce, lambda_dice); label entries must be exactly 0 or 1.
Tensor loss(const Tensor& logits, const Tensor& label, double lambda_bce = 1.0,
            double lambda_dice = 1.0);

struct BinaryMask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // 0 or 1, row-major
};

struct ChangeMap {
  int h = 0, w = 0;
  std::vector<double> prob;  // sigmoid(logits), in [0,1]
  BinaryMask mask;
  double threshold = 0.5;
};

/// prob = sigmoid(logits); mask = (prob >= threshold). Expects (1,1,H,W) or (H,W).
ChangeMap classify(const Tensor& logits, double threshold = 0.5);

}  // namespace ha2f
