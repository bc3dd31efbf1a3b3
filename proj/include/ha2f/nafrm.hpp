#pragma once

#include <optional>
#include <string>

#include "ha2f/backbone.hpp"
#include "ha2f/nn.hpp"

namespace ha2f {

/// 4-channel displacement grid in pixel units at the high-resolution feature's
/// size: channels 0-1 = (dx, dy) for the high stream, 2-3 = (dx, dy) for the
/// upsampled low stream.
struct BiasField {
  Tensor data;  // (N,4,H,W)
};

struct DfsmParams {
  nn::Linear mlp1, mlp2;  // C -> C/r -> C
  nn::Conv2d conv7;       // 7x7: 2 -> 1

  DfsmParams() = default;
  DfsmParams(nn::ParamStore& ps, const std::string& name, int channels, int reduction = 4);
};

struct NafrmToggles {
  bool sat = true;
  bool dfsm = true;
};

struct NafrmParams {
  nn::Conv2d adjust;                  // 1x1: low C -> high C (feeds low' and the bias field)
  std::optional<nn::Conv2d> bias_conv;  // 3x3: 2*high C -> 4, present iff SAT
  std::optional<DfsmParams> dfsm;       // present iff DFSM

  NafrmParams() = default;
  NafrmParams(nn::ParamStore& ps, const std::string& name, int low_channels, int high_channels,
              const NafrmToggles& t);
};

/// F_m = Conv3x3(concat(high, up2(Conv1x1(low)))): 4 channels at high's size.
BiasField gen_bias_field(const FeatureMap& low, const FeatureMap& high, const NafrmParams& p);

/// F_w = wl + wh gated by channel saliency (GAP+MLP) and spatial consistency
/// (7x7 conv over per-position channel mean/std), both squashed by sigmoid.
Tensor dfsm(const Tensor& wl, const Tensor& wh, const DfsmParams& p);

FeatureMap nafrm_forward(const FeatureMap& low, const FeatureMap& high, const NafrmParams& p,
                         const NafrmToggles& t);

}  // namespace ha2f
