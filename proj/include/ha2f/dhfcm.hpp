#pragma once

#include <map>
#include <optional>
#include <string>
#include <tuple>

#include "ha2f/backbone.hpp"
#include "ha2f/nn.hpp"

namespace ha2f {

struct CrossAttendParams {
  nn::Linear wq, wk, wv, wo;  // q: C'->d, k/v: C_s->d, o: d->C'
  int attn_dim = 0;

  CrossAttendParams() = default;
  CrossAttendParams(nn::ParamStore& ps, const std::string& name, int high_channels,
                    int low_channels, int attn_dim);
};

struct MergeParams {
  nn::Conv2d dw, pw;  // depthwise 1x1 over 3C', then pointwise 1x1 to C'

  MergeParams() = default;
  MergeParams(nn::ParamStore& ps, const std::string& name, int channels);
};

struct DbrParams {
  nn::Conv2d dw, pw;  // depthwise 3x3 + pointwise 1x1
  nn::BatchNorm2d bn;

  DbrParams() = default;
  DbrParams(nn::ParamStore& ps, const std::string& name, int channels);
  Tensor forward(const Tensor& x, bool training) const;
};

struct HafsParams {
  nn::Conv2d cbr_conv;     // 1x1, channel-preserving
  nn::BatchNorm2d cbr_bn;
  DbrParams dbr;
  nn::Conv2d attn_proj;    // 1x1 to a single attention channel

  HafsParams() = default;
  HafsParams(nn::ParamStore& ps, const std::string& name, int channels);
};

struct DhfcmParams {
  CrossAttendParams ca2, ca4, ca8;
  MergeParams merge;
  std::optional<HafsParams> hafs;  // absent when the HAFS toggle is off

  DhfcmParams() = default;
  DhfcmParams(nn::ParamStore& ps, const BackboneConfig& cfg, bool use_hafs);
};

struct DifferencePyramid {
  std::map<int, FeatureMap> levels;  // scales 2,4,8,16; phase = diff
};

/// Queries from the fused high map's tokens, keys/values from the low level's.
FeatureMap cross_attend(const FeatureMap& high, const FeatureMap& low,
                        const CrossAttendParams& p);

/// Concat the three attended maps, then the 1x1 depthwise-separable projection.
FeatureMap merge_levels(const FeatureMap& a1, const FeatureMap& a2, const FeatureMap& a3,
                        const MergeParams& p);

/// H = ReLU(BN(Conv1x1(guide))); A = sigmoid(Conv1x1(DBR(gate + H))); out = A*gate + H.
FeatureMap hafs(const FeatureMap& gate, const FeatureMap& guide, const HafsParams& p,
                bool training);

std::tuple<FeatureMap, FeatureMap, DifferencePyramid> dhfcm_forward(const FeaturePyramid& p1,
                                                                    const FeaturePyramid& p2,
                                                                    const DhfcmParams& params,
                                                                    bool training);

}  // namespace ha2f
