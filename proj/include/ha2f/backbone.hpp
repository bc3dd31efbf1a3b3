#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "ha2f/nn.hpp"
#include "ha2f/tensor.hpp"

namespace ha2f {

struct BackboneConfig {
  int input_size = 64;
  int patch_size = 16;
  int vit_dim = 64;
  int vit_depth = 4;
  int vit_heads = 4;
  std::array<int, 4> cnn_channels = {16, 32, 64, 64};
  int fused_channels = 64;
  uint64_t seed = 0;

  void validate() const;  // throws ConfigError
  int token_grid() const { return input_size / patch_size; }
};

enum class Phase { one, two, diff };

/// One scale of one temporal phase. `data` is a batch of (C,H,W) grids,
/// stored (N,C,H,W); `scale` is the downsampling denominator.
struct FeatureMap {
  Tensor data;
  int scale = 1;
  Phase phase = Phase::one;
};

struct FeaturePyramid {
  std::map<int, FeatureMap> levels;  // scales 2,4,8,16
  FeatureMap fused_high;             // scale 16, fused_channels wide
  Phase phase = Phase::one;
};

struct VitBlockParams {
  nn::LayerNorm ln1, ln2;
  nn::Linear wq, wk, wv, wo;
  nn::Linear ffn1, ffn2;
  int heads = 1;

  VitBlockParams() = default;
  VitBlockParams(nn::ParamStore& ps, const std::string& name, int dim, int heads);
};

struct CnnStageParams {
  nn::Conv2d conv1, conv2, proj;
  nn::BatchNorm2d bn1, bn2, bn_proj;

  CnnStageParams() = default;
  CnnStageParams(nn::ParamStore& ps, const std::string& name, int cin, int cout);
};

struct BackboneParams {
  BackboneConfig cfg;
  nn::Linear patch_embed;  // 3*p*p -> vit_dim
  Tensor pos_emb;          // (1, tokens, vit_dim), learned
  std::vector<VitBlockParams> blocks;
  std::array<CnnStageParams, 4> stages;
  nn::Conv2d fuse;  // 1x1: vit_dim + C4 -> fused_channels

  BackboneParams(nn::ParamStore& ps, const BackboneConfig& cfg);
};

/// Pre-LN transformer block: x = tokens + MHSA(LN(tokens)); out = x + FFN(LN(x)).
Tensor vit_block(const Tensor& tokens, const VitBlockParams& p);

/// Stride-2 residual stage cascade over an (N,3,S,S) image; keys are scales {2,4,8,16}.
std::map<int, FeatureMap> extract_cnn_pyramid(const Tensor& image, const BackboneParams& p,
                                              Phase phase, bool training);

/// Full siamese extraction for one phase: CNN levels + 1x1-fused ViT/CNN high map.
FeaturePyramid extract_pyramid(const Tensor& image, const BackboneParams& p, Phase phase,
                               bool training);

}  // namespace ha2f
