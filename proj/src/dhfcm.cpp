#include "ha2f/dhfcm.hpp"

#include <cmath>

#include "ha2f/errors.hpp"
#include "ha2f/ops.hpp"

namespace ha2f {

CrossAttendParams::CrossAttendParams(nn::ParamStore& ps, const std::string& name,
                                     int high_channels, int low_channels, int attn_dim_)
    : wq(ps, name + ".wq", high_channels, attn_dim_),
      wk(ps, name + ".wk", low_channels, attn_dim_),
      wv(ps, name + ".wv", low_channels, attn_dim_),
      wo(ps, name + ".wo", attn_dim_, high_channels),
      attn_dim(attn_dim_) {}

MergeParams::MergeParams(nn::ParamStore& ps, const std::string& name, int channels)
    : dw(ps, name + ".dw", 3 * channels, 3 * channels, 1, 1, 0, 3 * channels),
      pw(ps, name + ".pw", 3 * channels, channels, 1, 1, 0) {}

DbrParams::DbrParams(nn::ParamStore& ps, const std::string& name, int channels)
    : dw(ps, name + ".dw", channels, channels, 3, 1, 1, channels, /*has_bias=*/false),
      pw(ps, name + ".pw", channels, channels, 1, 1, 0, 1, false),
      bn(ps, name + ".bn", channels) {}

Tensor DbrParams::forward(const Tensor& x, bool training) const {
  return ops::relu(bn.forward(pw.forward(dw.forward(x)), training));
}

HafsParams::HafsParams(nn::ParamStore& ps, const std::string& name, int channels)
    : cbr_conv(ps, name + ".cbr.conv", channels, channels, 1, 1, 0, 1, false),
      cbr_bn(ps, name + ".cbr.bn", channels),
      dbr(ps, name + ".dbr", channels),
      attn_proj(ps, name + ".attn_proj", channels, 1, 1, 1, 0) {}

DhfcmParams::DhfcmParams(nn::ParamStore& ps, const BackboneConfig& cfg, bool use_hafs)
    : ca2(ps, "dhfcm.ca2", cfg.fused_channels, cfg.cnn_channels[0], cfg.vit_dim),
      ca4(ps, "dhfcm.ca4", cfg.fused_channels, cfg.cnn_channels[1], cfg.vit_dim),
      ca8(ps, "dhfcm.ca8", cfg.fused_channels, cfg.cnn_channels[2], cfg.vit_dim),
      merge(ps, "dhfcm.merge", cfg.fused_channels) {
  if (use_hafs) hafs.emplace(ps, "dhfcm.hafs", cfg.fused_channels);
}

FeatureMap cross_attend(const FeatureMap& high, const FeatureMap& low,
                        const CrossAttendParams& p) {
  if (high.phase != low.phase) throw ContractError("cross_attend: mixed phases");
  if (high.scale != 16) throw ContractError("cross_attend: queries must come from scale 16");
  if (!high.data.all_finite() || !low.data.all_finite())
    throw NumericError("cross_attend: non-finite input");

  Tensor hq = ops::tokens_from_nchw(high.data);  // (N, Th, C')
  Tensor lt = ops::tokens_from_nchw(low.data);   // (N, Tl, Cs)
  Tensor q = p.wq.forward(hq);
  Tensor k = p.wk.forward(lt);
  Tensor v = p.wv.forward(lt);
  const double s = 1.0 / std::sqrt(static_cast<double>(p.attn_dim));
  Tensor attn = ops::softmax_lastdim(ops::scale(ops::bmm(q, k, /*transpose_b=*/true), s));
  Tensor out = p.wo.forward(ops::bmm(attn, v));
  const int g = high.data.dim(2);
  return FeatureMap{ops::nchw_from_tokens(out, g, high.data.dim(3)), 16, high.phase};
}

FeatureMap merge_levels(const FeatureMap& a1, const FeatureMap& a2, const FeatureMap& a3,
                        const MergeParams& p) {
  if (a1.data.shape() != a2.data.shape() || a1.data.shape() != a3.data.shape())
    throw ContractError("merge_levels: shape mismatch");
  Tensor cat = ops::concat_channels({a1.data, a2.data, a3.data});
  return FeatureMap{p.pw.forward(p.dw.forward(cat)), a1.scale, a1.phase};
}

FeatureMap hafs(const FeatureMap& gate, const FeatureMap& guide, const HafsParams& p,
                bool training) {
  if (gate.data.shape() != guide.data.shape()) throw ContractError("hafs: shape mismatch");
  Tensor h_proj = ops::relu(p.cbr_bn.forward(p.cbr_conv.forward(guide.data), training));
  Tensor a = ops::sigmoid(p.attn_proj.forward(p.dbr.forward(ops::add(gate.data, h_proj), training)));
  Tensor out = ops::add(ops::mul_spatial_gate(gate.data, a), h_proj);
  return FeatureMap{out, gate.scale, gate.phase};
}

namespace {

FeatureMap abs_diff(const FeatureMap& a, const FeatureMap& b) {
  return FeatureMap{ops::abs(ops::sub(a.data, b.data)), a.scale, Phase::diff};
}

FeatureMap enrich(const FeaturePyramid& p, const DhfcmParams& params) {
  FeatureMap a1 = cross_attend(p.fused_high, p.levels.at(2), params.ca2);
  FeatureMap a2 = cross_attend(p.fused_high, p.levels.at(4), params.ca4);
  FeatureMap a3 = cross_attend(p.fused_high, p.levels.at(8), params.ca8);
  return merge_levels(a1, a2, a3, params.merge);
}

}  // namespace

std::tuple<FeatureMap, FeatureMap, DifferencePyramid> dhfcm_forward(const FeaturePyramid& p1,
                                                                    const FeaturePyramid& p2,
                                                                    const DhfcmParams& params,
                                                                    bool training) {
  FeatureMap e1 = enrich(p1, params);
  FeatureMap e2 = enrich(p2, params);
  FeatureMap r1 = e1, r2 = e2;
  if (params.hafs) {
    r1 = hafs(e1, e2, *params.hafs, training);
    r2 = hafs(e2, e1, *params.hafs, training);
  }
  DifferencePyramid diffs;
  diffs.levels[16] = abs_diff(r1, r2);
  for (int s : {2, 4, 8}) diffs.levels[s] = abs_diff(p1.levels.at(s), p2.levels.at(s));
  return {r1, r2, diffs};
}

}  // namespace ha2f
