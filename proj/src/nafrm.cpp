#include "ha2f/nafrm.hpp"

#include <algorithm>

#include "ha2f/errors.hpp"
#include "ha2f/ops.hpp"

namespace ha2f {

DfsmParams::DfsmParams(nn::ParamStore& ps, const std::string& name, int channels, int reduction)
    : mlp1(ps, name + ".mlp1", channels, std::max(1, channels / reduction)),
      mlp2(ps, name + ".mlp2", std::max(1, channels / reduction), channels),
      conv7(ps, name + ".conv7", 2, 1, 7, 1, 3) {}

NafrmParams::NafrmParams(nn::ParamStore& ps, const std::string& name, int low_channels,
                         int high_channels, const NafrmToggles& t)
    : adjust(ps, name + ".adjust", low_channels, high_channels, 1, 1, 0) {
  if (t.sat) bias_conv.emplace(ps, name + ".bias", 2 * high_channels, 4, 3, 1, 1);
  if (t.dfsm) dfsm.emplace(ps, name + ".dfsm", high_channels);
}

BiasField gen_bias_field(const FeatureMap& low, const FeatureMap& high, const NafrmParams& p) {
  if (low.scale != 2 * high.scale)
    throw ContractError("gen_bias_field: low must be one level deeper than high (scales " +
                        std::to_string(low.scale) + " vs " + std::to_string(high.scale) + ")");
  if (!p.bias_conv) throw ContractError("gen_bias_field: SAT parameters absent");
  Tensor up = ops::bilinear_up2(p.adjust.forward(low.data));
  return BiasField{p.bias_conv->forward(ops::concat_channels({high.data, up}))};
}

Tensor dfsm(const Tensor& wl, const Tensor& wh, const DfsmParams& p) {
  if (wl.shape() != wh.shape()) throw ContractError("dfsm: shape mismatch");
  Tensor fw = ops::add(wl, wh);
  Tensor cg = ops::sigmoid(p.mlp2.forward(ops::relu(p.mlp1.forward(ops::global_avg_pool(fw)))));
  Tensor sg = ops::sigmoid(p.conv7.forward(ops::channel_mean_std(fw)));
  return ops::mul_spatial_gate(ops::mul_channel_gate(fw, cg), sg);
}

FeatureMap nafrm_forward(const FeatureMap& low, const FeatureMap& high, const NafrmParams& p,
                         const NafrmToggles& t) {
  if (low.scale != 2 * high.scale)
    throw ContractError("nafrm_forward: low must be one level deeper than high");
  Tensor low_up = ops::bilinear_up2(p.adjust.forward(low.data));
  Tensor wl = low_up, wh = high.data;
  if (t.sat) {
    Tensor field = p.bias_conv->forward(ops::concat_channels({high.data, low_up}));
    wh = ops::warp(high.data, ops::slice_channels(field, 0, 2));
    wl = ops::warp(low_up, ops::slice_channels(field, 2, 4));
  }
  Tensor out = t.dfsm ? dfsm(wl, wh, *p.dfsm) : ops::add(wl, wh);
  return FeatureMap{out, high.scale, high.phase};
}

}  // namespace ha2f
