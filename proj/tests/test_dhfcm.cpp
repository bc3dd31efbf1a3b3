#include <algorithm>
#include <cmath>
#include <limits>

#include "doctest.h"

#include "ha2f/dhfcm.hpp"
#include "ha2f/errors.hpp"
#include "ha2f/nn.hpp"
#include "ha2f/ops.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace ha2f;
using testutil::fd_check;
using testutil::rand_tensor;

namespace {

FeatureMap fmap(Tensor t, int scale, Phase ph = Phase::one) { return FeatureMap{t, scale, ph}; }

void randomize_bn(nn::BatchNorm2d& bn, Rng& rng) {
  for (double& v : *bn.running_mean) v = rng.uniform(-0.5, 0.5);
  for (double& v : *bn.running_var) v = rng.uniform(0.3, 1.6);
}

}  // namespace

TEST_CASE("cross_attend matches the straight-line reference") {
  Rng rng(801);
  for (int trial = 0; trial < 25; ++trial) {
    nn::ParamStore ps(900 + uint64_t(trial));
    int cp = 2 + trial % 3, cs = 2 + (trial / 3) % 3, d = 2 + trial % 4;
    CrossAttendParams p(ps, "ca", cp, cs, d);
    Tensor high = rand_tensor(rng, {2, cp, 2, 2}, -1.0, 1.0, false);
    Tensor low = rand_tensor(rng, {2, cs, 4, 4}, -1.0, 1.0, false);
    FeatureMap out = cross_attend(fmap(high, 16), fmap(low, 4), p);
    auto ref = oracle::cross_attend(high, low, p);
    CHECK(out.data.shape() == std::vector<int>{2, cp, 2, 2});
    CHECK(oracle::max_abs_diff(out.data.values(), ref) <= 1e-6);
  }
}

TEST_CASE("cross_attend with a single key token copies wo(wv(token)) everywhere") {
  nn::ParamStore ps(31);
  CrossAttendParams p(ps, "ca", 3, 2, 4);
  Rng rng(32);
  Tensor high = rand_tensor(rng, {1, 3, 2, 2}, -1.0, 1.0, false);
  Tensor low = rand_tensor(rng, {1, 2, 1, 1}, -1.0, 1.0, false);

  FeatureMap out = cross_attend(fmap(high, 16), fmap(low, 8), p);

  // one key => softmax weight 1 regardless of the query
  std::vector<double> tok = {low.at({0, 0, 0, 0}), low.at({0, 1, 0, 0})};
  std::vector<double> v = oracle::linear(tok, 1, 2, p.wv.w.values(), 4, p.wv.b.values());
  std::vector<double> o = oracle::linear(v, 1, 4, p.wo.w.values(), 3, p.wo.b.values());
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 2; ++x)
      for (int c = 0; c < 3; ++c) CHECK(out.data.at({0, c, y, x}) == doctest::Approx(o[size_t(c)]).epsilon(1e-12));
}

TEST_CASE("cross_attend contract and numeric errors") {
  nn::ParamStore ps(33);
  CrossAttendParams p(ps, "ca", 3, 2, 4);
  Rng rng(34);
  Tensor h = rand_tensor(rng, {1, 3, 2, 2}, -1.0, 1.0, false);
  Tensor l = rand_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0, false);

  FeatureMap mixed_h = fmap(h, 16, Phase::one), mixed_l = fmap(l, 4, Phase::two);
  CHECK_THROWS_AS(cross_attend(mixed_h, mixed_l, p), ContractError);

  FeatureMap not16 = fmap(h, 8);
  FeatureMap l_ok = fmap(l, 4);
  CHECK_THROWS_AS(cross_attend(not16, l_ok, p), ContractError);

  Tensor bad = l.clone();
  bad.data()[3] = std::numeric_limits<double>::quiet_NaN();
  FeatureMap h_ok = fmap(h, 16);
  FeatureMap bad_l = fmap(bad, 4);
  CHECK_THROWS_AS(cross_attend(h_ok, bad_l, p), NumericError);
}

TEST_CASE("merge_levels matches the straight-line reference") {
  Rng rng(811);
  for (int trial = 0; trial < 25; ++trial) {
    nn::ParamStore ps(950 + uint64_t(trial));
    int c = 1 + trial % 4;
    MergeParams p(ps, "merge", c);
    Tensor a1 = rand_tensor(rng, {2, c, 3, 3}, -1.0, 1.0, false);
    Tensor a2 = rand_tensor(rng, {2, c, 3, 3}, -1.0, 1.0, false);
    Tensor a3 = rand_tensor(rng, {2, c, 3, 3}, -1.0, 1.0, false);
    FeatureMap out = merge_levels(fmap(a1, 16), fmap(a2, 16), fmap(a3, 16), p);
    CHECK(oracle::max_abs_diff(out.data.values(), oracle::merge_levels(a1, a2, a3, p)) <= 1e-6);
  }

  nn::ParamStore ps(960);
  MergeParams p(ps, "merge", 2);
  Tensor a = rand_tensor(rng, {1, 2, 2, 2}, -1.0, 1.0, false);
  Tensor b = rand_tensor(rng, {1, 2, 3, 3}, -1.0, 1.0, false);
  FeatureMap fa = fmap(a, 16), fb = fmap(b, 16);
  CHECK_THROWS_AS(merge_levels(fa, fa, fb, p), ContractError);
}

TEST_CASE("hafs matches the straight-line reference in both modes") {
  Rng rng(821);
  for (int trial = 0; trial < 25; ++trial) {
    nn::ParamStore ps(970 + uint64_t(trial));
    int c = 1 + trial % 4;
    HafsParams p(ps, "hafs", c);
    randomize_bn(p.cbr_bn, rng);
    randomize_bn(p.dbr.bn, rng);
    Tensor gate = rand_tensor(rng, {2, c, 4, 4}, -1.0, 1.0, false);
    Tensor guide = rand_tensor(rng, {2, c, 4, 4}, -1.0, 1.0, false);

    bool training = trial % 2 == 0;
    FeatureMap out = hafs(fmap(gate, 16), fmap(guide, 16), p, training);
    CHECK(oracle::max_abs_diff(out.data.values(), oracle::hafs(gate, guide, p, training)) <= 1e-6);
  }
}

TEST_CASE("hafs with zero weights passes half the gate through") {
  // All conv weights zero => H = 0 and A = sigmoid(0) = 0.5, so F_o = gate/2.
  nn::ParamStore ps(981);
  HafsParams p(ps, "hafs", 3);
  for (Tensor w : {p.cbr_conv.w, p.dbr.dw.w, p.dbr.pw.w, p.attn_proj.w, p.attn_proj.b})
    std::fill_n(w.data(), w.numel(), 0.0);
  Rng rng(982);
  Tensor gate = rand_tensor(rng, {1, 3, 4, 4}, -1.0, 1.0, false);
  Tensor guide = rand_tensor(rng, {1, 3, 4, 4}, -1.0, 1.0, false);
  FeatureMap out = hafs(fmap(gate, 16), fmap(guide, 16), p, /*training=*/false);
  for (int i = 0; i < gate.numel(); ++i)
    CHECK(out.data.values()[size_t(i)] == doctest::Approx(0.5 * gate.values()[size_t(i)]).epsilon(1e-12));
}

TEST_CASE("hafs shape contract") {
  nn::ParamStore ps(983);
  HafsParams p(ps, "hafs", 2);
  Rng rng(984);
  Tensor a = rand_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0, false);
  Tensor b = rand_tensor(rng, {1, 2, 2, 2}, -1.0, 1.0, false);
  FeatureMap fa = fmap(a, 16), fb = fmap(b, 16);
  CHECK_THROWS_AS(hafs(fa, fb, p, false), ContractError);
}

namespace {

FeaturePyramid tiny_pyramid(Rng& rng, const BackboneConfig& cfg, Phase ph) {
  // hand-built pyramid at input_size 32: grids 16,8,4,2
  FeaturePyramid p;
  p.phase = ph;
  int g = 2;
  p.fused_high = fmap(rand_tensor(rng, {1, cfg.fused_channels, g, g}, -1.0, 1.0, false), 16, ph);
  p.levels[2] = fmap(rand_tensor(rng, {1, cfg.cnn_channels[0], g * 8, g * 8}, -1.0, 1.0, false), 2, ph);
  p.levels[4] = fmap(rand_tensor(rng, {1, cfg.cnn_channels[1], g * 4, g * 4}, -1.0, 1.0, false), 4, ph);
  p.levels[8] = fmap(rand_tensor(rng, {1, cfg.cnn_channels[2], g * 2, g * 2}, -1.0, 1.0, false), 8, ph);
  p.levels[16] = fmap(rand_tensor(rng, {1, cfg.cnn_channels[3], g, g}, -1.0, 1.0, false), 16, ph);
  return p;
}

BackboneConfig tiny_cfg() {
  BackboneConfig cfg;
  cfg.input_size = 32;
  cfg.vit_dim = 8;
  cfg.vit_depth = 1;
  cfg.vit_heads = 2;
  cfg.cnn_channels = {2, 3, 4, 4};
  cfg.fused_channels = 4;
  return cfg;
}

}  // namespace

TEST_CASE("dhfcm_forward: identical phases give an all-zero difference pyramid") {
  BackboneConfig cfg = tiny_cfg();
  nn::ParamStore ps(991);
  DhfcmParams params(ps, cfg, /*use_hafs=*/true);
  Rng rng(992);
  FeaturePyramid p1 = tiny_pyramid(rng, cfg, Phase::one);
  FeaturePyramid p2 = p1;
  p2.phase = Phase::two;
  for (auto& [s, m] : p2.levels) m.phase = Phase::two;
  p2.fused_high.phase = Phase::two;

  auto [r1, r2, diffs] = dhfcm_forward(p1, p2, params, /*training=*/false);
  for (int s : {2, 4, 8, 16}) {
    CHECK(diffs.levels.at(s).phase == Phase::diff);
    for (double v : diffs.levels.at(s).data.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("dhfcm_forward: swapping the phases leaves the differences unchanged") {
  BackboneConfig cfg = tiny_cfg();
  nn::ParamStore ps(993);
  DhfcmParams params(ps, cfg, true);
  Rng rng(994);
  FeaturePyramid p1 = tiny_pyramid(rng, cfg, Phase::one);
  FeaturePyramid p2 = tiny_pyramid(rng, cfg, Phase::two);

  auto [ra1, ra2, d12] = dhfcm_forward(p1, p2, params, false);
  auto [rb1, rb2, d21] = dhfcm_forward(p2, p1, params, false);
  for (int s : {2, 4, 8, 16})
    CHECK(oracle::max_abs_diff(d12.levels.at(s).data.values(), d21.levels.at(s).data.values()) <=
          1e-12);
  CHECK(oracle::max_abs_diff(ra1.data.values(), rb2.data.values()) <= 1e-12);
  CHECK(oracle::max_abs_diff(ra2.data.values(), rb1.data.values()) <= 1e-12);
}

TEST_CASE("dhfcm_forward without HAFS returns the merged maps unrefined") {
  BackboneConfig cfg = tiny_cfg();
  nn::ParamStore ps(995);
  DhfcmParams params(ps, cfg, /*use_hafs=*/false);
  CHECK(!params.hafs.has_value());
  Rng rng(996);
  FeaturePyramid p1 = tiny_pyramid(rng, cfg, Phase::one);
  FeaturePyramid p2 = tiny_pyramid(rng, cfg, Phase::two);

  auto [r1, r2, diffs] = dhfcm_forward(p1, p2, params, false);

  FeatureMap a1 = cross_attend(p1.fused_high, p1.levels.at(2), params.ca2);
  FeatureMap a2 = cross_attend(p1.fused_high, p1.levels.at(4), params.ca4);
  FeatureMap a3 = cross_attend(p1.fused_high, p1.levels.at(8), params.ca8);
  FeatureMap e1 = merge_levels(a1, a2, a3, params.merge);
  CHECK(oracle::max_abs_diff(r1.data.values(), e1.data.values()) <= 1e-12);

  // deep diff is |e1 - e2|, shallow diffs are raw level differences
  for (int s : {2, 4, 8}) {
    const auto& v1 = p1.levels.at(s).data.values();
    const auto& v2 = p2.levels.at(s).data.values();
    const auto& dv = diffs.levels.at(s).data.values();
    for (size_t i = 0; i < dv.size(); ++i)
      CHECK(dv[i] == doctest::Approx(std::abs(v1[i] - v2[i])).epsilon(1e-12));
  }
}

TEST_CASE("gradients flow through cross_attend, merge_levels and hafs") {
  nn::ParamStore ps(997);
  CrossAttendParams ca(ps, "ca", 2, 3, 2);
  MergeParams mg(ps, "merge", 2);
  HafsParams hf(ps, "hafs", 2);
  Rng rng(998);
  Tensor high = rand_tensor(rng, {1, 2, 2, 2});
  Tensor low = rand_tensor(rng, {1, 3, 3, 3});
  Tensor guide = rand_tensor(rng, {1, 2, 2, 2});
  std::vector<double> probe = testutil::rand_vec(rng, 8, 0.2, 1.0);

  auto make_loss = [&] {
    FeatureMap att = cross_attend(fmap(high, 16), fmap(low, 4), ca);
    FeatureMap merged = merge_levels(att, att, att, mg);
    FeatureMap refined = hafs(merged, fmap(guide, 16), hf, /*training=*/true);
    return ops::weighted_sum(refined.data, probe);
  };

  auto r = fd_check({high, low, guide, ca.wq.w, ca.wk.w, ca.wv.w, ca.wo.w, ca.wo.b, mg.dw.w,
                     mg.pw.w, hf.cbr_conv.w, hf.cbr_bn.gamma, hf.dbr.dw.w, hf.dbr.pw.w,
                     hf.dbr.bn.beta, hf.attn_proj.w, hf.attn_proj.b},
                    make_loss, 1e-3, 8);
  CHECK(r.max_rel <= 1e-4);
  CHECK(r.checked > 0);
}
