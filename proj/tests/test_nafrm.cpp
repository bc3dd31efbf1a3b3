#include <algorithm>
#include <cmath>

#include "doctest.h"

#include "ha2f/errors.hpp"
#include "ha2f/nafrm.hpp"
#include "ha2f/nn.hpp"
#include "ha2f/ops.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace ha2f;
using testutil::fd_check;
using testutil::rand_tensor;

namespace {

FeatureMap fmap(Tensor t, int scale, Phase ph = Phase::diff) { return FeatureMap{t, scale, ph}; }

const NafrmToggles kAllOn{true, true};

}  // namespace

TEST_CASE("gen_bias_field matches the straight-line reference") {
  Rng rng(501);
  for (int trial = 0; trial < 25; ++trial) {
    nn::ParamStore ps(550 + uint64_t(trial));
    int cl = 1 + trial % 3, ch = 1 + (trial / 3) % 3;
    NafrmParams p(ps, "nafrm", cl, ch, kAllOn);
    Tensor low = rand_tensor(rng, {2, cl, 2, 2}, -1.0, 1.0, false);
    Tensor high = rand_tensor(rng, {2, ch, 4, 4}, -1.0, 1.0, false);
    BiasField f = gen_bias_field(fmap(low, 16), fmap(high, 8), p);
    CHECK(f.data.shape() == std::vector<int>{2, 4, 4, 4});
    CHECK(oracle::max_abs_diff(f.data.values(), oracle::gen_bias_field(low, high, p)) <= 1e-6);
  }
}

TEST_CASE("gen_bias_field contracts") {
  nn::ParamStore ps(561);
  NafrmParams p(ps, "nafrm", 2, 3, kAllOn);
  Rng rng(562);
  Tensor low = rand_tensor(rng, {1, 2, 2, 2}, -1.0, 1.0, false);
  Tensor high = rand_tensor(rng, {1, 3, 4, 4}, -1.0, 1.0, false);

  FeatureMap wrong_low = fmap(low, 4), high8 = fmap(high, 8);
  CHECK_THROWS_AS(gen_bias_field(wrong_low, high8, p), ContractError);

  NafrmParams no_sat(ps, "nafrm_nosat", 2, 3, NafrmToggles{false, true});
  FeatureMap low16 = fmap(low, 16);
  CHECK_THROWS_AS(gen_bias_field(low16, high8, no_sat), ContractError);
}

TEST_CASE("gen_bias_field with zero conv weights is the zero field") {
  nn::ParamStore ps(563);
  NafrmParams p(ps, "nafrm", 2, 3, kAllOn);
  std::fill_n(p.bias_conv->w.data(), p.bias_conv->w.numel(), 0.0);
  std::fill_n(p.bias_conv->b.data(), p.bias_conv->b.numel(), 0.0);
  Rng rng(564);
  Tensor low = rand_tensor(rng, {1, 2, 2, 2}, -1.0, 1.0, false);
  Tensor high = rand_tensor(rng, {1, 3, 4, 4}, -1.0, 1.0, false);
  BiasField f = gen_bias_field(fmap(low, 16), fmap(high, 8), p);
  for (double v : f.data.values()) CHECK(v == 0.0);
}

TEST_CASE("dfsm matches the straight-line reference") {
  Rng rng(571);
  for (int trial = 0; trial < 25; ++trial) {
    nn::ParamStore ps(580 + uint64_t(trial));
    int c = 1 + trial % 5;
    DfsmParams p(ps, "dfsm", c);
    Tensor wl = rand_tensor(rng, {2, c, 4, 4}, -1.0, 1.0, false);
    Tensor wh = rand_tensor(rng, {2, c, 4, 4}, -1.0, 1.0, false);
    Tensor out = dfsm(wl, wh, p);
    CHECK(oracle::max_abs_diff(out.values(), oracle::dfsm(wl, wh, p)) <= 1e-6);
  }

  nn::ParamStore ps(590);
  DfsmParams p(ps, "dfsm", 2);
  Tensor a = Tensor::zeros({1, 2, 2, 2});
  Tensor b = Tensor::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(dfsm(a, b, p), ContractError);
}

TEST_CASE("dfsm output is the fused map shrunk by gates in (0,1)") {
  nn::ParamStore ps(591);
  DfsmParams p(ps, "dfsm", 3);
  Rng rng(592);
  Tensor wl = rand_tensor(rng, {1, 3, 4, 4}, 0.1, 1.0, false);
  Tensor wh = rand_tensor(rng, {1, 3, 4, 4}, 0.1, 1.0, false);
  Tensor out = dfsm(wl, wh, p);
  for (int i = 0; i < out.numel(); ++i) {
    double fused = wl.values()[size_t(i)] + wh.values()[size_t(i)];
    CHECK(out.values()[size_t(i)] > 0.0);
    CHECK(out.values()[size_t(i)] < fused);  // both sigmoid gates are strictly < 1
  }
}

TEST_CASE("warp on a ramp interpolates and clamps at the edge") {
  // row [0,1,2,3] shifted by dx=+0.5 -> [0.5,1.5,2.5,3] (last tap clamps)
  Tensor x = Tensor::from_vector({1, 1, 1, 4}, {0, 1, 2, 3});
  Tensor flow = Tensor::from_vector({1, 2, 1, 4}, {0.5, 0.5, 0.5, 0.5, 0, 0, 0, 0});
  Tensor out = ops::warp(x, flow);
  CHECK(out.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out.values()[1] == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(out.values()[2] == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(out.values()[3] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("warp matches the straight-line reference") {
  Rng rng(593);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0, false);
    Tensor flow = rand_tensor(rng, {2, 2, 4, 4}, -2.0, 2.0, false);
    Tensor out = ops::warp(x, flow);
    CHECK(oracle::max_abs_diff(out.values(),
                               oracle::warp(x.values(), oracle::dims_of(x), flow.values())) <= 1e-6);
  }
}

TEST_CASE("nafrm_forward with all toggles off is upsample-and-add") {
  NafrmToggles off{false, false};
  nn::ParamStore ps(594);
  NafrmParams p(ps, "nafrm", 3, 2, off);
  CHECK(!p.bias_conv.has_value());
  CHECK(!p.dfsm.has_value());
  Rng rng(595);
  Tensor low = rand_tensor(rng, {1, 3, 2, 2}, -1.0, 1.0, false);
  Tensor high = rand_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0, false);

  FeatureMap out = nafrm_forward(fmap(low, 16), fmap(high, 8), p, off);
  CHECK(out.scale == 8);

  Tensor expect = ops::add(ops::bilinear_up2(p.adjust.forward(low)), high);
  CHECK(oracle::max_abs_diff(out.data.values(), expect.values()) <= 1e-12);
}

TEST_CASE("nafrm_forward with a zero bias field equals the SAT-off path") {
  // zero displacement field => warps are identities
  NafrmToggles sat_only{true, false};
  nn::ParamStore ps(596);
  NafrmParams p(ps, "nafrm", 3, 2, sat_only);
  std::fill_n(p.bias_conv->w.data(), p.bias_conv->w.numel(), 0.0);
  std::fill_n(p.bias_conv->b.data(), p.bias_conv->b.numel(), 0.0);
  Rng rng(597);
  Tensor low = rand_tensor(rng, {1, 3, 2, 2}, -1.0, 1.0, false);
  Tensor high = rand_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0, false);

  FeatureMap out = nafrm_forward(fmap(low, 16), fmap(high, 8), p, sat_only);
  Tensor expect = ops::add(ops::bilinear_up2(p.adjust.forward(low)), high);
  CHECK(oracle::max_abs_diff(out.data.values(), expect.values()) <= 1e-9);
}

TEST_CASE("nafrm_forward full path matches a straight-line composition") {
  Rng rng(601);
  for (int trial = 0; trial < 10; ++trial) {
    nn::ParamStore ps(610 + uint64_t(trial));
    int cl = 1 + trial % 3, ch = 1 + (trial / 2) % 3;
    NafrmParams p(ps, "nafrm", cl, ch, kAllOn);
    // keep displacements sub-pixel so reference and implementation sample identically
    for (Tensor t : {p.bias_conv->w, p.bias_conv->b}) {
      double* d = t.data();
      for (int i = 0; i < t.numel(); ++i) d[i] *= 0.05;
    }
    Tensor low = rand_tensor(rng, {1, cl, 2, 2}, -1.0, 1.0, false);
    Tensor high = rand_tensor(rng, {1, ch, 4, 4}, -1.0, 1.0, false);

    FeatureMap out = nafrm_forward(fmap(low, 16), fmap(high, 8), p, kAllOn);

    oracle::Dims dl = oracle::dims_of(low);
    oracle::Dims dadj;
    auto adj = oracle::conv2d(low.values(), dl, p.adjust.w.values(), ch, 1, 1, 0, 1,
                              p.adjust.b.values(), &dadj);
    oracle::Dims dup;
    auto low_up = oracle::bilinear_up2(adj, dadj, &dup);
    auto field = oracle::gen_bias_field(low, high, p);

    oracle::Dims dh = oracle::dims_of(high);
    size_t plane = size_t(dh.h) * dh.w;
    std::vector<double> fh(field.begin(), field.begin() + 2 * plane);
    std::vector<double> fl(field.begin() + 2 * plane, field.begin() + 4 * plane);
    auto wh = oracle::warp(high.values(), dh, fh);
    auto wl = oracle::warp(low_up, dup, fl);

    Tensor twl = Tensor::from_vector({1, ch, 4, 4}, wl);
    Tensor twh = Tensor::from_vector({1, ch, 4, 4}, wh);
    auto expect = oracle::dfsm(twl, twh, *p.dfsm);
    CHECK(oracle::max_abs_diff(out.data.values(), expect) <= 1e-6);
  }
}

TEST_CASE("gradients flow through the full nafrm path") {
  nn::ParamStore ps(621);
  NafrmParams p(ps, "nafrm", 2, 2, kAllOn);
  // sub-pixel displacements keep FD away from the bilinear lattice kinks
  for (Tensor t : {p.bias_conv->w, p.bias_conv->b}) {
    double* d = t.data();
    for (int i = 0; i < t.numel(); ++i) d[i] *= 0.05;
  }
  Rng rng(622);
  Tensor low = rand_tensor(rng, {1, 2, 2, 2});
  Tensor high = rand_tensor(rng, {1, 2, 4, 4});
  std::vector<double> probe = testutil::rand_vec(rng, 32, 0.2, 1.0);

  auto make_loss = [&] {
    FeatureMap out = nafrm_forward(fmap(low, 16), fmap(high, 8), p, kAllOn);
    return ops::weighted_sum(out.data, probe);
  };
  auto r = fd_check({low, high, p.adjust.w, p.adjust.b, p.bias_conv->w, p.bias_conv->b,
                     p.dfsm->mlp1.w, p.dfsm->mlp2.b, p.dfsm->conv7.w, p.dfsm->conv7.b},
                    make_loss, 1e-3, 8);
  CHECK(r.max_rel <= 1e-4);
  CHECK(r.checked > 0);
}
