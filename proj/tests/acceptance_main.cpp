// Acceptance runner: exercises every advertised guarantee end to end and
// prints one PASS/FAIL line per check. Exits nonzero if any check fails.
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ha2f/dhfcm.hpp"
#include "ha2f/metrics.hpp"
#include "ha2f/nafrm.hpp"
#include "ha2f/ops.hpp"
#include "ha2f/trainer.hpp"
#include "oracles.hpp"
#include "testutil.hpp"

using namespace ha2f;
using testutil::fd_check;
using testutil::rand_tensor;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::printf("%s  %-18s %s\n", ok ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!ok) ++g_failures;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

std::string fmt(const char* f, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  return buf;
}

FeatureMap fmap(Tensor t, int scale, Phase ph = Phase::one) { return FeatureMap{t, scale, ph}; }

void randomize_bn(nn::BatchNorm2d& bn, Rng& rng) {
  for (double& v : *bn.running_mean) v = rng.uniform(-0.5, 0.5);
  for (double& v : *bn.running_var) v = rng.uniform(0.3, 1.6);
}

// flow values whose fractional part stays well clear of the bilinear cell
// boundaries, so finite differences never cross a kink
Tensor safe_flow(Rng& rng, const std::vector<int>& shape, bool requires_grad) {
  std::vector<double> v(size_t(shape_numel(shape)));
  for (double& x : v) {
    int k = int(rng.uniform(0.0, 3.0)) - 1;
    x = k + rng.uniform(0.15, 0.85);
  }
  return Tensor::from_vector(shape, v, requires_grad);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------

void check_equation_oracles() {
  Timer timer;
  double worst = 0.0;
  std::string worst_op = "none";
  auto track = [&](const char* op, double d) {
    if (d > worst) {
      worst = d;
      worst_op = op;
    }
  };

  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(4000 + uint64_t(trial));
    nn::ParamStore ps(4500 + uint64_t(trial));

    int cp = 2 + trial % 3, cs = 2 + (trial / 3) % 3, d = 2 + trial % 4;
    CrossAttendParams ca(ps, "ca", cp, cs, d);
    Tensor high = rand_tensor(rng, {2, cp, 2, 2}, -1.0, 1.0, false);
    Tensor low = rand_tensor(rng, {2, cs, 4, 4}, -1.0, 1.0, false);
    FeatureMap att = cross_attend(fmap(high, 16), fmap(low, 4), ca);
    track("cross_attend", testutil::max_abs_diff(att.data.values(), oracle::cross_attend(high, low, ca)));

    int c = 1 + trial % 4;
    MergeParams mg(ps, "merge", c);
    Tensor a1 = rand_tensor(rng, {2, c, 3, 3}, -1.0, 1.0, false);
    Tensor a2 = rand_tensor(rng, {2, c, 3, 3}, -1.0, 1.0, false);
    Tensor a3 = rand_tensor(rng, {2, c, 3, 3}, -1.0, 1.0, false);
    FeatureMap merged = merge_levels(fmap(a1, 16), fmap(a2, 16), fmap(a3, 16), mg);
    track("merge_levels", testutil::max_abs_diff(merged.data.values(), oracle::merge_levels(a1, a2, a3, mg)));

    HafsParams hf(ps, "hafs", c);
    randomize_bn(hf.cbr_bn, rng);
    randomize_bn(hf.dbr.bn, rng);
    Tensor gate = rand_tensor(rng, {2, c, 4, 4}, -1.0, 1.0, false);
    Tensor guide = rand_tensor(rng, {2, c, 4, 4}, -1.0, 1.0, false);
    bool training = trial % 2 == 0;
    FeatureMap sel = hafs(fmap(gate, 16), fmap(guide, 16), hf, training);
    track("hafs", testutil::max_abs_diff(sel.data.values(), oracle::hafs(gate, guide, hf, training)));

    NafrmParams np(ps, "nafrm", cs, cp, NafrmToggles{true, true});
    Tensor nl = rand_tensor(rng, {2, cs, 2, 2}, -1.0, 1.0, false);
    Tensor nh = rand_tensor(rng, {2, cp, 4, 4}, -1.0, 1.0, false);
    BiasField field = gen_bias_field(fmap(nl, 16, Phase::diff), fmap(nh, 8, Phase::diff), np);
    track("gen_bias_field", testutil::max_abs_diff(field.data.values(), oracle::gen_bias_field(nl, nh, np)));

    Tensor wx = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0, false);
    Tensor wf = rand_tensor(rng, {2, 2, 4, 4}, -2.0, 2.0, false);
    Tensor warped = ops::warp(wx, wf);
    track("warp", testutil::max_abs_diff(warped.values(), oracle::warp(wx.values(), oracle::dims_of(wx), wf.values())));

    DfsmParams df(ps, "dfsm", 1 + trial % 5);
    Tensor wl = rand_tensor(rng, {2, 1 + trial % 5, 4, 4}, -1.0, 1.0, false);
    Tensor wh = rand_tensor(rng, {2, 1 + trial % 5, 4, 4}, -1.0, 1.0, false);
    track("dfsm", testutil::max_abs_diff(dfsm(wl, wh, df).values(), oracle::dfsm(wl, wh, df)));
  }

  double secs = timer.secs();
  bool ok = worst <= 1e-6 && secs < 30.0;
  report("equation oracles", ok,
         fmt("6 ops x 100 trials vs straight-line references, max |diff| %.2e (worst: %s), %.1fs",
             worst, worst_op.c_str(), secs));
}

void check_gradients() {
  Timer timer;
  double worst = 0.0;
  long checked = 0;
  auto track = [&](testutil::FdResult r) {
    worst = std::max(worst, r.max_rel);
    checked += r.checked;
  };

  {
    nn::ParamStore ps(4601);
    HafsParams hf(ps, "hafs", 2);
    Rng rng(4602);
    Tensor gate = rand_tensor(rng, {1, 2, 4, 4});
    Tensor guide = rand_tensor(rng, {1, 2, 4, 4});
    std::vector<double> probe = testutil::rand_vec(rng, gate.numel(), 0.2, 1.0);
    track(fd_check({gate, guide, hf.cbr_conv.w, hf.cbr_bn.gamma, hf.dbr.dw.w, hf.dbr.pw.w,
                    hf.attn_proj.w, hf.attn_proj.b},
                   [&] { return ops::weighted_sum(hafs(fmap(gate, 16), fmap(guide, 16), hf, true).data, probe); },
                   1e-3, 8));
  }
  {
    nn::ParamStore ps(4611);
    CrossAttendParams ca(ps, "ca", 2, 3, 4);
    Rng rng(4612);
    Tensor high = rand_tensor(rng, {1, 2, 2, 2});
    Tensor low = rand_tensor(rng, {1, 3, 3, 3});
    std::vector<double> probe = testutil::rand_vec(rng, high.numel(), 0.2, 1.0);
    track(fd_check({high, low, ca.wq.w, ca.wk.w, ca.wv.w, ca.wo.w, ca.wo.b},
                   [&] { return ops::weighted_sum(cross_attend(fmap(high, 16), fmap(low, 4), ca).data, probe); },
                   1e-3, 8));
  }
  {
    Rng rng(4621);
    Tensor x = rand_tensor(rng, {1, 2, 4, 4});
    Tensor flow = safe_flow(rng, {1, 2, 4, 4}, true);
    std::vector<double> probe = testutil::rand_vec(rng, x.numel(), 0.2, 1.0);
    track(fd_check({x, flow}, [&] { return ops::weighted_sum(ops::warp(x, flow), probe); }, 1e-3, 16));
  }
  {
    nn::ParamStore ps(4631);
    DfsmParams df(ps, "dfsm", 3);
    Rng rng(4632);
    Tensor wl = rand_tensor(rng, {1, 3, 4, 4});
    Tensor wh = rand_tensor(rng, {1, 3, 4, 4});
    std::vector<double> probe = testutil::rand_vec(rng, wl.numel(), 0.2, 1.0);
    track(fd_check({wl, wh, df.mlp1.w, df.mlp1.b, df.mlp2.w, df.conv7.w, df.conv7.b},
                   [&] { return ops::weighted_sum(dfsm(wl, wh, df), probe); }, 1e-3, 8));
  }
  {
    nn::ParamStore ps(4641);
    VitBlockParams blk(ps, "blk", 8, 2);
    Rng rng(4642);
    Tensor tokens = rand_tensor(rng, {1, 4, 8});
    std::vector<double> probe = testutil::rand_vec(rng, tokens.numel(), 0.2, 1.0);
    track(fd_check({tokens, blk.wq.w, blk.wk.w, blk.wv.w, blk.wo.w, blk.ffn1.w, blk.ffn2.w,
                    blk.ln1.gamma, blk.ln2.beta},
                   [&] { return ops::weighted_sum(vit_block(tokens, blk), probe); }, 1e-3, 8));
  }

  double secs = timer.secs();
  bool ok = worst <= 1e-4 && secs < 120.0;
  report("gradient checks", ok,
         fmt("hafs/cross_attend/warp/dfsm/vit_block vs central differences (step 1e-3), "
             "%ld probes, max rel err %.2e, %.1fs",
             checked, worst, secs));
}

void check_warp_identities() {
  Rng rng(4701);
  double zero_diff = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0, false);
    Tensor flow = Tensor::zeros({2, 2, 4, 4});
    zero_diff = std::max(zero_diff, testutil::max_abs_diff(ops::warp(x, flow).values(), x.values()));
  }

  // constant integer flow must equal a clamped index shift, bit for bit
  double shift_diff = 0.0;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      Tensor x = rand_tensor(rng, {1, 2, 4, 4}, -1.0, 1.0, false);
      std::vector<double> fv(size_t(2 * 16));
      for (size_t i = 0; i < 16; ++i) fv[i] = dx;
      for (size_t i = 16; i < 32; ++i) fv[i] = dy;
      Tensor flow = Tensor::from_vector({1, 2, 4, 4}, fv);
      Tensor out = ops::warp(x, flow);
      for (int c = 0; c < 2; ++c) {
        for (int y = 0; y < 4; ++y) {
          for (int xx = 0; xx < 4; ++xx) {
            int sy = std::clamp(y + dy, 0, 3), sx = std::clamp(xx + dx, 0, 3);
            double want = x.values()[size_t((c * 4 + sy) * 4 + sx)];
            double got = out.values()[size_t((c * 4 + y) * 4 + xx)];
            shift_diff = std::max(shift_diff, std::abs(got - want));
          }
        }
      }
    }
  }

  bool ok = zero_diff <= 1e-6 && shift_diff == 0.0;
  report("warp identities", ok,
         fmt("zero-field |diff| %.2e, integer shifts vs index oracle |diff| %.2e (exact)",
             zero_diff, shift_diff));
}

void check_metrics() {
  Rng rng(4801);
  double worst = 0.0, identity = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    int h = 3 + int(rng.uniform(0.0, 10.0)), w = 3 + int(rng.uniform(0.0, 10.0));
    BinaryMask pred{h, w, {}}, gt{h, w, {}};
    pred.v.resize(size_t(h) * w);
    gt.v.resize(size_t(h) * w);
    for (auto& p : pred.v) p = rng.uniform(0.0, 1.0) < 0.5 ? 0 : 1;
    for (auto& g : gt.v) g = rng.uniform(0.0, 1.0) < 0.5 ? 0 : 1;

    ConfusionCounts counts;
    accumulate(pred, gt, counts);
    Scores s = scores(counts);

    long long tp = 0, tn = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
      if (pred.v[i] && gt.v[i]) ++tp;
      else if (pred.v[i]) ++fp;
      else if (gt.v[i]) ++fn;
      else ++tn;
    }
    auto ratio = [](long long a, long long b) { return b == 0 ? 0.0 : double(a) / double(b); };
    worst = std::max(worst, std::abs(s.precision - ratio(tp, tp + fp)));
    worst = std::max(worst, std::abs(s.recall - ratio(tp, tp + fn)));
    worst = std::max(worst, std::abs(s.oa - ratio(tp + tn, tp + tn + fp + fn)));
    worst = std::max(worst, std::abs(s.f1 - ratio(2 * tp, 2 * tp + fp + fn)));
    worst = std::max(worst, std::abs(s.iou - ratio(tp, tp + fp + fn)));
    identity = std::max(identity, std::abs(s.f1 - 2.0 * s.iou / (1.0 + s.iou)));
  }

  ConfusionCounts hand{3, 11, 1, 1};
  Scores hs = scores(hand);
  bool hand_ok = hs.precision == 0.75 && hs.recall == 0.75 && hs.f1 == 0.75 && hs.oa == 0.875 &&
                 hs.iou == 0.6;

  bool ok = worst <= 1e-12 && identity <= 1e-12 && hand_ok;
  report("metrics oracle", ok,
         fmt("50 random masks vs pixel counts |diff| %.2e, F1=2*IoU/(1+IoU) |diff| %.2e, "
             "hand case tp=3 fp=1 fn=1 tn=11 %s",
             worst, identity, hand_ok ? "exact" : "WRONG"));
}

void check_schedule() {
  TrainConfig tc;  // lr0 2e-4, poly power 0.9, max_steps 2000
  auto rel = [](double got, double want) {
    return std::abs(got - want) / std::max(1e-30, std::abs(want));
  };
  double start = poly_lr(0, tc);
  double end = poly_lr(tc.max_steps, tc);
  double mid = poly_lr(tc.max_steps / 2, tc);
  double mid_want = 2e-4 * std::pow(0.5, 0.9);

  bool ok = rel(start, 2e-4) <= 1e-12 && end == 0.0 && rel(mid, mid_want) <= 1e-12;
  report("lr schedule", ok,
         fmt("poly_lr start %.6e end %.1e midpoint %.10e (want %.10e)", start, end, mid, mid_want));
}

void check_overfit() {
  Timer timer;
  SynthConfig sc;
  sc.size = 64;
  sc.noise_sigma = 0.01;
  sc.shift_px = 1;
  sc.seed = 11;
  std::vector<ImagePair> train;
  for (int i = 0; i < 16; ++i) train.push_back(synth_pair(sc, i));

  BackboneConfig bb;
  bb.seed = 21;
  TrainConfig tc;
  tc.batch_size = 4;
  tc.lr0 = 4e-4;
  tc.max_steps = 2000;
  tc.eval_every = 50;
  tc.augment = false;
  tc.seed = 31;

  Ha2fNet net(bb, tc.ablation);
  Trainer trainer(net, tc);
  CheckpointRecord best = trainer.fit(train, train);

  double secs = timer.secs();
  bool ok = best.val_scores.f1 >= 0.95 && secs < 600.0;
  report("overfit sanity", ok,
         fmt("16 synthetic 64x64 pairs, 2000 steps: train-split F1 %.4f at step %ld (need >= 0.95), %.0fs",
             best.val_scores.f1, best.step, secs));
}

void check_ablation() {
  Timer timer;
  SynthConfig sc;
  sc.size = 32;
  sc.n_objects_min = 2;
  sc.n_objects_max = 4;
  sc.seed = 9;
  std::vector<ImagePair> train, val, test;
  for (int i = 0; i < 8; ++i) train.push_back(synth_pair(sc, i));
  for (int i = 8; i < 10; ++i) val.push_back(synth_pair(sc, i));
  for (int i = 10; i < 12; ++i) test.push_back(synth_pair(sc, i));

  BackboneConfig bb;
  bb.input_size = 32;
  bb.vit_dim = 8;
  bb.vit_depth = 1;
  bb.vit_heads = 2;
  bb.cnn_channels = {2, 3, 4, 4};
  bb.fused_channels = 4;
  bb.seed = 5;
  TrainConfig tc;
  tc.batch_size = 2;
  tc.max_steps = 300;
  tc.eval_every = 100;
  tc.augment = false;
  tc.seed = 17;

  std::vector<AblationRow> rows = run_ablation(bb, tc, train, val, test);

  bool finite = rows.size() == 8;
  for (const AblationRow& r : rows)
    for (double v : {r.test_scores.precision, r.test_scores.recall, r.test_scores.oa,
                     r.test_scores.f1, r.test_scores.iou})
      finite = finite && std::isfinite(v);

  // params must grow whenever one row's toggles dominate another's
  auto leq = [](const AblationToggles& a, const AblationToggles& b) {
    return a.hafs <= b.hafs && a.sat <= b.sat && a.dfsm <= b.dfsm;
  };
  auto eq = [](const AblationToggles& a, const AblationToggles& b) {
    return a.hafs == b.hafs && a.sat == b.sat && a.dfsm == b.dfsm;
  };
  bool monotone = true;
  for (const AblationRow& a : rows)
    for (const AblationRow& b : rows)
      if (leq(a.toggles, b.toggles) && !eq(a.toggles, b.toggles))
        monotone = monotone && a.param_count < b.param_count;

  bool ok = finite && monotone;
  report("ablation grid", ok,
         fmt("8 toggle rows x 300 steps: scores %s, params %lld..%lld strictly grow per toggle (%s), %.0fs",
             finite ? "finite" : "NON-FINITE", rows.empty() ? 0 : rows.front().param_count,
             rows.empty() ? 0 : rows.back().param_count, monotone ? "yes" : "NO", timer.secs()));
}

void check_determinism() {
  // rerunning a command with the same seed must reproduce its artifacts bitwise
  fs::path root = fs::temp_directory_path() / "ha2f_acceptance_det";
  fs::remove_all(root);
  fs::create_directories(root);

  fs::path cfg = root / "config.json";
  {
    std::ofstream out(cfg);
    out << "{\n"
           "  \"seed\": 13,\n"
           "  \"output_dir\": \"" << (root / "out").string() << "\",\n"
           "  \"backbone\": {\"input_size\": 32, \"vit_dim\": 8, \"vit_depth\": 1,\n"
           "               \"vit_heads\": 2, \"cnn_channels\": [2, 3, 4, 4], \"fused_channels\": 4},\n"
           "  \"train\": {\"batch_size\": 2, \"max_steps\": 6, \"eval_every\": 3, \"augment\": false},\n"
           "  \"data\": {\"synth\": {\"size\": 32, \"n_objects\": [2, 4], \"counts\": [4, 2, 2]}}\n"
           "}\n";
  }
  auto run = [&](const std::string& args) {
    std::string cmd = std::string(HA2F_BIN_PATH) + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  auto tree_bytes = [&](const fs::path& dir) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
      if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::string all;
    for (const fs::path& f : files) {
      all += fs::relative(f, dir).string();
      all += '\0';
      all += slurp(f);
    }
    return all;
  };

  bool ran = true;
  std::string corpus[2], log[2], ckpt[2];
  for (int i = 0; i < 2; ++i) {
    fs::remove_all(root / "out");
    ran = ran && run("synth --config " + cfg.string());
    corpus[i] = tree_bytes(root / "out" / "data");
    ran = ran && run("train --config " + cfg.string());
    log[i] = slurp(root / "out" / "metrics.ndjson");
    ckpt[i] = slurp(root / "out" / "best.ckpt");
  }
  bool corpus_ok = !corpus[0].empty() && corpus[0] == corpus[1];
  bool log_ok = !log[0].empty() && log[0] == log[1];
  bool ckpt_ok = !ckpt[0].empty() && ckpt[0] == ckpt[1];

  fs::remove_all(root);
  bool ok = ran && corpus_ok && log_ok && ckpt_ok;
  report("determinism", ok,
         fmt("rerun with identical seeds: corpora %s, metric logs %s, checkpoints %s",
             corpus_ok ? "byte-identical" : "DIFFER", log_ok ? "identical" : "DIFFER",
             ckpt_ok ? "byte-identical" : "DIFFER"));
}

void check_error_map() {
  BinaryMask pred{2, 2, {1, 1, 0, 0}};
  BinaryMask gt{2, 2, {1, 0, 1, 0}};
  RgbImage img = render_error_map(pred, gt);
  const uint8_t want[12] = {255, 255, 255,  // TP white
                            255, 0,   0,    // FP red
                            0,   255, 0,    // FN green
                            0,   0,   0};   // TN black
  bool ok = img.h == 2 && img.w == 2 && img.v.size() == 12;
  for (int i = 0; ok && i < 12; ++i) ok = img.v[size_t(i)] == want[i];
  report("error-map colors", ok, "2x2 truth table renders TP white, FP red, FN green, TN black");
}

}  // namespace

int main() {
  std::printf("acceptance checks\n=================\n");
  check_equation_oracles();
  check_gradients();
  check_warp_identities();
  check_metrics();
  check_schedule();
  check_error_map();
  check_ablation();
  check_determinism();
  check_overfit();
  std::printf("=================\n%s (%d failure%s)\n", g_failures == 0 ? "ALL CHECKS PASSED" : "CHECKS FAILED",
              g_failures, g_failures == 1 ? "" : "s");
  return g_failures == 0 ? 0 : 1;
}
