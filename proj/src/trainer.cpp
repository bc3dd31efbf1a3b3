#include "ha2f/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include <nlohmann/json.hpp>

#include "ha2f/errors.hpp"

namespace ha2f {

void TrainConfig::validate() const {
  if (batch_size <= 0) throw ConfigError("batch_size must be > 0");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
  if (!(poly_power > 0.0)) throw ConfigError("poly_power must be > 0");
  if (max_steps <= 0) throw ConfigError("max_steps must be > 0");
  if (eval_every <= 0 || eval_every > max_steps)
    throw ConfigError("eval_every must be in [1, max_steps]");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("betas must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (lambda_bce < 0.0 || lambda_dice < 0.0) throw ConfigError("loss weights must be >= 0");
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("threshold must be in (0, 1)");
}

double poly_lr(long step, const TrainConfig& cfg) {
  if (step < 0 || step > cfg.max_steps)
    throw ContractError("poly_lr: step " + std::to_string(step) + " outside [0, " +
                        std::to_string(cfg.max_steps) + "]");
  return cfg.lr0 * std::pow(1.0 - double(step) / double(cfg.max_steps), cfg.poly_power);
}

Adam::Adam(nn::ParamStore& store, const TrainConfig& cfg)
    : store_(store), beta1_(cfg.beta1), beta2_(cfg.beta2), weight_decay_(cfg.weight_decay) {
  for (const auto& [name, p] : store.params()) {
    m_[name].assign(size_t(p.numel()), 0.0);
    v_[name].assign(size_t(p.numel()), 0.0);
  }
}

void Adam::step(double lr) {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, double(t_));
  double bc2 = 1.0 - std::pow(beta2_, double(t_));
  for (auto& [name, p] : store_.params()) {
    auto& m = m_.at(name);
    auto& v = v_.at(name);
    const std::vector<double>& g = p.grad();
    double* x = p.data();
    for (size_t i = 0; i < m.size(); ++i) {
      double gi = i < g.size() ? g[i] : 0.0;
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
      double mhat = m[i] / bc1, vhat = v[i] / bc2;
      x[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * x[i]);
    }
  }
}

Tensor images_to_tensor(const std::vector<const Image*>& imgs) {
  int n = int(imgs.size());
  int c = imgs[0]->c, h = imgs[0]->h, w = imgs[0]->w;
  std::vector<double> out;
  out.reserve(size_t(n) * c * h * w);
  for (const Image* im : imgs) {
    if (im->c != c || im->h != h || im->w != w) throw ContractError("batch images disagree in size");
    out.insert(out.end(), im->v.begin(), im->v.end());
  }
  return Tensor::from_vector({n, c, h, w}, std::move(out));
}

Tensor labels_to_tensor(const std::vector<const BinaryMask*>& masks) {
  int n = int(masks.size());
  int h = masks[0]->h, w = masks[0]->w;
  std::vector<double> out;
  out.reserve(size_t(n) * h * w);
  for (const BinaryMask* m : masks) {
    if (m->h != h || m->w != w) throw ContractError("batch labels disagree in size");
    for (uint8_t b : m->v) out.push_back(b ? 1.0 : 0.0);
  }
  return Tensor::from_vector({n, 1, h, w}, std::move(out));
}

Trainer::Trainer(Ha2fNet& net, const TrainConfig& cfg)
    : net_(net), cfg_(cfg), opt_(net.store(), cfg), batch_rng_(derive_seed(cfg.seed, "batches")) {
  cfg_.validate();
}

double Trainer::train_step(const std::vector<ImagePair>& train) {
  if (train.empty()) throw ContractError("train split is empty");
  double lr = poly_lr(step_, cfg_);

  std::vector<ImagePair> holder;
  std::vector<const ImagePair*> batch;
  holder.reserve(size_t(cfg_.batch_size));
  batch.reserve(size_t(cfg_.batch_size));
  for (int i = 0; i < cfg_.batch_size; ++i) {
    const ImagePair& src = train[size_t(batch_rng_.uniform_int(0, int(train.size()) - 1))];
    if (cfg_.augment) {
      int crop = std::max(1, src.a.h * 7 / 8);
      holder.push_back(
          augment(src, derive_seed(cfg_.seed, "augment", uint64_t(step_) * cfg_.batch_size + i), crop));
      batch.push_back(&holder.back());
    } else {
      batch.push_back(&src);
    }
  }

  std::vector<const Image*> as, bs;
  std::vector<const BinaryMask*> ls;
  for (const ImagePair* p : batch) {
    as.push_back(&p->a);
    bs.push_back(&p->b);
    ls.push_back(&p->label);
  }
  Tensor img1 = images_to_tensor(as), img2 = images_to_tensor(bs), label = labels_to_tensor(ls);

  Tensor logits = net_.forward_logits(img1, img2, /*training=*/true);
  Tensor l = loss(logits, label, cfg_.lambda_bce, cfg_.lambda_dice);
  double lv = l.item();
  if (!std::isfinite(lv))
    throw NumericError("non-finite loss at step " + std::to_string(step_) + " (lr=" +
                       std::to_string(lr) + ", loss=" + std::to_string(lv) + ")");

  net_.store().zero_grads();
  l.backward();
  opt_.step(lr);
  ++step_;
  last_lr_ = lr;
  return lv;
}

Scores Trainer::evaluate(const std::vector<ImagePair>& split) {
  if (split.empty()) throw ContractError("evaluation split is empty");
  ConfusionCounts counts;
  for (const ImagePair& pair : split) {
    Tensor a = images_to_tensor({&pair.a}), b = images_to_tensor({&pair.b});
    Tensor logits = net_.forward_logits(a, b, /*training=*/false);
    ChangeMap cm = classify(logits, cfg_.threshold);
    accumulate(cm.mask, pair.label, counts);
  }
  return scores(counts);
}

CheckpointRecord Trainer::fit(const std::vector<ImagePair>& train,
                              const std::vector<ImagePair>& val, std::ostream* log) {
  if (train.empty() || val.empty()) throw ContractError("fit requires nonempty train and val splits");
  CheckpointRecord best;
  bool have_best = false;

  while (step_ < cfg_.max_steps) {
    double lv = train_step(train);
    if (step_ % cfg_.eval_every != 0) continue;

    Scores s = evaluate(val);
    if (log) {
      nlohmann::ordered_json rec;
      rec["step"] = step_;
      rec["lr"] = last_lr_;
      rec["loss"] = lv;
      rec["val"] = {{"p", s.precision}, {"r", s.recall}, {"oa", s.oa}, {"f1", s.f1}, {"iou", s.iou}};
      *log << rec.dump() << "\n";
    }
    if (!have_best || s.f1 > best.val_scores.f1 ||
        (s.f1 == best.val_scores.f1 && s.iou > best.val_scores.iou)) {
      best.step = step_;
      best.params = net_.snapshot();
      best.val_scores = s;
      best.is_best = true;
      have_best = true;
    }
  }
  return best;
}

std::vector<AblationToggles> ablation_grid() {
  return {
      {false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
      {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true},
  };
}

std::vector<AblationRow> run_ablation(const BackboneConfig& bb, const TrainConfig& tc,
                                      const std::vector<ImagePair>& train,
                                      const std::vector<ImagePair>& val,
                                      const std::vector<ImagePair>& test,
                                      std::ostream* progress) {
  std::vector<AblationRow> rows;
  for (const AblationToggles& t : ablation_grid()) {
    TrainConfig row_cfg = tc;
    row_cfg.ablation = t;
    Ha2fNet net(bb, t);
    Trainer trainer(net, row_cfg);
    CheckpointRecord best = trainer.fit(train, val, nullptr);
    net.restore(best.params);
    Scores s = trainer.evaluate(test);
    rows.push_back({t, s, net.param_count()});
    if (progress)
      *progress << "row hafs=" << (t.hafs ? "on" : "off") << " sat=" << (t.sat ? "on" : "off")
                << " dfsm=" << (t.dfsm ? "on" : "off") << " f1=" << s.f1 << " params="
                << net.param_count() << "\n";
  }
  return rows;
}

std::string ablation_table_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const AblationRow& r : rows) {
    nlohmann::ordered_json row;
    row["hafs"] = r.toggles.hafs;
    row["sat"] = r.toggles.sat;
    row["dfsm"] = r.toggles.dfsm;
    row["precision"] = r.test_scores.precision;
    row["recall"] = r.test_scores.recall;
    row["oa"] = r.test_scores.oa;
    row["f1"] = r.test_scores.f1;
    row["iou"] = r.test_scores.iou;
    row["params"] = r.param_count;
    arr.push_back(row);
  }
  return arr.dump(2);
}

std::string ablation_table_text(const std::vector<AblationRow>& rows) {
  std::string out = "HAFS SAT  DFSM  precision    recall        oa        f1       iou     params\n";
  char line[160];
  for (const AblationRow& r : rows) {
    std::snprintf(line, sizeof line, "%-4s %-4s %-4s %10.6f %9.6f %9.6f %9.6f %9.6f %10lld\n",
                  r.toggles.hafs ? "on" : "off", r.toggles.sat ? "on" : "off",
                  r.toggles.dfsm ? "on" : "off", r.test_scores.precision, r.test_scores.recall,
                  r.test_scores.oa, r.test_scores.f1, r.test_scores.iou, r.param_count);
    out += line;
  }
  return out;
}

}  // namespace ha2f
