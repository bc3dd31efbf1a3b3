#include "ha2f/metrics.hpp"

#include <cstdio>

#include <nlohmann/json.hpp>

#include "ha2f/errors.hpp"

namespace ha2f {

void accumulate(const BinaryMask& pred, const BinaryMask& gt, ConfusionCounts& counts) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ContractError("accumulate: mask shapes differ (" + std::to_string(pred.h) + "x" +
                        std::to_string(pred.w) + " vs " + std::to_string(gt.h) + "x" +
                        std::to_string(gt.w) + ")");
  if (pred.v.size() != static_cast<size_t>(pred.h) * pred.w ||
      gt.v.size() != static_cast<size_t>(gt.h) * gt.w)
    throw ContractError("accumulate: mask storage size inconsistent with shape");
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const uint8_t p = pred.v[i], g = gt.v[i];
    if (p > 1 || g > 1) throw ContractError("accumulate: masks must be binary");
    if (p && g)
      ++counts.tp;
    else if (p && !g)
      ++counts.fp;
    else if (!p && g)
      ++counts.fn;
    else
      ++counts.tn;
  }
}

namespace {

double ratio(long long num, long long den, bool& degenerate) {
  if (den == 0) {
    if (num != 0) throw ContractError("scores: impossible counts");
    degenerate = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

Scores scores(const ConfusionCounts& c) {
  if (c.total() <= 0) throw ContractError("scores: no pixels accumulated");
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0)
    throw ContractError("scores: negative counts");
  Scores s;
  s.precision = ratio(c.tp, c.tp + c.fp, s.degenerate);
  s.recall = ratio(c.tp, c.tp + c.fn, s.degenerate);
  s.oa = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  s.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, s.degenerate);
  s.iou = ratio(c.tp, c.tp + c.fp + c.fn, s.degenerate);
  return s;
}

RgbImage render_error_map(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ContractError("render_error_map: mask shapes differ");
  RgbImage img;
  img.h = pred.h;
  img.w = pred.w;
  img.v.resize(static_cast<size_t>(pred.h) * pred.w * 3);
  for (size_t i = 0; i < pred.v.size(); ++i) {
    const uint8_t p = pred.v[i], g = gt.v[i];
    if (p > 1 || g > 1) throw ContractError("render_error_map: masks must be binary");
    uint8_t r = 0, gr = 0, b = 0;
    if (p && g) {
      r = gr = b = 255;  // true positive
    } else if (p && !g) {
      r = 255;  // false positive
    } else if (!p && g) {
      gr = 255;  // false negative
    }
    img.v[i * 3] = r;
    img.v[i * 3 + 1] = gr;
    img.v[i * 3 + 2] = b;
  }
  return img;
}

std::string scores_json(const Scores& s, const ConfusionCounts& c) {
  nlohmann::ordered_json j;
  j["precision"] = s.precision;
  j["recall"] = s.recall;
  j["oa"] = s.oa;
  j["f1"] = s.f1;
  j["iou"] = s.iou;
  j["counts"] = {{"tp", c.tp}, {"tn", c.tn}, {"fp", c.fp}, {"fn", c.fn}};
  if (s.degenerate) j["degenerate"] = true;
  return j.dump();
}

std::string scores_table(const Scores& s) {
  char buf[192];
  std::snprintf(buf, sizeof(buf),
                "%-10s %-10s %-10s %-10s %-10s\n%-10.4f %-10.4f %-10.4f %-10.4f %-10.4f\n",
                "P", "R", "OA", "F1", "IoU", s.precision, s.recall, s.oa, s.f1, s.iou);
  return buf;
}

}  // namespace ha2f
