#pragma once

#include <string>

#include "ha2f/change_head.hpp"

namespace ha2f {

struct ConfusionCounts {
  long long tp = 0, tn = 0, fp = 0, fn = 0;

  long long total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    tn += o.tn;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

struct Scores {
  double precision = 0, recall = 0, oa = 0, f1 = 0, iou = 0;
  bool degenerate = false;  // set when any 0/0 denominator was coerced to 0
};

/// Change = positive class; micro-accumulation across calls.
void accumulate(const BinaryMask& pred, const BinaryMask& gt, ConfusionCounts& counts);

Scores scores(const ConfusionCounts& counts);

struct RgbImage {
  int h = 0, w = 0;
  std::vector<uint8_t> v;  // h*w*3, row-major RGB
};

/// TP white, TN black, FP red, FN green.
RgbImage render_error_map(const BinaryMask& pred, const BinaryMask& gt);

std::string scores_json(const Scores& s, const ConfusionCounts& c);
std::string scores_table(const Scores& s);

}  // namespace ha2f
