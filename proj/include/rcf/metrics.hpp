// Depth evaluation metrics, pooled over pixels:
//   delta_n = fraction with max(Y/Y*, Y*/Y) < 1.25^n
//   rmse    = sqrt(mean (Y - Y*)^2)          (raw prediction)
//   absrel  = mean |Y - Y*| / denom          (denom = target or prediction)
// Valid pixels are Y* > 0 and Y* <= cap (default 80 m). For the ratio
// metrics the prediction is clamped to [1e-3, cap] so a zero output cannot
// produce an infinite ratio; RMSE uses the raw prediction.
#pragma once

#include <cstddef>
#include <string>

#include "rcf/tensor.hpp"

namespace rcf {

enum class AbsrelDenom { Target, Prediction };

AbsrelDenom absrel_denom_from_string(const std::string& s);
std::string to_string(AbsrelDenom d);

struct MetricsReport {
  double delta1 = 0, delta2 = 0, delta3 = 0;
  double rmse = 0, absrel = 0;
  size_t n_pixels = 0;
};

// Pixel-weighted pooling across samples: add() each (prediction, target)
// pair, then report(). Samples with no valid pixel are skipped and counted.
struct MetricsAccumulator {
  AbsrelDenom denom = AbsrelDenom::Target;
  double cap = 80.0;

  size_t n = 0;
  size_t d1 = 0, d2 = 0, d3 = 0;
  double sq_sum = 0, rel_sum = 0;
  size_t skipped_samples = 0;

  void add(const Tensor<float>& y, const Tensor<float>& ystar);
  MetricsReport report() const;  // value_error if no valid pixel was seen
};

// 0/1 mask, same shape as ystar: valid where 0 < ystar <= cap.
Tensor<float> valid_mask(const Tensor<float>& ystar, double cap = 80.0);

MetricsReport compute_metrics(const Tensor<float>& y, const Tensor<float>& ystar,
                              AbsrelDenom denom = AbsrelDenom::Target, double cap = 80.0);

// CSV row matching metrics_csv_header(); deterministic formatting.
std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& mode, uint64_t seed, const MetricsReport& r);

}  // namespace rcf
