#include "rcf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace rcf {

AbsrelDenom absrel_denom_from_string(const std::string& s) {
  if (s == "target") return AbsrelDenom::Target;
  if (s == "prediction") return AbsrelDenom::Prediction;
  throw value_error("unknown absrel denominator '" + s + "' (target|prediction)");
}

std::string to_string(AbsrelDenom d) {
  return d == AbsrelDenom::Target ? "target" : "prediction";
}

void MetricsAccumulator::add(const Tensor<float>& y, const Tensor<float>& ystar) {
  if (y.shape() != ystar.shape())
    throw shape_error("metrics: prediction " + shape_str(y.shape()) + " vs target " +
                      shape_str(ystar.shape()));
  size_t seen = 0;
  for (size_t i = 0; i < y.numel(); ++i) {
    const double t = ystar[i];
    if (!(t > 0.0) || t > cap) continue;
    ++seen;
    const double raw = y[i];
    const double p = std::clamp(raw, 1e-3, cap);
    const double r = std::max(p / t, t / p);
    if (r < 1.25) ++d1;
    if (r < 1.25 * 1.25) ++d2;
    if (r < 1.25 * 1.25 * 1.25) ++d3;
    sq_sum += (raw - t) * (raw - t);
    rel_sum += std::fabs(p - t) / (denom == AbsrelDenom::Target ? t : p);
  }
  if (seen == 0)
    ++skipped_samples;
  else
    n += seen;
}

MetricsReport MetricsAccumulator::report() const {
  if (n == 0) throw value_error("metrics: no valid pixels accumulated");
  MetricsReport r;
  const double dn = double(n);
  r.delta1 = double(d1) / dn;
  r.delta2 = double(d2) / dn;
  r.delta3 = double(d3) / dn;
  r.rmse = std::sqrt(sq_sum / dn);
  r.absrel = rel_sum / dn;
  r.n_pixels = n;
  return r;
}

Tensor<float> valid_mask(const Tensor<float>& ystar, double cap) {
  Tensor<float> m(ystar.shape());
  for (size_t i = 0; i < ystar.numel(); ++i)
    m.vals()[i] = (ystar[i] > 0.0f && double(ystar[i]) <= cap) ? 1.0f : 0.0f;
  return m;
}

MetricsReport compute_metrics(const Tensor<float>& y, const Tensor<float>& ystar,
                              AbsrelDenom denom, double cap) {
  MetricsAccumulator acc;
  acc.denom = denom;
  acc.cap = cap;
  acc.add(y, ystar);
  return acc.report();
}

std::string metrics_csv_header() {
  return "mode,seed,delta1,delta2,delta3,rmse,absrel,n_pixels";
}

std::string metrics_csv_row(const std::string& mode, uint64_t seed, const MetricsReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%llu,%.6f,%.6f,%.6f,%.6f,%.6f,%zu", mode.c_str(),
                (unsigned long long)seed, r.delta1, r.delta2, r.delta3, r.rmse, r.absrel,
                r.n_pixels);
  return std::string(buf);
}

}  // namespace rcf
