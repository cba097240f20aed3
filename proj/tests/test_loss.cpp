#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "rcf/grad_check.hpp"
#include "rcf/loss.hpp"
#include "rcf/metrics.hpp"
#include "rcf/util.hpp"
#include "test_helpers.hpp"

using namespace rcf;
using rcft::random_tensor;

namespace {

// Independent scalar-loop metrics oracle; deliberately shares no code with
// MetricsAccumulator.
struct NaiveMetrics {
  double delta1 = 0, delta2 = 0, delta3 = 0, rmse = 0, absrel = 0;
  size_t n = 0;
};

NaiveMetrics naive_metrics(const Tensor<float>& y, const Tensor<float>& ystar, bool denom_target,
                           double cap) {
  NaiveMetrics m;
  double sq = 0, rel = 0;
  size_t c1 = 0, c2 = 0, c3 = 0;
  for (size_t i = 0; i < y.numel(); ++i) {
    const double t = ystar[i];
    if (t <= 0 || t > cap) continue;
    ++m.n;
    const double raw = y[i];
    const double p = std::min(std::max(raw, 1e-3), cap);
    const double ratio = p > t ? p / t : t / p;
    c1 += ratio < 1.25;
    c2 += ratio < 1.5625;
    c3 += ratio < 1.953125;
    sq += (raw - t) * (raw - t);
    rel += std::abs(p - t) / (denom_target ? t : p);
  }
  if (m.n) {
    m.delta1 = double(c1) / double(m.n);
    m.delta2 = double(c2) / double(m.n);
    m.delta3 = double(c3) / double(m.n);
    m.rmse = std::sqrt(sq / double(m.n));
    m.absrel = rel / double(m.n);
  }
  return m;
}

}  // namespace

TEST_CASE("l1_loss hand cases") {
  // Y=[2,4] vs Y*=[1,1], full mask: mean(|1|,|3|) = 2 exactly.
  auto y = Tensor<double>::from({2}, {2, 4});
  auto t = Tensor<double>::from({2}, {1, 1});
  auto m = Tensor<double>::from({2}, {1, 1});
  CHECK(l1_loss(y, t, m).item() == 2.0);

  // Second pixel masked out: only |2-1| counts.
  auto t2 = Tensor<double>::from({2}, {1, 0});
  auto m2 = Tensor<double>::from({2}, {1, 0});
  CHECK(l1_loss(y, t2, m2).item() == 1.0);

  // Identity prediction.
  CHECK(l1_loss(t, t, m).item() == 0.0);

  // Same arithmetic must hold in the training dtype.
  auto yf = Tensor<float>::from({2}, {2, 4});
  auto tf = Tensor<float>::from({2}, {1, 1});
  auto mf = Tensor<float>::from({2}, {1, 1});
  CHECK(l1_loss(yf, tf, mf).item() == 2.0f);

  auto zero_mask = Tensor<double>::from({2}, {0, 0});
  CHECK_THROWS_AS(l1_loss(y, t, zero_mask), value_error);
  auto bad = Tensor<double>::from({3}, {1, 1, 1});
  CHECK_THROWS_AS(l1_loss(y, bad, m), shape_error);
}

TEST_CASE("smoothness_loss hand cases") {
  const size_t h = 8, w = 8;
  Tensor<double> flat({h, w}, 3.0);
  Tensor<double> img({h, w, 3}, 0.5);
  CHECK(smoothness_loss(flat, img).item() == 0.0);

  // Row ramp: |grad_u| = 1 on the first h-1 rows, 0 on the last (forward
  // differences zero the boundary), so the pixel mean is (h-1)/h.
  Tensor<double> ramp_u({h, w});
  for (size_t r = 0; r < h; ++r)
    for (size_t c = 0; c < w; ++c) ramp_u.at2(r, c) = double(r);
  CHECK(smoothness_loss(ramp_u, img).item() == double(h - 1) / double(h));

  Tensor<double> ramp_v({h, w});
  for (size_t r = 0; r < h; ++r)
    for (size_t c = 0; c < w; ++c) ramp_v.at2(r, c) = double(c);
  CHECK(smoothness_loss(ramp_v, img).item() == double(w - 1) / double(w));

  // A strong image gradient in u must strictly reduce the same ramp's cost.
  Tensor<double> img_edge({h, w, 3});
  for (size_t r = 0; r < h; ++r)
    for (size_t c = 0; c < w; ++c)
      for (size_t k = 0; k < 3; ++k) img_edge.at3(r, c, k) = double(r) * 2.0;
  CHECK(smoothness_loss(ramp_u, img_edge).item() < smoothness_loss(ramp_u, img).item());
  CHECK(smoothness_loss(ramp_u, img_edge).item() ==
        doctest::Approx(std::exp(-2.0) * double(h - 1) / double(h)).epsilon(1e-12));

  CHECK_THROWS_AS(smoothness_loss(Tensor<double>({h, w, 1}, 1.0), img), shape_error);
  CHECK_THROWS_AS(smoothness_loss(flat, Tensor<double>({h, w + 1, 3}, 1.0)), shape_error);
}

TEST_CASE("total_loss composes the weighted sum exactly") {
  // L1 = 2 and Lsmooth = 1 by construction: Y=[2,4] on a 1x2 grid has
  // one column gradient of 2 and a zeroed boundary, mean (2+0)/2 = 1.
  auto y = Tensor<double>::from({1, 2}, {2, 4});
  auto t = Tensor<double>::from({1, 2}, {1, 1});
  auto m = Tensor<double>::from({1, 2}, {1, 1});
  Tensor<double> img({1, 2, 3}, 0.25);
  CHECK(l1_loss(y, t, m).item() == 2.0);
  CHECK(smoothness_loss(y, img).item() == 1.0);
  CHECK(total_loss(y, t, img, m).item() == 2.1);

  auto yf = Tensor<float>::from({1, 2}, {2, 4});
  auto tf = Tensor<float>::from({1, 2}, {1, 1});
  auto mf = Tensor<float>::from({1, 2}, {1, 1});
  Tensor<float> imgf({1, 2, 3}, 0.25f);
  CHECK(total_loss(yf, tf, imgf, mf).item() == 2.1f);

  // w2 = 0 degenerates to the masked L1 term.
  CHECK(total_loss(y, t, img, m, 1.0, 0.0).item() == l1_loss(y, t, m).item());

  // Perfect constant prediction: both terms vanish.
  auto c = Tensor<double>::from({1, 2}, {1, 1});
  CHECK(total_loss(c, t, img, m).item() == 0.0);
}

TEST_CASE("total_loss gradient matches finite differences in double") {
  const size_t h = 6, w = 6;
  Rng rng(mix_seed(0x1055, 1));
  // Keep |Y - Y*| and the depth gradients away from the abs() kinks so the
  // central difference stays on one linear piece.
  Tensor<double> y({h, w});
  for (size_t i = 0; i < y.numel(); ++i) y[i] = 2.0 + rng.uniform(0.0, 1.0);
  Tensor<double> t({h, w});
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.0, 1.0);
  Tensor<double> img = random_tensor<double>({h, w, 3}, rng, 0.0, 1.0);
  Tensor<double> mask({h, w});
  for (size_t i = 0; i < mask.numel(); ++i) mask[i] = rng.coin(0.5) ? 1.0 : 0.0;
  mask[0] = 1.0;

  const double err = grad_check<double>(
      [&] { return total_loss(y, t, img, mask); }, y, 1e-5);
  CHECK(err < 1e-6);
}

TEST_CASE("metrics hand case: single pixel, ratio 2") {
  auto y = Tensor<float>::from({1}, {2});
  auto t = Tensor<float>::from({1}, {1});
  MetricsReport r = compute_metrics(y, t);
  // Thresholds are strict: 2 exceeds 1.25, 1.5625 and 1.953125.
  CHECK(r.delta1 == 0.0);
  CHECK(r.delta2 == 0.0);
  CHECK(r.delta3 == 0.0);
  CHECK(r.rmse == 1.0);
  CHECK(r.absrel == 1.0);
  CHECK(r.n_pixels == 1);

  // Prediction-denominator convention: |2-1|/2.
  CHECK(compute_metrics(y, t, AbsrelDenom::Prediction).absrel == 0.5);

  // A ratio just inside 1.953125 does count toward delta3.
  auto y3 = Tensor<float>::from({1}, {1.9f});
  MetricsReport r3 = compute_metrics(y3, t);
  CHECK(r3.delta1 == 0.0);
  CHECK(r3.delta2 == 0.0);
  CHECK(r3.delta3 == 1.0);
}

TEST_CASE("metrics identity, clamping and validity rules") {
  auto t = Tensor<float>::from({4}, {1, 10, 40, 80});
  MetricsReport r = compute_metrics(t, t);
  CHECK(r.delta1 == 1.0);
  CHECK(r.delta2 == 1.0);
  CHECK(r.delta3 == 1.0);
  CHECK(r.rmse == 0.0);
  CHECK(r.absrel == 0.0);
  CHECK(r.n_pixels == 4);  // 80 m sits exactly on the cap and is valid

  // Invalid targets (zero, negative, beyond cap) are excluded entirely.
  auto y = Tensor<float>::from({4}, {5, 5, 5, 5});
  auto t2 = Tensor<float>::from({4}, {5, 0, -3, 80.5f});
  MetricsReport r2 = compute_metrics(y, t2);
  CHECK(r2.n_pixels == 1);
  CHECK(r2.delta1 == 1.0);

  // Ratio metrics clamp the prediction to [1e-3, cap]; RMSE uses it raw.
  auto y0 = Tensor<float>::from({1}, {0});
  auto t0 = Tensor<float>::from({1}, {1e-3f});
  MetricsReport rc = compute_metrics(y0, t0);
  CHECK(rc.delta1 == 1.0);        // clamped prediction equals the target
  CHECK(rc.rmse == doctest::Approx(1e-3).epsilon(1e-6));

  auto yhuge = Tensor<float>::from({1}, {500});
  auto t80 = Tensor<float>::from({1}, {79});
  MetricsReport rh = compute_metrics(yhuge, t80);
  CHECK(rh.delta1 == 1.0);        // 80/79 < 1.25 after clamping
  CHECK(rh.rmse == doctest::Approx(421.0).epsilon(1e-6));
  CHECK(rh.absrel == doctest::Approx(1.0 / 79.0).epsilon(1e-9));

  // No valid pixel anywhere -> the report is an error.
  auto none = Tensor<float>::from({2}, {0, 0});
  CHECK_THROWS_AS(compute_metrics(y0, Tensor<float>::from({1}, {0})), value_error);

  MetricsAccumulator acc;
  acc.add(Tensor<float>::from({2}, {1, 1}), none);
  CHECK(acc.skipped_samples == 1);
  CHECK_THROWS_AS(acc.report(), value_error);
  CHECK_THROWS_AS(acc.add(y0, none), shape_error);
}

TEST_CASE("metrics accumulator pools pixel-weighted across samples") {
  Rng rng(77);
  auto y1 = random_tensor<float>({5, 5}, rng, 0.5, 60.0);
  auto t1 = random_tensor<float>({5, 5}, rng, 0.5, 60.0);
  auto y2 = random_tensor<float>({3, 3}, rng, 0.5, 60.0);
  auto t2 = random_tensor<float>({3, 3}, rng, 0.5, 60.0);

  MetricsAccumulator split;
  split.add(y1, t1);
  split.add(y2, t2);

  // Concatenating the samples must give the same pooled result.
  std::vector<float> yall(y1.vals());
  yall.insert(yall.end(), y2.vals().begin(), y2.vals().end());
  std::vector<float> tall(t1.vals());
  tall.insert(tall.end(), t2.vals().begin(), t2.vals().end());
  MetricsAccumulator joint;
  joint.add(Tensor<float>::from({yall.size()}, yall), Tensor<float>::from({tall.size()}, tall));

  const MetricsReport a = split.report(), b = joint.report();
  CHECK(a.n_pixels == b.n_pixels);
  CHECK(a.delta1 == b.delta1);
  CHECK(a.delta2 == b.delta2);
  CHECK(a.delta3 == b.delta3);
  CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-12));
  CHECK(a.absrel == doctest::Approx(b.absrel).epsilon(1e-12));
}

TEST_CASE("metrics oracle equivalence on 100 random 32x32 pairs") {
  Rng rng(mix_seed(0xacce, 4));
  for (int rep = 0; rep < 100; ++rep) {
    Tensor<float> y({32, 32}), t({32, 32});
    for (size_t i = 0; i < y.numel(); ++i) {
      // Mix plausible depths with hostile values: zeros, negatives, huge.
      const double roll = rng.uniform();
      y[i] = float(roll < 0.05   ? 0.0
                   : roll < 0.10 ? rng.uniform(-5.0, 0.0)
                   : roll < 0.15 ? rng.uniform(100.0, 500.0)
                                 : rng.uniform(0.5, 79.0));
      const double troll = rng.uniform();
      t[i] = float(troll < 0.10   ? 0.0
                   : troll < 0.15 ? rng.uniform(80.5, 120.0)
                                  : rng.uniform(0.5, 80.0));
    }
    const bool denom_target = rng.coin(0.5);
    const AbsrelDenom d = denom_target ? AbsrelDenom::Target : AbsrelDenom::Prediction;
    const MetricsReport got = compute_metrics(y, t, d);
    const NaiveMetrics want = naive_metrics(y, t, denom_target, 80.0);
    REQUIRE(got.n_pixels == want.n);
    CHECK(std::abs(got.delta1 - want.delta1) <= 1e-6);
    CHECK(std::abs(got.delta2 - want.delta2) <= 1e-6);
    CHECK(std::abs(got.delta3 - want.delta3) <= 1e-6);
    CHECK(std::abs(got.rmse - want.rmse) <= 1e-6);
    CHECK(std::abs(got.absrel - want.absrel) <= 1e-6);
    // Threshold nesting holds for every input.
    CHECK(got.delta1 <= got.delta2);
    CHECK(got.delta2 <= got.delta3);
  }
}

TEST_CASE("metrics are invariant under a shared permutation") {
  Rng rng(909);
  auto y = random_tensor<float>({64}, rng, 0.5, 90.0);
  auto t = random_tensor<float>({64}, rng, 0.0, 90.0);
  std::vector<size_t> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  for (size_t i = 64; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);

  Tensor<float> yp({64}), tp({64});
  for (size_t i = 0; i < 64; ++i) {
    yp[i] = y[perm[i]];
    tp[i] = t[perm[i]];
  }
  const MetricsReport a = compute_metrics(y, t), b = compute_metrics(yp, tp);
  CHECK(a.n_pixels == b.n_pixels);
  CHECK(a.delta1 == b.delta1);  // counting metrics are exactly order-free
  CHECK(a.delta2 == b.delta2);
  CHECK(a.delta3 == b.delta3);
  CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-12));
  CHECK(a.absrel == doctest::Approx(b.absrel).epsilon(1e-12));
}

TEST_CASE("valid_mask matches the metric validity rule") {
  auto t = Tensor<float>::from({5}, {0, 0.5f, 80, 80.5f, -1});
  auto m = valid_mask(t);
  CHECK(m.vals() == std::vector<float>{0, 1, 1, 0, 0});
}

TEST_CASE("metrics csv row formatting is fixed") {
  MetricsReport r;
  r.delta1 = 0.5;
  r.delta2 = 0.75;
  r.delta3 = 1.0;
  r.rmse = 12.345678921;
  r.absrel = 0.0999999;
  r.n_pixels = 321;
  CHECK(metrics_csv_header() == "mode,seed,delta1,delta2,delta3,rmse,absrel,n_pixels");
  CHECK(metrics_csv_row("early", 3, r) ==
        "early,3,0.500000,0.750000,1.000000,12.345679,0.100000,321");
}
