// The gradcheck entry point: finite-difference verification (in double) of
// every differentiable primitive plus one end-to-end toy model per fusion
// mode. Primitives are checked coordinate-wise; models compare whole
// per-parameter gradient vectors, which keeps the tolerance meaningful for
// coordinates whose true gradient is tiny.
#pragma once

#include <string>
#include <vector>

namespace rcf {

struct GradCheckEntry {
  std::string name;
  double err = 0;
  double tol = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = true;
  size_t primitive_count = 0;
  size_t model_count = 0;
};

GradCheckReport run_gradcheck_suite();
std::string gradcheck_report_text(const GradCheckReport& r);

}  // namespace rcf
