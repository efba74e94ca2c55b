#pragma once

#include <algorithm>
#include <vector>

namespace vewane {

/// Right-continuous nondecreasing step function, zero before the first jump.
struct StepFunction {
  std::vector<double> times;   // strictly increasing jump locations
  std::vector<double> values;  // value on [times[k], times[k+1])

  double operator()(double t) const {
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
  }

  /// Left limit F(t-).
  double left_limit(double t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 0.0;
    return values[static_cast<std::size_t>(it - times.begin()) - 1];
  }

  bool empty() const { return times.empty(); }
};

}  // namespace vewane
