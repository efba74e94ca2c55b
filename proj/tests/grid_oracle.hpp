#pragma once

// Brute-force root finder for a two-coordinate estimating equation: a grid
// search of |EF| over [-5, 5]^2 localizes the root, then nested bisection
// refines it. Within a fixed theta1, EF_0 is nonincreasing in theta0, and the
// profiled EF_1 is nonincreasing in theta1, so both bisections are exact.

#include <cmath>
#include <optional>
#include <vector>

#include "oracle.hpp"

namespace oracle {

class GridSolver {
 public:
  explicit GridSolver(const Model& m) {
    for (int k = 0; k < 2; ++k) {
      for (double t : m.times(k)) {
        Slice s;
        for (std::size_t i = 0; i < m.data.size(); ++i) {
          const auto& r = m.data.records[i];
          if (!m.at_risk(k, r, t)) continue;
          const Vector z = m.z(k, r, t);
          s.w.push_back(m.weight(k, i));
          s.z0.push_back(z(0));
          s.z1.push_back(z(1));
          if (m.jumps(k, i) && r.infect_time == t) {
            s.jw += m.weight(k, i);
            s.jz0 += m.weight(k, i) * z(0);
            s.jz1 += m.weight(k, i) * z(1);
          }
        }
        slices_.push_back(std::move(s));
      }
    }
  }

  void ef(double a, double b, double& f0, double& f1) const {
    f0 = f1 = 0.0;
    for (const auto& s : slices_) {
      double s0 = 0.0, s10 = 0.0, s11 = 0.0;
      for (std::size_t i = 0; i < s.w.size(); ++i) {
        const double y = s.w[i] * std::exp(a * s.z0[i] + b * s.z1[i]);
        s0 += y;
        s10 += y * s.z0[i];
        s11 += y * s.z1[i];
      }
      f0 += s.jz0 - s.jw * s10 / s0;
      f1 += s.jz1 - s.jw * s11 / s0;
    }
  }

  /// Root of EF_0(., b) by bisection on [-lim, lim]; nullopt without a sign change.
  std::optional<double> inner(double b, double lim = 30.0) const {
    double lo = -lim, hi = lim, f0, f1;
    ef(lo, b, f0, f1);
    const double flo = f0;
    ef(hi, b, f0, f1);
    if (!(flo > 0.0 && f0 < 0.0)) return std::nullopt;
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
      const double mid = 0.5 * (lo + hi);
      ef(mid, b, f0, f1);
      (f0 > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
  }

  std::optional<double> profiled(double b) const {
    auto a = inner(b);
    if (!a) return std::nullopt;
    double f0, f1;
    ef(*a, b, f0, f1);
    return f1;
  }

  /// Grid minimizer of |EF| on [-5, 5]^2 with the given step, then nested
  /// bisection started from the grid cell. nullopt when the root is not
  /// bracketed inside the box.
  std::optional<std::pair<double, double>> solve(double step = 1e-2) const {
    const int n = static_cast<int>(std::lround(10.0 / step));
    double best = INFINITY, ba = 0.0, bb = 0.0, f0, f1;
    for (int i = 0; i <= n; ++i) {
      const double a = -5.0 + step * i;
      for (int j = 0; j <= n; ++j) {
        const double b = -5.0 + step * j;
        ef(a, b, f0, f1);
        const double norm = std::hypot(f0, f1);
        if (norm < best) {
          best = norm;
          ba = a;
          bb = b;
        }
      }
    }
    // Expand a bracket for the profiled EF_1 around the grid minimizer.
    double lo = bb - 2 * step, hi = bb + 2 * step;
    auto plo = profiled(lo), phi = profiled(hi);
    for (int k = 0; k < 20 && plo && phi && !(*plo > 0.0 && *phi < 0.0); ++k) {
      if (!(*plo > 0.0)) lo -= 2 * step * (1 << k);
      if (!(*phi < 0.0)) hi += 2 * step * (1 << k);
      lo = std::max(lo, -5.0);
      hi = std::min(hi, 5.0);
      plo = profiled(lo);
      phi = profiled(hi);
    }
    if (!plo || !phi || !(*plo > 0.0 && *phi < 0.0)) return std::nullopt;
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
      const double mid = 0.5 * (lo + hi);
      auto pm = profiled(mid);
      if (!pm) return std::nullopt;
      (*pm > 0.0 ? lo : hi) = mid;
    }
    const double b = 0.5 * (lo + hi);
    auto a = inner(b);
    if (!a || std::abs(*a) > 5.0 || std::abs(*a - ba) > 0.5) return std::nullopt;
    return std::make_pair(*a, b);
  }

 private:
  struct Slice {
    std::vector<double> w, z0, z1;
    double jw = 0.0, jz0 = 0.0, jz1 = 0.0;
  };
  std::vector<Slice> slices_;
};

}  // namespace oracle
