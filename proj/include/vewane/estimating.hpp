#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "vewane/error.hpp"
#include "vewane/processes.hpp"
#include "vewane/step_function.hpp"
#include "vewane/waning.hpp"

namespace vewane {

enum class ProcessKind { Blinded = 0, Unblinded = 1 };

/// Profiled estimating equation for theta and its ingredients.
///
/// Both counting processes are pure jump, so every integral is a sum over
/// the distinct active jump times of the sample. For piecewise-constant
/// waning the covariate Z_i(t) takes finitely many values, and the at-risk
/// sums are assembled from theta-free masses per (time, covariate value);
/// linear waning falls back to summing over participants at every jump.
///
/// Holds a reference to the processes, which must outlive this object.
class EstimatingEquation {
 public:
  struct Evaluation {
    Vector value;
    Matrix jacobian;
  };

  /// Per-jump-time quantities at a given theta.
  struct Increments {
    std::vector<double> times;
    std::vector<double> s0;       // sum of Y~(t)
    std::vector<double> dlambda;  // W(t) / s0(t)
    Matrix zbar;                  // dim x J
  };

  explicit EstimatingEquation(const WeightedProcesses& proc, bool grouped = true)
      : proc_(proc), dim_(proc.spec().dim_theta()) {
    grouped_ = grouped && proc.spec().is_piecewise();
    for (int k = 0; k < 2; ++k) build(static_cast<ProcessKind>(k));
  }

  int dim() const { return dim_; }
  bool grouped() const { return grouped_; }
  const WeightedProcesses& processes() const { return proc_; }
  std::size_t n_jumps(ProcessKind k) const { return part(k).times.size(); }
  const std::vector<double>& jump_times(ProcessKind k) const { return part(k).times; }

  Evaluation evaluate(const Theta& theta) const {
    const Vector th = theta_vector(theta);
    Evaluation ev{Vector::Zero(dim_), Matrix::Zero(dim_, dim_)};
    for (int k = 0; k < 2; ++k) {
      const Part& p = parts_[k];
      const Risk r = risk(p, th);
      for (std::size_t j = 0; j < p.times.size(); ++j) {
        const double s0 = r.s0[j];
        const Vector zbar = r.s1.col(static_cast<Eigen::Index>(j)) / s0;
        const Eigen::Map<const Matrix> s2(r.s2.col(static_cast<Eigen::Index>(j)).data(), dim_, dim_);
        ev.value += p.wz.col(static_cast<Eigen::Index>(j)) - p.w[j] * zbar;
        ev.jacobian -= p.w[j] * (s2 / s0 - zbar * zbar.transpose());
      }
    }
    return ev;
  }

  Vector value(const Theta& theta) const { return evaluate(theta).value; }
  Matrix jacobian(const Theta& theta) const { return evaluate(theta).jacobian; }

  Increments increments(ProcessKind k, const Theta& theta) const {
    const Part& p = part(k);
    const Risk r = risk(p, theta_vector(theta));
    Increments inc;
    inc.times = p.times;
    inc.s0 = r.s0;
    inc.dlambda.resize(p.times.size());
    inc.zbar = Matrix(dim_, static_cast<Eigen::Index>(p.times.size()));
    for (std::size_t j = 0; j < p.times.size(); ++j) {
      inc.dlambda[j] = p.w[j] / r.s0[j];
      inc.zbar.col(static_cast<Eigen::Index>(j)) = r.s1.col(static_cast<Eigen::Index>(j)) / r.s0[j];
    }
    return inc;
  }

  /// Estimated cumulative baseline hazard of process k at theta.
  StepFunction cumulative_hazard(ProcessKind k, const Theta& theta) const {
    Increments inc = increments(k, theta);
    StepFunction f;
    f.times = inc.times;
    f.values.resize(inc.times.size());
    double acc = 0.0;
    for (std::size_t j = 0; j < inc.times.size(); ++j) f.values[j] = acc += inc.dlambda[j];
    return f;
  }

  /// Estimated influence terms psi_i: own jump minus the compensator
  /// accumulated over the pooled jump grid. They sum to the estimating
  /// function.
  std::vector<Vector> influence(const Theta& theta) const {
    const Vector th = theta_vector(theta);
    std::vector<Vector> psi(proc_.size(), Vector::Zero(dim_));
    for (int k = 0; k < 2; ++k) {
      const auto kind = static_cast<ProcessKind>(k);
      const Part& p = parts_[k];
      if (p.times.empty()) continue;
      const Increments inc = increments(kind, theta);
      const auto J = static_cast<Eigen::Index>(p.times.size());
      // prefix[g](:, j) = sum_{j' < j} (z_g - zbar_j') dLambda_j'
      std::vector<Matrix> prefix;
      if (grouped_) {
        for (Eigen::Index g = 0; g < p.groups.cols(); ++g) {
          Matrix pre = Matrix::Zero(dim_, J + 1);
          for (Eigen::Index j = 0; j < J; ++j) {
            pre.col(j + 1) = pre.col(j) + (p.groups.col(g) - inc.zbar.col(j)) * inc.dlambda[static_cast<std::size_t>(j)];
          }
          prefix.push_back(std::move(pre));
        }
      }
      for (const Span& sp : p.spans) {
        const SubjectProcess& s = proc_.subjects()[sp.subject];
        Vector& out = psi[sp.subject];
        if (grouped_) {
          const double ez = std::exp(th.dot(p.groups.col(sp.group)));
          if (sp.constant_weight) {
            out -= sp.weight * ez * (prefix[sp.group].col(sp.hi) - prefix[sp.group].col(sp.lo));
          } else {
            for (int j = sp.lo; j < sp.hi; ++j) {
              out -= (p.groups.col(sp.group) - inc.zbar.col(j)) * (inc.dlambda[j] * weight_at(kind, p, s, j) * ez);
            }
          }
          continue;
        }
        for (int j = sp.lo; j < sp.hi; ++j) {
          const Vector z = zvec(kind, s, p.times[j]);
          const double y = weight_at(kind, p, s, j) * std::exp(th.dot(z));
          out -= (z - inc.zbar.col(j)) * inc.dlambda[j] * y;
        }
      }
      for (const OwnJump& oj : p.own) {
        psi[oj.subject] += oj.weight * (oj.z - inc.zbar.col(oj.index));
      }
    }
    return psi;
  }

 private:
  struct Span {
    std::size_t subject;
    int lo, hi;  // jump-grid index range [lo, hi)
    int group;   // covariate-value group (grouped mode)
    bool constant_weight;
    double weight;  // valid when constant_weight
  };
  struct OwnJump {
    std::size_t subject;
    int index;
    double weight;
    Vector z;
  };
  struct Part {
    std::vector<double> times;
    std::vector<double> w;  // total jump weight W(t)
    Matrix wz;              // dim x J, sum of weight * Z at each jump time
    std::vector<OwnJump> own;
    std::vector<Span> spans;
    Matrix groups;  // dim x G, covariate value of each group
    Matrix mass;    // J x G, theta-free sum of weights at risk
    std::vector<double> l1, l2;  // unblinding baselines at the jump times
  };
  struct Risk {
    std::vector<double> s0;
    Matrix s1;  // dim x J
    Matrix s2;  // dim*dim x J
  };

  const Part& part(ProcessKind k) const { return parts_[static_cast<int>(k)]; }

  Vector theta_vector(const Theta& theta) const {
    Vector th = theta.as_vector();
    if (th.size() != dim_) throw InvalidArgument("theta has the wrong dimension for the waning model");
    return th;
  }

  bool at_risk(ProcessKind k, const SubjectProcess& s, double t) const {
    return k == ProcessKind::Blinded ? proc_.at_risk_blinded(s, t) : proc_.at_risk_unblinded(s, t);
  }
  Vector zvec(ProcessKind k, const SubjectProcess& s, double t) const {
    return k == ProcessKind::Blinded ? proc_.z_blinded(s, t) : proc_.z_unblinded(s, t);
  }
  double weight_at(ProcessKind k, const Part& p, const SubjectProcess& s, int j) const {
    if (k == ProcessKind::Unblinded) return s.sw_unblinded;
    return std::exp(WeightedProcesses::blinded_log_weight(s, p.l1[j], p.l2[j]));
  }
  bool jumps(ProcessKind k, const SubjectProcess& s) const {
    return k == ProcessKind::Blinded ? s.jump_b : s.jump_u;
  }
  double jump_weight(ProcessKind k, const SubjectProcess& s) const {
    return k == ProcessKind::Blinded ? s.jump_weight_b : s.jump_weight_u;
  }
  // Waning time entering g, or NaN when Z carries no waning component.
  double waning_time(ProcessKind k, const SubjectProcess& s, double t) const {
    const double lag = proc_.timeline().lag;
    if (k == ProcessKind::Blinded) return s.arm == 1 ? t - s.entry - lag : NAN;
    return proc_.unblinded_waning_time(s, t);
  }
  int group_of(ProcessKind k, const SubjectProcess& s, double t) const {
    if (k == ProcessKind::Blinded && s.arm == 0) return 0;
    const int seg = proc_.spec().segment(waning_time(k, s, t));
    return k == ProcessKind::Blinded ? 1 + seg : seg;
  }

  void build(ProcessKind k) {
    Part& p = parts_[static_cast<int>(k)];
    const auto& subjects = proc_.subjects();
    const auto& tl = proc_.timeline();

    std::vector<std::pair<double, std::size_t>> jl;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
      if (jumps(k, subjects[i])) jl.emplace_back(subjects[i].u, i);
    }
    std::sort(jl.begin(), jl.end());
    for (const auto& [t, i] : jl) {
      if (p.times.empty() || p.times.back() != t) {
        p.times.push_back(t);
        p.w.push_back(0.0);
      }
    }
    const auto J = static_cast<Eigen::Index>(p.times.size());
    for (double t : p.times) {
      p.l1.push_back(proc_.l1(t));
      p.l2.push_back(proc_.l2(t));
    }
    p.wz = Matrix::Zero(dim_, J);
    for (const auto& [t, i] : jl) {
      const int j = index_of(p, t);
      const double w = jump_weight(k, subjects[i]);
      Vector z = zvec(k, subjects[i], t);
      p.w[j] += w;
      p.wz.col(j) += w * z;
      p.own.push_back({i, j, w, std::move(z)});
    }

    if (grouped_) {
      const int n_seg = static_cast<int>(proc_.spec().knots().size()) + 1;
      const int G = k == ProcessKind::Blinded ? 1 + n_seg : n_seg;
      p.groups = Matrix::Zero(dim_, G);
      for (int s = 0; s < n_seg; ++s) {
        Vector b = Vector::Zero(dim_ - 1);
        if (s > 0) b(s - 1) = 1.0;
        if (k == ProcessKind::Blinded) {
          p.groups(0, 1 + s) = 1.0;
          p.groups.col(1 + s).tail(dim_ - 1) = b;
        } else {
          p.groups.col(s).tail(dim_ - 1) = b;
        }
      }
      p.mass = Matrix::Zero(J + 1, G);
    }
    if (J == 0) return;

    const bool varying_blinded = k == ProcessKind::Blinded && proc_.mode() == WeightMode::Estimated;
    const auto first_varying = static_cast<int>(
        std::lower_bound(p.times.begin(), p.times.end(), tl.t_pfizer) - p.times.begin());

    for (std::size_t i = 0; i < subjects.size(); ++i) {
      const SubjectProcess& s = subjects[i];
      auto [lo, hi] = risk_range(k, s, p.times);
      if (lo >= hi) continue;
      // Split [lo, hi) where the group or the weight regime changes.
      int a = lo;
      while (a < hi) {
        int b = hi;
        int g = 0;
        if (grouped_) {
          g = group_of(k, s, p.times[a]);
          b = static_cast<int>(std::partition_point(p.times.begin() + a, p.times.begin() + hi,
                                                    [&](double t) { return group_of(k, s, t) == g; }) -
                               p.times.begin());
        }
        bool constant = true;
        if (varying_blinded && (s.blinded.d1 != 0.0 || s.blinded.d2 != 0.0)) {
          if (a >= first_varying) {
            constant = false;
          } else {
            b = std::min(b, first_varying);
          }
        }
        Span sp{i, a, b, g, constant, constant ? weight_at(k, p, s, a) : 0.0};
        if (grouped_) {
          if (constant) {
            p.mass(a, g) += sp.weight;
            p.mass(b, g) -= sp.weight;
          }
        }
        p.spans.push_back(sp);
        a = b;
      }
    }
    if (grouped_) {
      // Differences to running sums, then add the time-varying spans.
      for (Eigen::Index j = 1; j <= J; ++j) p.mass.row(j) += p.mass.row(j - 1);
      for (const Span& sp : p.spans) {
        if (sp.constant_weight) continue;
        const SubjectProcess& s = subjects[sp.subject];
        for (int j = sp.lo; j < sp.hi; ++j) p.mass(j, sp.group) += weight_at(k, p, s, j);
      }
    }
  }

  static int index_of(const Part& p, double t) {
    return static_cast<int>(std::lower_bound(p.times.begin(), p.times.end(), t) - p.times.begin());
  }

  // Index range of grid times at which s is at risk; the at-risk set of a
  // participant is an interval in t for both processes.
  std::pair<int, int> risk_range(ProcessKind k, const SubjectProcess& s, const std::vector<double>& times) const {
    const auto& tl = proc_.timeline();
    const auto begin = times.begin();
    auto first_where = [&](auto pred) {
      return static_cast<int>(std::partition_point(begin, times.end(), [&](double t) { return !pred(t); }) - begin);
    };
    int lo = first_where([&](double t) { return s.entry < t; });
    int hi = first_where([&](double t) { return t > s.u; });
    if (k == ProcessKind::Blinded) {
      hi = std::min(hi, first_where([&](double t) { return t >= tl.t_pdcv_end; }));
      hi = std::min(hi, first_where([&](double t) { return t > s.r; }));
      if (s.arm == 1) lo = std::max(lo, first_where([&](double t) { return s.entry + tl.lag <= t; }));
    } else {
      if (s.gamma < 1 || (s.arm == 0 && !s.crossed)) return {0, 0};
      lo = std::max(lo, first_where([&](double t) { return t >= tl.t_pfizer; }));
      hi = std::min(hi, first_where([&](double t) { return t > tl.t_analysis; }));
      if (s.arm == 0) {
        lo = std::max(lo, first_where([&](double t) { return t - s.r >= tl.lag; }));
      } else {
        lo = std::max(lo, first_where([&](double t) { return t > s.r; }));
      }
    }
    while (lo < hi && !at_risk(k, s, times[lo])) ++lo;
    while (hi > lo && !at_risk(k, s, times[hi - 1])) --hi;
    return {lo, hi};
  }

  Risk risk(const Part& p, const Vector& th) const {
    const auto J = static_cast<Eigen::Index>(p.times.size());
    Risk r{std::vector<double>(p.times.size(), 0.0), Matrix::Zero(dim_, J), Matrix::Zero(dim_ * dim_, J)};
    const ProcessKind k = &p == &parts_[0] ? ProcessKind::Blinded : ProcessKind::Unblinded;
    if (grouped_) {
      for (Eigen::Index g = 0; g < p.groups.cols(); ++g) {
        const Vector z = p.groups.col(g);
        const double ez = std::exp(th.dot(z));
        const Matrix zz = z * z.transpose();
        const Eigen::Map<const Vector> zzv(zz.data(), dim_ * dim_);
        for (Eigen::Index j = 0; j < J; ++j) {
          const double y = p.mass(j, g) * ez;
          if (y == 0.0) continue;
          r.s0[static_cast<std::size_t>(j)] += y;
          r.s1.col(j) += y * z;
          r.s2.col(j) += y * zzv;
        }
      }
    } else {
      for (const Span& sp : p.spans) {
        const SubjectProcess& s = proc_.subjects()[sp.subject];
        for (int j = sp.lo; j < sp.hi; ++j) {
          const double t = p.times[j];
          const Vector z = zvec(k, s, t);
          const double y = (sp.constant_weight ? sp.weight : weight_at(k, p, s, j)) * std::exp(th.dot(z));
          r.s0[j] += y;
          r.s1.col(j) += y * z;
          const Matrix zz = y * z * z.transpose();
          r.s2.col(j) += Eigen::Map<const Vector>(zz.data(), dim_ * dim_);
        }
      }
    }
    for (std::size_t j = 0; j < p.times.size(); ++j) {
      if (!(r.s0[j] > 0.0) || !std::isfinite(r.s0[j])) {
        throw DegenerateRiskSetError(std::string(k == ProcessKind::Blinded ? "blinded" : "unblinded") +
                                     " risk set is empty or degenerate at jump time " + std::to_string(p.times[j]));
      }
    }
    return r;
  }

  const WeightedProcesses& proc_;
  int dim_;
  bool grouped_ = false;
  Part parts_[2];
};

inline Vector estimating_function(const WeightedProcesses& proc, const Theta& theta) {
  return EstimatingEquation(proc).value(theta);
}

inline Matrix estimating_jacobian(const WeightedProcesses& proc, const Theta& theta) {
  return EstimatingEquation(proc).jacobian(theta);
}

}  // namespace vewane
