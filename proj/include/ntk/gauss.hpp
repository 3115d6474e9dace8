#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntk/error.hpp"
#include "ntk/random.hpp"

namespace ntk {

/// Covariance [[a, c], [c, b]] of a centered Gaussian pair (u, v).
struct Cov2 {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
};

inline bool is_psd(const Cov2& cov) {
  const double scale = std::max(cov.a, cov.b);
  return std::isfinite(cov.a) && std::isfinite(cov.b) && std::isfinite(cov.c) && cov.a >= 0.0 &&
         cov.b >= 0.0 && cov.c * cov.c <= cov.a * cov.b + 1e-12 * scale * scale;
}

inline void require_psd(const Cov2& cov) {
  if (!is_psd(cov)) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "covariance [[" << cov.a << ", " << cov.c << "], [" << cov.c << ", " << cov.b
        << "]] is not positive semi-definite";
    throw NumericalError(msg.str());
  }
}

/// A scalar integrand that reports where it is not smooth.
template <class F>
concept Integrand = requires(const F& f, double x) {
  { f(x) } -> std::convertible_to<double>;
  { f.breakpoints() } -> std::convertible_to<std::span<const double>>;
};

/// Wraps a smooth callable as an Integrand with no breakpoints.
template <class F>
struct Smooth {
  F fn;
  double operator()(double x) const { return fn(x); }
  std::span<const double> breakpoints() const { return {}; }
};
template <class F>
Smooth(F) -> Smooth<F>;

namespace detail {

struct NodesWeights {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// Gauss-Legendre rule on [-1, 1].
inline NodesWeights gauss_legendre(int n) {
  NodesWeights rule{std::vector<double>(n), std::vector<double>(n)};
  for (int i = 0; i < (n + 1) / 2; ++i) {
    double z = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
    double dp = 1.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 1; j <= n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j - 1.0) * z * p2 - (j - 1.0) * p3) / j;
      }
      dp = n * (z * p1 - p2) / (z * z - 1.0);
      const double step = p1 / dp;
      z -= step;
      if (std::abs(step) <= 1e-16) break;
    }
    rule.nodes[i] = -z;
    rule.nodes[n - 1 - i] = z;
    rule.weights[i] = rule.weights[n - 1 - i] = 2.0 / ((1.0 - z * z) * dp * dp);
  }
  return rule;
}

/// Gauss-Hermite rule for the weight exp(-x^2); weights sum to sqrt(pi).
inline NodesWeights gauss_hermite_physicists(int n) {
  NodesWeights rule{std::vector<double>(n), std::vector<double>(n)};
  const double pim4 = 1.0 / std::sqrt(std::sqrt(std::numbers::pi));
  double z = 0.0;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    if (i == 0)
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -0.16667);
    else if (i == 1)
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2)
      z = 1.86 * z - 0.86 * rule.nodes[n - 1];
    else if (i == 3)
      z = 1.91 * z - 0.91 * rule.nodes[n - 2];
    else
      z = 2.0 * z - rule.nodes[n - i + 1];
    double dp = 0.0;
    for (int iter = 0; iter < 200; ++iter) {
      // orthonormal Hermite recurrence
      double p1 = pim4, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      dp = std::sqrt(2.0 * n) * p2;
      const double step = p1 / dp;
      z -= step;
      if (std::abs(step) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    rule.nodes[n - 1 - i] = z;
    rule.nodes[i] = -z;
    rule.weights[i] = rule.weights[n - 1 - i] = 2.0 / (dp * dp);
  }
  return rule;
}

inline double std_normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * (std::numbers::inv_sqrtpi / std::numbers::sqrt2);
}

/// Fixed-capacity sorted set of breakpoints.
struct Breaks {
  std::array<double, 64> at{};
  std::size_t size = 0;
  void add(double x) {
    if (!std::isfinite(x) || size == at.size()) return;
    at[size++] = x;
  }
  void sort() { std::sort(at.begin(), at.begin() + static_cast<std::ptrdiff_t>(size)); }
};

}  // namespace detail

/// One-dimensional quadrature against the standard normal measure.
///
/// gauss_hermite: classic rule, exact for polynomials of degree 2m-1, blind
/// to breakpoints.
/// panel_legendre: the truncated line [-R, R] is split into m/16 equal panels
/// carrying 16-point Gauss-Legendre rules; integrand breakpoints split panels,
/// so piecewise-smooth integrands (ReLU, its step derivative) converge
/// spectrally.
class QuadratureRule {
 public:
  enum class Scheme { gauss_hermite, panel_legendre };

  static constexpr int kPanelPoints = 16;
  static constexpr int kDefaultOrder = 256;
  static constexpr double kDefaultHalfRange = 9.0;

  static QuadratureRule gauss_hermite(int order) {
    if (order < 1) throw ValidationError("quadrature order must be >= 1");
    auto raw = detail::gauss_hermite_physicists(order);
    QuadratureRule rule(Scheme::gauss_hermite, order, 0.0);
    rule.nodes_.resize(order);
    rule.weights_.resize(order);
    for (int i = 0; i < order; ++i) {
      rule.nodes_[i] = std::numbers::sqrt2 * raw.nodes[i];
      rule.weights_[i] = raw.weights[i] * std::numbers::inv_sqrtpi;
    }
    return rule;
  }

  static QuadratureRule panel_legendre(int order = kDefaultOrder, double half_range = kDefaultHalfRange) {
    if (order < kPanelPoints || order % kPanelPoints != 0)
      throw ValidationError("panel quadrature order must be a positive multiple of 16, got " +
                            std::to_string(order));
    if (!(half_range > 0.0)) throw ValidationError("panel quadrature half range must be positive");
    QuadratureRule rule(Scheme::panel_legendre, order, half_range);
    rule.reference_ = detail::gauss_legendre(kPanelPoints);
    const int panels = order / kPanelPoints;
    const double width = 2.0 * half_range / panels;
    for (int p = 0; p < panels; ++p) {
      const double lo = -half_range + p * width;
      for (int k = 0; k < kPanelPoints; ++k) {
        const double z = lo + 0.5 * width * (1.0 + rule.reference_.nodes[k]);
        rule.nodes_.push_back(z);
        rule.weights_.push_back(0.5 * width * rule.reference_.weights[k] * detail::std_normal_pdf(z));
      }
    }
    return rule;
  }

  static QuadratureRule make(Scheme scheme, int order) {
    return scheme == Scheme::gauss_hermite ? gauss_hermite(order) : panel_legendre(order);
  }

  Scheme scheme() const { return scheme_; }
  int order() const { return order_; }
  double half_range() const { return half_range_; }

  /// Nodes and weights with the standard normal density folded in.
  std::span<const double> nodes() const { return nodes_; }
  std::span<const double> weights() const { return weights_; }

  /// E[f(Z)], Z ~ N(0, 1).  `breaks` are points (in z) where f is not smooth.
  template <class F>
  double integrate(F&& f, const detail::Breaks& breaks = {}) const {
    if (scheme_ == Scheme::gauss_hermite || breaks.size == 0) {
      double acc = 0.0;
      for (std::size_t i = 0; i < nodes_.size(); ++i) acc += weights_[i] * f(nodes_[i]);
      return acc;
    }
    const int panels = order_ / kPanelPoints;
    const double width = 2.0 * half_range_ / panels;
    double acc = 0.0;
    for (int p = 0; p < panels; ++p) {
      const double lo = -half_range_ + p * width;
      const double hi = lo + width;
      double seg_lo = lo;
      bool split = false;
      for (std::size_t k = 0; k < breaks.size; ++k) {
        const double x = breaks.at[k];
        if (x > seg_lo && x < hi) {
          acc += segment(f, seg_lo, x);
          seg_lo = x;
          split = true;
        }
      }
      if (!split) {
        const std::size_t base = static_cast<std::size_t>(p) * kPanelPoints;
        for (std::size_t k = base; k < base + kPanelPoints; ++k) acc += weights_[k] * f(nodes_[k]);
      } else {
        acc += segment(f, seg_lo, hi);
      }
    }
    return acc;
  }

 private:
  QuadratureRule(Scheme scheme, int order, double half_range)
      : scheme_(scheme), order_(order), half_range_(half_range) {}

  template <class F>
  double segment(F& f, double lo, double hi) const {
    const double half = 0.5 * (hi - lo);
    const double mid = 0.5 * (hi + lo);
    double acc = 0.0;
    for (int k = 0; k < kPanelPoints; ++k) {
      const double z = mid + half * reference_.nodes[k];
      acc += reference_.weights[k] * detail::std_normal_pdf(z) * f(z);
    }
    return half * acc;
  }

  Scheme scheme_;
  int order_;
  double half_range_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
  detail::NodesWeights reference_;
};

namespace detail {

template <class G>
Breaks scaled_breaks(const G& g, double scale, double shift = 0.0) {
  Breaks out;
  for (double k : g.breakpoints()) out.add((k - shift) / scale);
  out.sort();
  return out;
}

}  // namespace detail

/// E[g(u) h(v)] for (u, v) ~ N(0, cov).
///
/// Uses u = sqrt(a) z1, v = (c / sqrt(a)) z1 + sqrt(det / a) z2 with a tensor
/// rule.  Nearly perfectly correlated pairs (det < 1e-12 ab) collapse to one
/// dimension.  Throws NumericalError when cov is not PSD.
template <Integrand G, Integrand H>
double expectation_pair(const Cov2& cov, const G& g, const H& h, const QuadratureRule& rule) {
  require_psd(cov);
  const double a = cov.a, b = cov.b;
  if (a == 0.0 && b == 0.0) return g(0.0) * h(0.0);
  if (a == 0.0) {
    const double sb = std::sqrt(b);
    return g(0.0) * rule.integrate([&](double z) { return h(sb * z); }, detail::scaled_breaks(h, sb));
  }
  if (b == 0.0) {
    const double sa = std::sqrt(a);
    return h(0.0) * rule.integrate([&](double z) { return g(sa * z); }, detail::scaled_breaks(g, sa));
  }
  const double bound = std::sqrt(a * b);
  const double c = std::clamp(cov.c, -bound, bound);
  const double det = a * b - c * c;
  const double sa = std::sqrt(a);
  if (det < 1e-12 * a * b) {
    const double sb = c >= 0.0 ? std::sqrt(b) : -std::sqrt(b);
    detail::Breaks breaks = detail::scaled_breaks(g, sa);
    for (double k : h.breakpoints()) breaks.add(k / sb);
    breaks.sort();
    return rule.integrate([&](double z) { return g(sa * z) * h(sb * z); }, breaks);
  }
  const double slope = c / sa;
  const double spread = std::sqrt(det / a);
  detail::Breaks outer = detail::scaled_breaks(g, sa);
  // Near a kink k of h the inner mean varies on the scale spread / |slope|
  // around z1 = k / slope; graded breaks resolve that layer.
  if (slope != 0.0 && rule.scheme() == QuadratureRule::Scheme::panel_legendre) {
    const double layer = spread / std::abs(slope);
    const double panel = 2.0 * rule.half_range() * QuadratureRule::kPanelPoints / rule.order();
    for (double k : h.breakpoints()) {
      const double centre = k / slope;
      for (double d = 0.25 * layer; d < panel; d *= 4.0) {
        outer.add(centre - d);
        outer.add(centre + d);
      }
    }
    outer.sort();
  }
  return rule.integrate(
      [&](double z1) {
        const double gv = g(sa * z1);
        if (gv == 0.0) return 0.0;
        const double shift = slope * z1;
        const detail::Breaks inner = detail::scaled_breaks(h, spread, shift);
        return gv * rule.integrate([&](double z2) { return h(shift + spread * z2); }, inner);
      },
      outer);
}

/// Arc-cosine formula for E[relu(u) relu(v)].
inline double relu_expectation_closed_form(const Cov2& cov) {
  if (!(cov.a > 0.0) || !(cov.b > 0.0))
    throw ValidationError("relu closed form requires strictly positive variances");
  require_psd(cov);
  const double norm = std::sqrt(cov.a * cov.b);
  const double theta = std::acos(std::clamp(cov.c / norm, -1.0, 1.0));
  return norm / (2.0 * std::numbers::pi) * (std::sin(theta) + (std::numbers::pi - theta) * std::cos(theta));
}

/// Arc-cosine formula for E[1(u > 0) 1(v > 0)].
inline double relu_derivative_expectation_closed_form(const Cov2& cov) {
  if (!(cov.a > 0.0) || !(cov.b > 0.0))
    throw ValidationError("relu closed form requires strictly positive variances");
  require_psd(cov);
  const double theta = std::acos(std::clamp(cov.c / std::sqrt(cov.a * cov.b), -1.0, 1.0));
  return (std::numbers::pi - theta) / (2.0 * std::numbers::pi);
}

inline double max_abs_asymmetry(const Eigen::MatrixXd& m) {
  return (m - m.transpose()).cwiseAbs().maxCoeff();
}

/// Lower-triangular L with L L^T = M for symmetric PSD M, rank deficiency
/// allowed.  Built from the eigendecomposition (negative round-off modes
/// clamped) followed by a QR re-triangularisation.
inline Eigen::MatrixXd psd_square_root(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw ValidationError("psd_square_root: matrix is not square");
  const Eigen::Index n = m.rows();
  if (n == 0) return m;
  const double scale = m.cwiseAbs().maxCoeff();
  if (max_abs_asymmetry(m) > 1e-12 * std::max(scale, 1e-300))
    throw ValidationError("psd_square_root: matrix is not symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  const double lambda_max = lambda(n - 1);
  if (lambda_max <= 0.0) {
    if (lambda(0) < -1e-300) throw NumericalError("psd_square_root: matrix is negative definite");
    return Eigen::MatrixXd::Zero(n, n);
  }
  if (lambda(0) < -1e-10 * lambda_max) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "psd_square_root: eigenvalue " << lambda(0) << " below -1e-10 * lambda_max (" << lambda_max << ")";
    throw NumericalError(msg.str());
  }
  const Eigen::MatrixXd factor =
      eig.eigenvectors() * lambda.cwiseMax(0.0).cwiseSqrt().asDiagonal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(factor.transpose());
  Eigen::MatrixXd lower = qr.matrixQR().triangularView<Eigen::Upper>().toDenseMatrix().transpose();
  for (Eigen::Index j = 0; j < n; ++j)
    if (lower(j, j) < 0.0) lower.col(j) = -lower.col(j);
  return lower;
}

/// L z with z i.i.d. standard normal drawn from the sampler.
inline Eigen::VectorXd sample_normal_vector(SeededSampler& sampler, const Eigen::MatrixXd& factor) {
  Eigen::VectorXd z(factor.cols());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = sampler.normal();
  return factor * z;
}

}  // namespace ntk
