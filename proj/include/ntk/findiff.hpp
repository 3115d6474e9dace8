#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ntk/activations.hpp"
#include "ntk/error.hpp"
#include "ntk/kernels.hpp"
#include "ntk/random.hpp"

namespace ntk::findiff {

using Fn = std::function<double(double)>;

/// Mixed-increment difference: Delta^{n+1}_{(h, h_{n+1})} f(x) = Delta^n_h f(x + h_{n+1}) - Delta^n_h f(x).
inline double nth_difference(const Fn& f, double x, std::span<const double> h) {
  if (h.empty()) return f(x);
  const auto head = h.first(h.size() - 1);
  return nth_difference(f, x + h.back(), head) - nth_difference(f, x, head);
}

inline double nth_difference(const Fn& f, double x, const std::vector<double>& h) {
  return nth_difference(f, x, std::span<const double>(h));
}

inline double binomial(int n, int k) {
  double c = 1.0;
  for (int i = 1; i <= k; ++i) c = c * (n - k + i) / i;
  return std::round(c);
}

/// Value of Delta^n_h f(x) together with sum_k C(n,k) |f(x + k h)|, the
/// magnitude against which rounding in the sum is measured.
struct Difference {
  double value = 0.0;
  double magnitude = 0.0;
};

inline Difference uniform_difference(const Fn& f, double x, double h, int n) {
  if (n < 0) throw ValidationError("difference order must be >= 0");
  Difference d;
  for (int k = 0; k <= n; ++k) {
    const double c = binomial(n, k);
    const double fk = f(x + k * h);
    d.value += ((n - k) % 2 == 0 ? c : -c) * fk;
    d.magnitude += c * std::abs(fk);
  }
  return d;
}

/// Delta^n_h f(x) = sum_k (-1)^{n-k} C(n,k) f(x + k h).
inline double uniform_nth_difference(const Fn& f, double x, double h, int n) {
  return uniform_difference(f, x, h, n).value;
}

/// a^(n)_j, j = 0..n(k-1): the n-fold convolution of k ones.
inline std::vector<double> kh_coefficients(int n, int k) {
  if (n < 1 || k < 1) throw ValidationError("kh_coefficients needs n, k >= 1");
  std::vector<double> a(static_cast<std::size_t>(k), 1.0);
  for (int step = 1; step < n; ++step) {
    std::vector<double> next(a.size() + static_cast<std::size_t>(k) - 1, 0.0);
    for (std::size_t j = 0; j < a.size(); ++j)
      for (int i = 0; i < k; ++i) next[j + static_cast<std::size_t>(i)] += a[j];
    a = std::move(next);
  }
  return a;
}

/// Left minus right side of an identity, with the sum of absolute term
/// magnitudes as the natural rounding scale.
struct IdentityResidual {
  double residual = 0.0;
  double scale = 0.0;
  double relative() const { return scale > 0.0 ? std::abs(residual) / scale : std::abs(residual); }
};

/// Delta^n_{kh} p(y) - sum_j a^(n)_j Delta^n_h p(y + j h).
inline IdentityResidual check_kh_identity(const Fn& p, double y, double h, int n, int k) {
  const auto a = kh_coefficients(n, k);
  const Difference lhs = uniform_difference(p, y, k * h, n);
  IdentityResidual r{lhs.value, lhs.magnitude};
  for (std::size_t j = 0; j < a.size(); ++j) {
    const Difference d = uniform_difference(p, y + static_cast<double>(j) * h, h, n);
    r.residual -= a[j] * d.value;
    r.scale += a[j] * d.magnitude;
  }
  return r;
}

/// Delta^{n+1}_h (x g(x)) - [x Delta^{n+1}_h g(x) + (n+1) h Delta^n_h g(x+h)].
inline IdentityResidual check_leibniz_identity(const Fn& g, double x, double h, int n) {
  if (n < 0) throw ValidationError("check_leibniz_identity needs n >= 0");
  const Difference lhs = uniform_difference([&](double t) { return t * g(t); }, x, h, n + 1);
  const Difference first = uniform_difference(g, x, h, n + 1);
  const Difference second = uniform_difference(g, x + h, h, n);
  return {lhs.value - (x * first.value + (n + 1) * h * second.value),
          lhs.magnitude + std::abs(x) * first.magnitude + (n + 1) * std::abs(h) * second.magnitude};
}

/// Difference in y of f(alpha x + beta y) against (Delta_{beta h} f)(alpha x + beta y).
inline IdentityResidual chain_shift_check(const Fn& f, double alpha, double beta, double x, double y, double h) {
  const double lhs_hi = f(alpha * x + beta * (y + h));
  const double lhs_lo = f(alpha * x + beta * y);
  const double base = alpha * x + beta * y;
  const double rhs_hi = f(base + beta * h);
  const double rhs_lo = f(base);
  return {(lhs_hi - lhs_lo) - (rhs_hi - rhs_lo),
          std::abs(lhs_hi) + std::abs(lhs_lo) + std::abs(rhs_hi) + std::abs(rhs_lo)};
}

struct Interval {
  double lo = -1.0;
  double hi = 1.0;
  double length() const { return hi - lo; }
};

inline Interval parse_interval(const std::string& text) {
  const auto colon = text.find(':', 1);
  if (colon == std::string::npos) throw ValidationError("domain must look like lo:hi, got '" + text + "'");
  Interval d;
  try {
    std::size_t used = 0;
    d.lo = std::stod(text.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument("trailing");
    const std::string rest = text.substr(colon + 1);
    d.hi = std::stod(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("trailing");
  } catch (const std::logic_error&) {
    throw ValidationError("domain must look like lo:hi, got '" + text + "'");
  }
  if (!(d.lo < d.hi) || !std::isfinite(d.lo) || !std::isfinite(d.hi))
    throw ValidationError("domain needs finite lo < hi");
  return d;
}

struct DegreeOptions {
  int stencils = 200;
  double tol = 1e-7;
  std::uint64_t seed = 0;
};

struct DegreeVerdict {
  bool polynomial = false;
  int degree = -1;          // valid when polynomial
  int vanishing_order = 0;  // n with Delta^n == 0, degree + 1
  int max_order = 0;
  double scale = 0.0;
  std::vector<double> max_relative_difference;  // per order 1..tested
};

/// Smallest n <= max_order with |Delta^n_h f(x)| <= tol * scale on every
/// stencil of a random family (x uniform in the domain, h log-uniform in
/// [1e-3, 0.25] * |domain|); scale is max |f| over the domain and stencils.
inline DegreeVerdict polynomial_degree_estimate(const Fn& f, Interval domain, int max_order,
                                                const DegreeOptions& opts = {}) {
  if (max_order < 1) throw ValidationError("max_order must be >= 1");
  if (!(domain.lo < domain.hi)) throw ValidationError("domain needs lo < hi");
  if (opts.stencils < 1 || !(opts.tol > 0.0)) throw ValidationError("stencil count and tol must be positive");
  const double len = domain.length();
  const double log_lo = std::log(1e-3 * len);
  const double log_hi = std::log(0.25 * len);

  DegreeVerdict verdict;
  verdict.max_order = max_order;
  double scale = 0.0;
  for (int i = 0; i <= 1000; ++i) scale = std::max(scale, std::abs(f(domain.lo + len * i / 1000.0)));

  SeededSampler root(opts.seed);
  for (int n = 1; n <= max_order; ++n) {
    SeededSampler s = root.derive(static_cast<std::uint64_t>(n));
    std::vector<double> values;
    values.reserve(static_cast<std::size_t>(opts.stencils));
    for (int k = 0; k < opts.stencils; ++k) {
      const double x = domain.lo + len * s.uniform();
      const double h = std::exp(log_lo + (log_hi - log_lo) * s.uniform());
      values.push_back(uniform_nth_difference(f, x, h, n));
      for (int m = 0; m <= n; ++m) scale = std::max(scale, std::abs(f(x + m * h)));
    }
    double worst = 0.0;
    for (double v : values) worst = std::max(worst, std::abs(v));
    const double rel = scale > 0.0 ? worst / scale : worst;
    verdict.max_relative_difference.push_back(rel);
    if (worst <= opts.tol * scale) {
      verdict.polynomial = true;
      verdict.vanishing_order = n;
      verdict.degree = n - 1;
      break;
    }
  }
  verdict.scale = scale;
  return verdict;
}

struct ProbePair {
  Eigen::VectorXd z;
  Eigen::VectorXd w;
};

struct AlignmentCheck {
  bool totally_non_aligned = true;
  std::optional<std::pair<Eigen::Index, Eigen::Index>> offending;  // zero-based
};

/// Every minor z_i w_j - z_j w_i must exceed 1e-12 (|z_i w_j| + |z_j w_i|).
inline AlignmentCheck total_nonalignment_check(const ProbePair& pair) {
  if (pair.z.size() != pair.w.size()) throw ValidationError("probe vectors must have equal length");
  const Eigen::Index n = pair.z.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double a = pair.z(i) * pair.w(j);
      const double b = pair.z(j) * pair.w(i);
      if (!(std::abs(a - b) > 1e-12 * (std::abs(a) + std::abs(b)))) return {false, std::pair{i, j}};
    }
  }
  return {};
}

using Grid = std::vector<std::pair<double, double>>;

/// Uniform n x n lattice on [lo, hi]^2.
inline Grid lattice_grid(int n = 41, double lo = -3.0, double hi = 3.0) {
  if (n < 2) throw ValidationError("lattice needs at least 2 points per side");
  Grid grid;
  grid.reserve(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) grid.emplace_back(lo + (hi - lo) * i / (n - 1), lo + (hi - lo) * j / (n - 1));
  return grid;
}

/// F(g, i) = sigma(theta1_g z_i + theta2_g w_i).
inline Eigen::MatrixXd feature_matrix(const ActivationSpec& spec, const ProbePair& pair, const Grid& grid) {
  if (pair.z.size() != pair.w.size()) throw ValidationError("probe vectors must have equal length");
  Eigen::MatrixXd f(static_cast<Eigen::Index>(grid.size()), pair.z.size());
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (Eigen::Index i = 0; i < pair.z.size(); ++i)
      f(static_cast<Eigen::Index>(g), i) = spec.value(grid[g].first * pair.z(i) + grid[g].second * pair.w(i));
  return f;
}

/// max over the grid of |sum_i u_i sigma(theta1 z_i + theta2 w_i)|.
inline double linear_combination_residual(const ActivationSpec& spec, const Eigen::VectorXd& u,
                                          const ProbePair& pair, const Grid& grid = lattice_grid()) {
  if (u.size() != pair.z.size()) throw ValidationError("u must have the probe length");
  if (u.isZero(0.0)) throw ValidationError("u must be nonzero");
  return (feature_matrix(spec, pair, grid) * u).cwiseAbs().maxCoeff();
}

/// Lower bound on linear_combination_residual over unit u: for any unit u,
/// max_g |(F u)_g| >= |F u|_2 / sqrt(G) >= sigma_min(F) / sqrt(G).
inline double annihilation_floor(const ActivationSpec& spec, const ProbePair& pair, const Grid& grid = lattice_grid()) {
  const Eigen::MatrixXd f = feature_matrix(spec, pair, grid);
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(f);
  return svd.singularValues().minCoeff() / std::sqrt(static_cast<double>(grid.size()));
}

/// Smallest residual over `count` random unit directions.
inline double min_residual_random_directions(const ActivationSpec& spec, const ProbePair& pair, int count,
                                             SeededSampler sampler, const Grid& grid = lattice_grid()) {
  const Eigen::MatrixXd f = feature_matrix(spec, pair, grid);
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd u(pair.z.size());
  for (int c = 0; c < count; ++c) {
    for (Eigen::Index i = 0; i < u.size(); ++i) u(i) = sampler.normal();
    u.normalize();
    best = std::min(best, (f * u).cwiseAbs().maxCoeff());
  }
  return best;
}

/// Rows (z_i^a w_i^b) for a + b <= d, graded by total degree.
inline Eigen::MatrixXd moment_matrix(int degree, const ProbePair& pair) {
  if (degree < 0) throw ValidationError("degree must be >= 0");
  const Eigen::Index cols = static_cast<Eigen::Index>(degree + 1) * (degree + 2) / 2;
  Eigen::MatrixXd m(pair.z.size(), cols);
  for (Eigen::Index i = 0; i < pair.z.size(); ++i) {
    Eigen::Index c = 0;
    for (int total = 0; total <= degree; ++total)
      for (int a = total; a >= 0; --a) m(i, c++) = std::pow(pair.z(i), a) * std::pow(pair.w(i), total - a);
  }
  return m;
}

/// Unit u with u^T M = 0 for the moment matrix M, so that
/// sum_i u_i p(theta1 z_i + theta2 w_i) = 0 for every polynomial p of degree
/// <= d.  Present whenever M has numerical rank < N.
inline std::optional<Eigen::VectorXd> construct_degenerate_direction(int degree, const ProbePair& pair,
                                                                     double rank_tol = 1e-12) {
  if (!total_nonalignment_check(pair).totally_non_aligned)
    throw ValidationError("construct_degenerate_direction needs a totally non-aligned pair");
  const Eigen::MatrixXd m = moment_matrix(degree, pair);
  const Eigen::Index n = m.rows();
  // Left singular vectors of M are the eigenvectors of M M^T (N x N).
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullU);
  const Eigen::VectorXd& s = svd.singularValues();
  const double top = s.size() > 0 ? s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > rank_tol * top) ++rank;
  if (rank >= n) return std::nullopt;
  Eigen::VectorXd u = svd.matrixU().col(n - 1);
  if (u(u.size() - 1) < 0.0) u = -u;
  return u.normalized();
}

inline Eigen::VectorXd vandermonde(double x, Eigen::Index r) {
  Eigen::VectorXd y(r);
  double p = 1.0;
  for (Eigen::Index j = 0; j < r; ++j) {
    y(j) = p;
    p *= x;
  }
  return y;
}

struct Probe {
  double x = 0.0;
  Eigen::VectorXd y;
};

inline constexpr int kMaxProbe = 100000;

inline bool pairwise_distinct(const Eigen::VectorXd& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return std::adjacent_find(s.begin(), s.end()) == s.end();
}

/// y = (1, x, ..., x^{r-1}) at the first integer x >= 1 making B y pairwise distinct.
inline Probe distinct_combination_probe(const Eigen::MatrixXd& b) {
  if (auto rep = TrainingSet(b).repeated_pair())
    throw ValidationError("rows " + std::to_string(rep->first) + " and " + std::to_string(rep->second) +
                          " of B are identical");
  for (int x = 1; x <= kMaxProbe; ++x) {
    Eigen::VectorXd y = vandermonde(x, b.cols());
    if (pairwise_distinct(b * y)) return {static_cast<double>(x), std::move(y)};
  }
  throw NumericalError("no separating integer probe found up to " + std::to_string(kMaxProbe));
}

struct PairProbe {
  double x1 = 0.0;
  double x2 = 0.0;
  ProbePair pair;
};

/// w = B y(x1) with no zero entry, then z = B y(x2) separating the ratios z_i / w_i.
inline PairProbe nonaligned_pair_probe(const Eigen::MatrixXd& b) {
  if (auto prop = TrainingSet(b).proportional_pair())
    throw ValidationError("rows " + std::to_string(prop->first) + " and " + std::to_string(prop->second) +
                          " of B are proportional");
  PairProbe out;
  int x1 = 1;
  for (; x1 <= kMaxProbe; ++x1) {
    out.pair.w = b * vandermonde(x1, b.cols());
    if ((out.pair.w.array() != 0.0).all()) break;
  }
  if (x1 > kMaxProbe) throw NumericalError("no integer probe with all-nonzero entries found");
  out.x1 = x1;
  for (int x2 = 1; x2 <= kMaxProbe; ++x2) {
    if (x2 == x1) continue;
    out.pair.z = b * vandermonde(x2, b.cols());
    if (total_nonalignment_check(out.pair).totally_non_aligned) {
      out.x2 = x2;
      return out;
    }
  }
  throw NumericalError("no separating integer probe found up to " + std::to_string(kMaxProbe));
}

struct SuiteRecord {
  std::string identity;
  int trials = 0;
  double max_relative_residual = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

namespace detail {

/// Trial function t: tanh, erf, gelu, relu, or a random polynomial of degree <= 6.
inline Fn trial_function(int t, SeededSampler& s, std::string& label) {
  static const char* names[] = {"tanh", "erf", "gelu", "relu"};
  const int pick = t % 5;
  if (pick < 4) {
    label = names[pick];
    return [spec = ActivationSpec::parse(names[pick])](double x) { return spec.value(x); };
  }
  const int degree = static_cast<int>(s.uniform() * 7.0);
  std::vector<double> c(static_cast<std::size_t>(degree) + 1);
  for (double& v : c) v = s.normal();
  label = "polynomial";
  return [spec = ActivationSpec::polynomial(c)](double x) { return spec.value(x); };
}

inline double uniform_in(SeededSampler& s, double lo, double hi) { return lo + (hi - lo) * s.uniform(); }

inline int integer_in(SeededSampler& s, int lo, int hi) {
  return std::min(hi, lo + static_cast<int>(s.uniform() * (hi - lo + 1)));
}

}  // namespace detail

/// Randomised trials of the (kh), Leibniz and chain-shift identities with
/// n, k <= 6, plus exact row sums of kh_coefficients.
inline std::vector<SuiteRecord> identity_suite(int trials, std::uint64_t seed, double tol = 1e-9) {
  if (trials < 1) throw ValidationError("trials must be >= 1");
  const SeededSampler root(seed);
  std::vector<SuiteRecord> out;
  std::string label;

  SuiteRecord kh{"kh_identity", trials, 0.0, tol, false};
  SeededSampler s = root.derive(1);
  for (int t = 0; t < trials; ++t) {
    const Fn f = detail::trial_function(t, s, label);
    const double y = detail::uniform_in(s, -1, 1), h = detail::uniform_in(s, -1, 1);
    const int n = detail::integer_in(s, 1, 6), k = detail::integer_in(s, 1, 6);
    kh.max_relative_residual = std::max(kh.max_relative_residual, check_kh_identity(f, y, h, n, k).relative());
  }
  out.push_back(kh);

  SuiteRecord leibniz{"leibniz_identity", trials, 0.0, tol, false};
  s = root.derive(2);
  for (int t = 0; t < trials; ++t) {
    const Fn f = detail::trial_function(t, s, label);
    const double x = detail::uniform_in(s, -2, 2), h = detail::uniform_in(s, -1, 1);
    const int n = detail::integer_in(s, 0, 6);
    leibniz.max_relative_residual =
        std::max(leibniz.max_relative_residual, check_leibniz_identity(f, x, h, n).relative());
  }
  out.push_back(leibniz);

  SuiteRecord chain{"chain_shift", trials, 0.0, tol, false};
  s = root.derive(3);
  for (int t = 0; t < trials; ++t) {
    const Fn f = detail::trial_function(t, s, label);
    const double a = detail::uniform_in(s, -2, 2), b = detail::uniform_in(s, -2, 2);
    const double x = detail::uniform_in(s, -2, 2), y = detail::uniform_in(s, -2, 2), h = detail::uniform_in(s, -1, 1);
    chain.max_relative_residual = std::max(chain.max_relative_residual, chain_shift_check(f, a, b, x, y, h).relative());
  }
  out.push_back(chain);

  SuiteRecord sums{"kh_coefficient_row_sums", 36, 0.0, 0.0, false};
  for (int n = 1; n <= 6; ++n)
    for (int k = 1; k <= 6; ++k) {
      const auto a = kh_coefficients(n, k);
      double total = 0.0;
      for (double v : a) total += v;
      sums.max_relative_residual = std::max(sums.max_relative_residual, std::abs(total - std::pow(k, n)));
    }
  out.push_back(sums);

  for (auto& r : out) r.passed = r.max_relative_residual <= r.tolerance;
  return out;
}

}  // namespace ntk::findiff
