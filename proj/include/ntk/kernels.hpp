#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ntk/activations.hpp"
#include "ntk/error.hpp"
#include "ntk/gauss.hpp"
#include "ntk/parallel.hpp"

namespace ntk {

/// How the first-layer covariance is scaled.
///   standard:       rho_w^2 x.y / n0 + rho_b^2 beta^2 (consistent with the NTK recursion)
///   paper_verbatim: rho_w^2 x.y / sqrt(n0) + beta rho_b^2
enum class Layer1Convention { standard, paper_verbatim };

inline std::string_view to_string(Layer1Convention c) {
  return c == Layer1Convention::standard ? "standard" : "paper_verbatim";
}

inline Layer1Convention parse_layer1_convention(std::string_view text) {
  if (text == "standard") return Layer1Convention::standard;
  if (text == "paper_verbatim") return Layer1Convention::paper_verbatim;
  throw ValidationError("unknown layer1_convention '" + std::string(text) + "'");
}

struct ArchitectureConfig {
  int n0 = 1;
  int depth = 2;       // L: number of affine layers
  double beta = 1.0;   // bias intensity
  double rho_w = 1.0;  // weight standard deviation
  double rho_b = 1.0;  // bias standard deviation
  Layer1Convention layer1_convention = Layer1Convention::standard;
  int outputs = 1;  // n_L

  void validate() const {
    if (n0 < 1) throw ValidationError("n0 must be >= 1");
    if (depth < 1) throw ValidationError("depth must be >= 1");
    if (outputs < 1) throw ValidationError("outputs must be >= 1");
    if (!(beta >= 0.0) || !std::isfinite(beta)) throw ValidationError("beta must be finite and >= 0");
    if (!(rho_w > 0.0) || !std::isfinite(rho_w)) throw ValidationError("rho_w must be finite and > 0");
    if (!(rho_b > 0.0) || !std::isfinite(rho_b)) throw ValidationError("rho_b must be finite and > 0");
  }
};

/// N inputs in R^{n0} (one per row) with optional targets in R^{n_L}.
class TrainingSet {
 public:
  using Index = Eigen::Index;
  using IndexPair = std::pair<Index, Index>;

  TrainingSet() = default;
  explicit TrainingSet(Eigen::MatrixXd inputs, std::optional<Eigen::MatrixXd> targets = std::nullopt)
      : inputs_(std::move(inputs)), targets_(std::move(targets)) {
    if (!inputs_.allFinite()) throw ValidationError("training inputs must be finite");
    if (targets_) {
      if (targets_->rows() != inputs_.rows())
        throw ValidationError("targets row count does not match inputs");
      if (!targets_->allFinite()) throw ValidationError("training targets must be finite");
    }
  }

  Index size() const { return inputs_.rows(); }
  Index dim() const { return inputs_.cols(); }
  const Eigen::MatrixXd& inputs() const { return inputs_; }
  Eigen::VectorXd input(Index i) const { return inputs_.row(i).transpose(); }
  const std::optional<Eigen::MatrixXd>& targets() const { return targets_; }
  bool has_targets() const { return targets_.has_value(); }

  /// First pair of identical inputs (exact comparison).
  std::optional<IndexPair> repeated_pair() const {
    for (Index i = 0; i < size(); ++i)
      for (Index j = i + 1; j < size(); ++j)
        if (inputs_.row(i) == inputs_.row(j)) return IndexPair{i, j};
    return std::nullopt;
  }

  /// First pair of parallel inputs: |x|^2 |y|^2 - (x.y)^2 <= tol |x|^2 |y|^2.
  /// A zero input is proportional to everything.
  std::optional<IndexPair> proportional_pair(double relative_tol = 1e-12) const {
    for (Index i = 0; i < size(); ++i) {
      for (Index j = i + 1; j < size(); ++j) {
        const double xx = inputs_.row(i).squaredNorm();
        const double yy = inputs_.row(j).squaredNorm();
        const double xy = inputs_.row(i).dot(inputs_.row(j));
        if (xx * yy - xy * xy <= relative_tol * xx * yy) return IndexPair{i, j};
      }
    }
    return std::nullopt;
  }

  bool pairwise_distinct() const { return !repeated_pair(); }
  bool pairwise_non_proportional(double relative_tol = 1e-12) const { return !proportional_pair(relative_tol); }

  TrainingSet permuted(std::span<const Index> order) const {
    Eigen::MatrixXd in(size(), dim());
    std::optional<Eigen::MatrixXd> out;
    if (targets_) out = Eigen::MatrixXd(size(), targets_->cols());
    for (Index i = 0; i < size(); ++i) {
      in.row(i) = inputs_.row(order[static_cast<std::size_t>(i)]);
      if (out) out->row(i) = targets_->row(order[static_cast<std::size_t>(i)]);
    }
    return TrainingSet(std::move(in), std::move(out));
  }

 private:
  Eigen::MatrixXd inputs_;
  std::optional<Eigen::MatrixXd> targets_;
};

enum class KernelKind { sigma_hat, sigma, sigma_dot, theta };

inline std::string_view to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::sigma_hat:
      return "sigma_hat";
    case KernelKind::sigma:
      return "sigma";
    case KernelKind::sigma_dot:
      return "sigma_dot";
    case KernelKind::theta:
      return "theta";
  }
  return "unknown";
}

inline KernelKind parse_kernel_kind(std::string_view text) {
  for (KernelKind k : {KernelKind::sigma_hat, KernelKind::sigma, KernelKind::sigma_dot, KernelKind::theta})
    if (to_string(k) == text) return k;
  throw ValidationError("unknown kernel kind '" + std::string(text) + "'");
}

/// A kernel evaluated over a training set.
struct KernelMatrix {
  Eigen::MatrixXd values;
  KernelKind kind = KernelKind::theta;
  int layer = 1;

  Eigen::Index size() const { return values.rows(); }
};

struct KernelOptions {
  QuadratureRule rule = QuadratureRule::panel_legendre();
  /// Arc-cosine / linear closed forms for relu and identity.  A matrix is
  /// either entirely closed-form or entirely quadrature.
  bool closed_form = true;
  unsigned threads = 0;
};

namespace detail {

inline void require_dim(const TrainingSet& x, const ArchitectureConfig& cfg) {
  cfg.validate();
  if (x.size() == 0) throw ValidationError("training set is empty");
  if (x.dim() != cfg.n0)
    throw ValidationError("training inputs have dimension " + std::to_string(x.dim()) + ", config n0 is " +
                          std::to_string(cfg.n0));
}

enum class Moment { value, derivative };

inline bool has_closed_form(const ActivationSpec& spec) {
  return spec.kind() == ActivationSpec::Kind::relu || spec.kind() == ActivationSpec::Kind::identity;
}

inline double closed_form_entry(const ActivationSpec& spec, Moment moment, const Cov2& cov) {
  require_psd(cov);
  if (spec.kind() == ActivationSpec::Kind::identity) return moment == Moment::value ? cov.c : 1.0;
  if (cov.a == 0.0 || cov.b == 0.0) return 0.0;  // relu(0) = relu'(0) = 0
  return moment == Moment::value ? relu_expectation_closed_form(cov)
                                 : relu_derivative_expectation_closed_form(cov);
}

/// [E_{f ~ prev}[phi(f(x_i)) phi(f(x_j))]]_{ij} with phi = sigma or sigma-dot.
inline Eigen::MatrixXd expectation_matrix(const KernelMatrix& prev, const ActivationSpec& spec, Moment moment,
                                          const KernelOptions& opts) {
  const Eigen::Index n = prev.size();
  const bool closed = opts.closed_form && has_closed_form(spec);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;
  pairs.reserve(static_cast<std::size_t>(n * (n + 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i; j < n; ++j) pairs.emplace_back(i, j);
  Eigen::MatrixXd out(n, n);
  parallel_for(pairs.size(), opts.threads, [&](std::size_t k) {
    const auto [i, j] = pairs[k];
    // the integrand is symmetric in (u, v); a <= b makes entries independent of input order
    const double vi = prev.values(i, i), vj = prev.values(j, j);
    const Cov2 cov{std::min(vi, vj), std::max(vi, vj), prev.values(i, j)};
    try {
      double e;
      if (closed)
        e = closed_form_entry(spec, moment, cov);
      else if (moment == Moment::value)
        e = expectation_pair(cov, value_of(spec), value_of(spec), opts.rule);
      else
        e = expectation_pair(cov, derivative_of(spec), derivative_of(spec), opts.rule);
      out(i, j) = e;
      out(j, i) = e;
    } catch (const NumericalError& err) {
      std::ostringstream msg;
      msg << to_string(prev.kind) << " layer " << prev.layer << " entry (" << i << ", " << j << "): " << err.what();
      throw NumericalError(msg.str());
    }
  });
  return out;
}

}  // namespace detail

/// First-layer preactivation covariance.
inline KernelMatrix sigma_hat_layer1(const TrainingSet& x, const ArchitectureConfig& cfg) {
  detail::require_dim(x, cfg);
  const Eigen::MatrixXd gram = x.inputs() * x.inputs().transpose();
  const double w2 = cfg.rho_w * cfg.rho_w;
  const double b2 = cfg.rho_b * cfg.rho_b;
  Eigen::MatrixXd values;
  if (cfg.layer1_convention == Layer1Convention::standard)
    values = (w2 / cfg.n0) * gram.array() + b2 * cfg.beta * cfg.beta;
  else
    values = (w2 / std::sqrt(static_cast<double>(cfg.n0))) * gram.array() + cfg.beta * b2;
  values = 0.5 * (values + values.transpose()).eval();
  return {std::move(values), KernelKind::sigma_hat, 1};
}

/// First-layer NTK: x.y / n0 + beta^2.
inline KernelMatrix theta_layer1(const TrainingSet& x, const ArchitectureConfig& cfg) {
  detail::require_dim(x, cfg);
  Eigen::MatrixXd values = (x.inputs() * x.inputs().transpose()).array() / cfg.n0 + cfg.beta * cfg.beta;
  values = 0.5 * (values + values.transpose()).eval();
  return {std::move(values), KernelKind::theta, 1};
}

inline KernelMatrix sigma_hat_next(const KernelMatrix& prev, const ActivationSpec& spec,
                                   const ArchitectureConfig& cfg, const KernelOptions& opts = {}) {
  const Eigen::MatrixXd e = detail::expectation_matrix(prev, spec, detail::Moment::value, opts);
  return {(cfg.rho_w * cfg.rho_w * e).array() + cfg.rho_b * cfg.rho_b * cfg.beta * cfg.beta, KernelKind::sigma_hat,
          prev.layer + 1};
}

inline KernelMatrix sigma_next(const KernelMatrix& prev_hat, const ActivationSpec& spec,
                               const ArchitectureConfig& cfg, const KernelOptions& opts = {}) {
  const Eigen::MatrixXd e = detail::expectation_matrix(prev_hat, spec, detail::Moment::value, opts);
  return {e.array() + cfg.beta * cfg.beta, KernelKind::sigma, prev_hat.layer + 1};
}

inline KernelMatrix sigma_dot_next(const KernelMatrix& prev_hat, const ActivationSpec& spec,
                                   const ArchitectureConfig& cfg, const KernelOptions& opts = {}) {
  const Eigen::MatrixXd e = detail::expectation_matrix(prev_hat, spec, detail::Moment::derivative, opts);
  return {cfg.rho_w * cfg.rho_w * e, KernelKind::sigma_dot, prev_hat.layer + 1};
}

/// Every kernel of the recursion up to a given depth.  sigma_hat and theta
/// hold layers 1..L; sigma and sigma_dot hold layers 2..L.
struct KernelStack {
  std::vector<KernelMatrix> sigma_hat;
  std::vector<KernelMatrix> sigma;
  std::vector<KernelMatrix> sigma_dot;
  std::vector<KernelMatrix> theta;
};

inline KernelStack kernel_stack(const TrainingSet& x, const ActivationSpec& spec, const ArchitectureConfig& cfg,
                                const KernelOptions& opts, int depth) {
  if (depth < 1) throw ValidationError("depth must be >= 1");
  KernelStack stack;
  stack.sigma_hat.push_back(sigma_hat_layer1(x, cfg));
  stack.theta.push_back(theta_layer1(x, cfg));
  const double w2 = cfg.rho_w * cfg.rho_w;
  const double b2 = cfg.rho_b * cfg.rho_b;
  const double beta2 = cfg.beta * cfg.beta;
  for (int layer = 2; layer <= depth; ++layer) {
    const KernelMatrix& prev = stack.sigma_hat.back();
    // sigma-hat and sigma share the same Gaussian moment
    const Eigen::MatrixXd moment = detail::expectation_matrix(prev, spec, detail::Moment::value, opts);
    KernelMatrix dot = sigma_dot_next(prev, spec, cfg, opts);
    KernelMatrix sig{moment.array() + beta2, KernelKind::sigma, layer};
    KernelMatrix theta{stack.theta.back().values.cwiseProduct(dot.values) + sig.values, KernelKind::theta, layer};
    stack.sigma_hat.push_back({(w2 * moment).array() + b2 * beta2, KernelKind::sigma_hat, layer});
    stack.sigma.push_back(std::move(sig));
    stack.sigma_dot.push_back(std::move(dot));
    stack.theta.push_back(std::move(theta));
  }
  return stack;
}

/// Infinite-width NTK matrices for layers 1..depth.
inline std::vector<KernelMatrix> theta_recursion(const TrainingSet& x, const ActivationSpec& spec,
                                                 const ArchitectureConfig& cfg, const KernelOptions& opts,
                                                 int depth) {
  return kernel_stack(x, spec, cfg, opts, depth).theta;
}

}  // namespace ntk
