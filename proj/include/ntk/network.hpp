#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntk/activations.hpp"
#include "ntk/error.hpp"
#include "ntk/kernels.hpp"
#include "ntk/parallel.hpp"
#include "ntk/random.hpp"

namespace ntk {

/// Weights W^(l) (n_{l+1} x n_l) and biases b^(l) (n_{l+1}) for l = 0..L-1.
/// Flattened order: per layer, W row-major then b.
struct Params {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::vector<int> widths;  // n_0, ..., n_L

  static Params zeros(std::vector<int> widths) {
    if (widths.size() < 2) throw ValidationError("a network needs at least input and output widths");
    for (int w : widths)
      if (w < 1) throw ValidationError("layer widths must be >= 1");
    Params p;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
      p.weights.emplace_back(Eigen::MatrixXd::Zero(widths[l + 1], widths[l]));
      p.biases.emplace_back(Eigen::VectorXd::Zero(widths[l + 1]));
    }
    p.widths = std::move(widths);
    return p;
  }

  int depth() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  Eigen::Index size() const {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  void validate() const {
    if (weights.size() != biases.size() || widths.size() != weights.size() + 1)
      throw ValidationError("parameter layer counts are inconsistent");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != widths[l + 1] || weights[l].cols() != widths[l] || biases[l].size() != widths[l + 1])
        throw ValidationError("parameter shapes do not chain at layer " + std::to_string(l));
    }
  }

  Eigen::VectorXd flatten() const {
    Eigen::VectorXd out(size());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index i = 0; i < weights[l].rows(); ++i)
        for (Eigen::Index j = 0; j < weights[l].cols(); ++j) out(k++) = weights[l](i, j);
      out.segment(k, biases[l].size()) = biases[l];
      k += biases[l].size();
    }
    return out;
  }

  void unflatten(const Eigen::VectorXd& flat) {
    if (flat.size() != size()) throw ValidationError("flat parameter vector has the wrong length");
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      for (Eigen::Index i = 0; i < weights[l].rows(); ++i)
        for (Eigen::Index j = 0; j < weights[l].cols(); ++j) weights[l](i, j) = flat(k++);
      biases[l] = flat.segment(k, biases[l].size());
      k += biases[l].size();
    }
  }

  /// this += scale * other (same shapes).
  void axpy(double scale, const Params& other) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      weights[l] += scale * other.weights[l];
      biases[l] += scale * other.biases[l];
    }
  }

  void set_zero() {
    for (auto& w : weights) w.setZero();
    for (auto& b : biases) b.setZero();
  }
};

/// Layer widths (n0, hidden..., outputs) with equal hidden widths.
inline std::vector<int> equal_widths(const ArchitectureConfig& cfg, int hidden) {
  std::vector<int> widths(static_cast<std::size_t>(cfg.depth) + 1, hidden);
  widths.front() = cfg.n0;
  widths.back() = cfg.outputs;
  return widths;
}

/// i.i.d. N(0, rho_w^2) weights and N(0, rho_b^2) biases.
inline Params init_params(const ArchitectureConfig& cfg, const std::vector<int>& widths, SeededSampler& sampler) {
  cfg.validate();
  if (widths.empty() || widths.front() != cfg.n0)
    throw ValidationError("first width must equal n0 = " + std::to_string(cfg.n0));
  if (static_cast<int>(widths.size()) != cfg.depth + 1)
    throw ValidationError("expected " + std::to_string(cfg.depth + 1) + " widths for depth " +
                          std::to_string(cfg.depth));
  Params p = Params::zeros(widths);
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    auto& w = p.weights[l];
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = cfg.rho_w * sampler.normal();
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) p.biases[l](i) = cfg.rho_b * sampler.normal();
  }
  return p;
}

struct ForwardTrace {
  std::vector<Eigen::VectorXd> preactivations;  // f^(1), ..., f^(L)
  Eigen::VectorXd output;                       // f^(L)
};

/// f^(1) = W^(0) x / sqrt(n0) + beta b^(0);
/// f^(l+1) = W^(l) sigma(f^(l)) / sqrt(n_l) + beta b^(l).
inline ForwardTrace forward(const Params& params, const Eigen::VectorXd& x, const ActivationSpec& spec,
                            const ArchitectureConfig& cfg) {
  if (x.size() != params.input_dim())
    throw ValidationError("input has length " + std::to_string(x.size()) + ", network expects " +
                          std::to_string(params.input_dim()));
  ForwardTrace trace;
  trace.preactivations.reserve(params.weights.size());
  Eigen::VectorXd h = params.weights[0] * x / std::sqrt(static_cast<double>(params.widths[0])) +
                      cfg.beta * params.biases[0];
  trace.preactivations.push_back(h);
  for (std::size_t l = 1; l < params.weights.size(); ++l) {
    const Eigen::VectorXd a = h.unaryExpr([&](double v) { return spec.value(v); });
    h = params.weights[l] * a / std::sqrt(static_cast<double>(params.widths[l])) + cfg.beta * params.biases[l];
    trace.preactivations.push_back(h);
  }
  trace.output = h;
  return trace;
}

/// grad += scale * (d f / d theta)^T cotangent, by reverse accumulation.
inline void accumulate_vjp(const Params& params, const Eigen::VectorXd& x, const ForwardTrace& trace,
                           const ActivationSpec& spec, const ArchitectureConfig& cfg,
                           const Eigen::VectorXd& cotangent, Params& grad, double scale = 1.0) {
  Eigen::VectorXd g = scale * cotangent;
  for (std::size_t l = params.weights.size(); l-- > 0;) {
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(params.widths[l]));
    if (l == 0) {
      grad.weights[0].noalias() += (g * inv_sqrt) * x.transpose();
      grad.biases[0] += cfg.beta * g;
      break;
    }
    const Eigen::VectorXd& h = trace.preactivations[l - 1];
    const Eigen::VectorXd a = h.unaryExpr([&](double v) { return spec.value(v); });
    grad.weights[l].noalias() += (g * inv_sqrt) * a.transpose();
    grad.biases[l] += cfg.beta * g;
    const Eigen::VectorXd back = params.weights[l].transpose() * g * inv_sqrt;
    g = back.cwiseProduct(h.unaryExpr([&](double v) { return spec.derivative(v); }));
  }
}

/// Rows: d f_mu / d theta for each output component mu (flattened order).
inline Eigen::MatrixXd jacobian(const Params& params, const Eigen::VectorXd& x, const ActivationSpec& spec,
                                const ArchitectureConfig& cfg) {
  const ForwardTrace trace = forward(params, x, spec, cfg);
  const int outputs = params.output_dim();
  Eigen::MatrixXd jac(outputs, params.size());
  Params grad = Params::zeros(params.widths);
  for (int mu = 0; mu < outputs; ++mu) {
    grad.set_zero();
    accumulate_vjp(params, x, trace, spec, cfg, Eigen::VectorXd::Unit(outputs, mu), grad);
    jac.row(mu) = grad.flatten().transpose();
  }
  return jac;
}

/// Stacked Jacobians: row i * n_L + mu holds d f_mu(x_i) / d theta.
inline Eigen::MatrixXd stacked_jacobian(const Params& params, const TrainingSet& x, const ActivationSpec& spec,
                                        const ArchitectureConfig& cfg) {
  const int outputs = params.output_dim();
  Eigen::MatrixXd jac(x.size() * outputs, params.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) jac.middleRows(i * outputs, outputs) = jacobian(params, x.input(i), spec, cfg);
  return jac;
}

/// Empirical NTK: entry (i * n_L + mu, j * n_L + nu) = <d f_mu(x_i), d f_nu(x_j)>.
inline Eigen::MatrixXd empirical_ntk(const Params& params, const TrainingSet& x, const ActivationSpec& spec,
                                     const ArchitectureConfig& cfg) {
  const Eigen::MatrixXd jac = stacked_jacobian(params, x, spec, cfg);
  Eigen::MatrixXd gram = jac * jac.transpose();
  return 0.5 * (gram + gram.transpose());
}

/// Kernel random variable of a single perceptron W1 sigma(W0 x + beta b0):
/// (x y + beta^2) W1^2 sigma'(.)sigma'(.) + sigma(.)sigma(.).  beta = 1
/// gives the plain one-dimensional perceptron.
inline double perceptron_kernel(double w0, double b0, double w1, double x, double y, const ActivationSpec& spec,
                                double beta = 1.0) {
  const double hx = w0 * x + beta * b0;
  const double hy = w0 * y + beta * b0;
  return (x * y + beta * beta) * (w1 * w1) * (spec.derivative(hx) * spec.derivative(hy)) +
         spec.value(hx) * spec.value(hy);
}

struct MonteCarloNtk {
  Eigen::MatrixXd mean;
  /// Entrywise standard error of the mean; NaN when fewer than two samples.
  Eigen::MatrixXd standard_error;
  int samples = 0;
};

/// Average of empirical NTKs over independent initialisations.  Replica r
/// draws from sampler.derive(r).
inline MonteCarloNtk monte_carlo_ntk(const ArchitectureConfig& cfg, const std::vector<int>& widths,
                                     const TrainingSet& x, const ActivationSpec& spec, int n_samples,
                                     const SeededSampler& sampler, unsigned threads = 0) {
  if (n_samples < 1) throw ValidationError("monte_carlo_ntk needs at least one sample");
  std::vector<Eigen::MatrixXd> draws(static_cast<std::size_t>(n_samples));
  parallel_for(draws.size(), threads, [&](std::size_t r) {
    SeededSampler stream = sampler.derive(r);
    const Params params = init_params(cfg, widths, stream);
    draws[r] = empirical_ntk(params, x, spec, cfg);
  });
  MonteCarloNtk out;
  out.samples = n_samples;
  out.mean = Eigen::MatrixXd::Zero(draws[0].rows(), draws[0].cols());
  for (const auto& d : draws) out.mean += d;
  out.mean /= n_samples;
  if (n_samples < 2) {
    out.standard_error = Eigen::MatrixXd::Constant(out.mean.rows(), out.mean.cols(),
                                                   std::numeric_limits<double>::quiet_NaN());
    return out;
  }
  Eigen::MatrixXd sq = Eigen::MatrixXd::Zero(out.mean.rows(), out.mean.cols());
  for (const auto& d : draws) sq += (d - out.mean).cwiseAbs2();
  out.standard_error = (sq / (n_samples - 1.0) / n_samples).cwiseSqrt();
  return out;
}

/// Exact infinite-width NTK over the (sample, output) index, Theta (x) I.
inline Eigen::MatrixXd expand_outputs(const Eigen::MatrixXd& theta, int outputs) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(theta.rows() * outputs, theta.cols() * outputs);
  for (Eigen::Index i = 0; i < theta.rows(); ++i)
    for (Eigen::Index j = 0; j < theta.cols(); ++j)
      for (int mu = 0; mu < outputs; ++mu) out(i * outputs + mu, j * outputs + mu) = theta(i, j);
  return out;
}

inline double median(std::vector<double> values) {
  if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
  const auto mid = values.begin() + static_cast<std::ptrdiff_t>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  if (values.size() % 2 == 1) return *mid;
  const double upper = *mid;
  const double lower = *std::max_element(values.begin(), mid);
  return 0.5 * (lower + upper);
}

struct SweepRow {
  int width = 0;
  int sample_count = 0;
  /// ||mean empirical - exact||_F / ||exact||_F
  double frobenius_error_vs_exact = 0.0;
  double median_stderr = 0.0;
};

/// Empirical-vs-exact NTK over a sweep of equal hidden widths.
inline std::vector<SweepRow> width_sweep(const ArchitectureConfig& cfg, const std::vector<int>& hidden_widths,
                                         const TrainingSet& x, const ActivationSpec& spec, int n_samples,
                                         const SeededSampler& sampler, const Eigen::MatrixXd& exact_theta,
                                         unsigned threads = 0) {
  const Eigen::MatrixXd exact = expand_outputs(exact_theta, cfg.outputs);
  std::vector<SweepRow> rows;
  for (int width : hidden_widths) {
    const MonteCarloNtk mc = monte_carlo_ntk(cfg, equal_widths(cfg, width), x, spec, n_samples,
                                             sampler.derive(static_cast<std::uint64_t>(width)), threads);
    std::vector<double> errors(mc.standard_error.data(), mc.standard_error.data() + mc.standard_error.size());
    rows.push_back({width, n_samples, (mc.mean - exact).norm() / exact.norm(), median(std::move(errors))});
  }
  return rows;
}

}  // namespace ntk
