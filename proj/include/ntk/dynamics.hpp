#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ntk/error.hpp"
#include "ntk/kernels.hpp"
#include "ntk/network.hpp"
#include "ntk/parallel.hpp"
#include "ntk/spectra.hpp"

namespace ntk {

/// (1/2) sum_j |f(x_j) - y_j|^2
inline double quadratic_loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets) {
  if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols())
    throw ValidationError("outputs and targets have different shapes");
  return 0.5 * (outputs - targets).squaredNorm();
}

struct FlowState {
  double t = 0.0;
  Eigen::MatrixXd outputs;  // N x n_L
  double loss = 0.0;
};

/// f(t) = y + exp(-Theta t)(f0 - y), column by column, with Theta frozen.
class LinearizedFlow {
 public:
  explicit LinearizedFlow(const Eigen::MatrixXd& theta) {
    require_symmetric(theta);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (theta + theta.transpose()));
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of theta failed");
    values_ = eig.eigenvalues();
    vectors_ = eig.eigenvectors();
    const double hi = values_.size() ? values_.maxCoeff() : 0.0;
    const double lo = values_.size() ? values_.minCoeff() : 0.0;
    if (lo < -1e-10 * std::max(std::abs(hi), 1e-300))
      throw NumericalError("theta is not positive semi-definite (lambda_min = " + std::to_string(lo) +
                           ", lambda_max = " + std::to_string(hi) + ")");
    values_ = values_.cwiseMax(0.0);
  }

  explicit LinearizedFlow(const KernelMatrix& theta) : LinearizedFlow(theta.values) {}

  Eigen::Index size() const { return values_.size(); }
  double lambda_min() const { return values_.size() ? values_.minCoeff() : 0.0; }
  double lambda_max() const { return values_.size() ? values_.maxCoeff() : 0.0; }

  /// exp(-Theta t)
  Eigen::MatrixXd propagator(double t) const {
    check_time(t);
    return vectors_ * (-values_ * t).array().exp().matrix().asDiagonal() * vectors_.transpose();
  }

  FlowState at(const Eigen::MatrixXd& f0, const Eigen::MatrixXd& targets, double t) const {
    check_time(t);
    if (f0.rows() != size() || targets.rows() != size() || f0.cols() != targets.cols())
      throw ValidationError("f0 and targets must be N x n_L with N = theta size");
    FlowState s;
    s.t = t;
    if (t == 0.0) {
      s.outputs = f0;
    } else {
      const Eigen::MatrixXd coeffs = vectors_.transpose() * (f0 - targets);
      const Eigen::VectorXd decay = (-values_ * t).array().exp();
      s.outputs = targets + vectors_ * (decay.asDiagonal() * coeffs);
    }
    s.loss = quadratic_loss(s.outputs, targets);
    return s;
  }

 private:
  static void check_time(double t) {
    if (!(t >= 0.0) || !std::isfinite(t)) throw ValidationError("flow time must be finite and >= 0");
  }

  Eigen::VectorXd values_;
  Eigen::MatrixXd vectors_;
};

inline FlowState linearized_flow(const KernelMatrix& theta, const Eigen::MatrixXd& f0, const Eigen::MatrixXd& targets,
                                 double t) {
  return LinearizedFlow(theta).at(f0, targets, t);
}

/// Largest positive value of loss(t) - exp(-2 lambda_min t) loss(0) on the grid.
inline double loss_bound_check(const Eigen::MatrixXd& theta, const Eigen::MatrixXd& f0, const Eigen::MatrixXd& targets,
                               const std::vector<double>& times) {
  const LinearizedFlow flow(theta);
  const double loss0 = quadratic_loss(f0, targets);
  const double lmin = flow.lambda_min();
  double worst = 0.0;
  for (double t : times) worst = std::max(worst, flow.at(f0, targets, t).loss - std::exp(-2.0 * lmin * t) * loss0);
  return worst;
}

/// N x n_L matrix of network outputs.
inline Eigen::MatrixXd network_outputs(const Params& params, const TrainingSet& x, const ActivationSpec& spec,
                                       const ArchitectureConfig& cfg) {
  Eigen::MatrixXd out(x.size(), params.output_dim());
  for (Eigen::Index i = 0; i < x.size(); ++i) out.row(i) = forward(params, x.input(i), spec, cfg).output.transpose();
  return out;
}

struct TrainResult {
  std::vector<double> loss;  // loss[k] before update k; last entry after the final update
  Params params;
  int steps_taken = 0;
};

struct GdOptions {
  std::optional<double> stop_below;
  /// Called with (step, outputs, loss) before each update and after the last.
  std::function<void(int, const Eigen::MatrixXd&, double)> observer;
};

inline constexpr double kDivergenceLoss = 1e12;

/// Full-batch gradient descent on the quadratic loss.
inline TrainResult gd_train(Params params, const TrainingSet& x, const ActivationSpec& spec,
                            const ArchitectureConfig& cfg, double step_size, int steps, const GdOptions& opts = {}) {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw ValidationError("step size must be finite and > 0");
  if (steps < 0) throw ValidationError("steps must be >= 0");
  if (!x.has_targets()) throw ValidationError("gd_train needs targets");
  const Eigen::MatrixXd& y = *x.targets();
  if (y.cols() != params.output_dim())
    throw ValidationError("targets have " + std::to_string(y.cols()) + " columns, network has " +
                          std::to_string(params.output_dim()) + " outputs");
  params.validate();

  TrainResult result;
  result.loss.reserve(static_cast<std::size_t>(steps) + 1);
  Params grad = Params::zeros(params.widths);
  Eigen::MatrixXd outputs(x.size(), params.output_dim());
  std::vector<ForwardTrace> traces(static_cast<std::size_t>(x.size()));

  for (int k = 0;; ++k) {
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      traces[static_cast<std::size_t>(i)] = forward(params, x.input(i), spec, cfg);
      outputs.row(i) = traces[static_cast<std::size_t>(i)].output.transpose();
    }
    const double loss = quadratic_loss(outputs, y);
    if (!std::isfinite(loss) || loss > kDivergenceLoss)
      throw NumericalError("gradient descent diverged at step " + std::to_string(k) + " (loss " +
                           std::to_string(loss) + "); reduce the step size " + std::to_string(step_size) +
                           " toward 1/(2 lambda_max) of the empirical NTK");
    result.loss.push_back(loss);
    if (opts.observer) opts.observer(k, outputs, loss);
    if (k == steps || (opts.stop_below && loss < *opts.stop_below)) break;

    grad.set_zero();
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const Eigen::VectorXd residual = (outputs.row(i) - y.row(i)).transpose();
      accumulate_vjp(params, x.input(i), traces[static_cast<std::size_t>(i)], spec, cfg, residual, grad);
    }
    params.axpy(-step_size, grad);
    result.steps_taken = k + 1;
  }
  result.params = std::move(params);
  return result;
}

/// 1 / (2 lambda_max) of the empirical NTK at the given parameters.
inline double default_step_size(const Params& params, const TrainingSet& x, const ActivationSpec& spec,
                                const ArchitectureConfig& cfg) {
  const double hi = min_max_eigenvalues(empirical_ntk(params, x, spec, cfg)).second;
  if (!(hi > 0.0)) throw NumericalError("empirical NTK at initialisation has no positive eigenvalue");
  return 0.5 / hi;
}

struct TrajectoryOptions {
  /// Defaults to 0.05 / lambda_max(exact Theta).
  std::optional<double> step_size;
  int replicas = 1;
  KernelOptions kernel;
  unsigned threads = 0;
};

struct TrajectoryRow {
  int width = 0;
  std::vector<double> times;       // realised times k * step
  std::vector<double> deviations;  // mean over replicas of max |f_gd - f_flow|
  double max_deviation = 0.0;
};

/// Gradient descent at finite width against the linearized flow under the
/// exact infinite-width NTK, both started from the network's own f0.
inline std::vector<TrajectoryRow> trajectory_compare(const std::vector<int>& hidden_widths, const TrainingSet& x,
                                                     const ActivationSpec& spec, const ArchitectureConfig& cfg,
                                                     const std::vector<double>& times, const SeededSampler& sampler,
                                                     const TrajectoryOptions& opts = {}) {
  if (!x.has_targets()) throw ValidationError("trajectory_compare needs targets");
  if (opts.replicas < 1) throw ValidationError("replicas must be >= 1");
  const auto thetas = theta_recursion(x, spec, cfg, opts.kernel, cfg.depth);
  const Eigen::MatrixXd theta = thetas.back().values;
  const LinearizedFlow flow(theta);
  const double step = opts.step_size.value_or(0.05 / flow.lambda_max());
  if (!(step > 0.0)) throw ValidationError("step size must be > 0");

  std::vector<int> marks;
  for (double t : times) {
    if (!(t >= 0.0)) throw ValidationError("times must be >= 0");
    marks.push_back(static_cast<int>(std::lround(t / step)));
  }
  const int steps = marks.empty() ? 0 : *std::max_element(marks.begin(), marks.end());

  std::vector<TrajectoryRow> rows;
  for (int width : hidden_widths) {
    const SeededSampler width_stream = sampler.derive(static_cast<std::uint64_t>(width));
    std::vector<std::vector<double>> dev(static_cast<std::size_t>(opts.replicas));
    parallel_for(dev.size(), opts.threads, [&](std::size_t r) {
      SeededSampler s = width_stream.derive(r);
      Params p0 = init_params(cfg, equal_widths(cfg, width), s);
      const Eigen::MatrixXd f0 = network_outputs(p0, x, spec, cfg);
      std::vector<Eigen::MatrixXd> snapshots(static_cast<std::size_t>(steps) + 1);
      GdOptions gd;
      gd.observer = [&](int k, const Eigen::MatrixXd& out, double) { snapshots[static_cast<std::size_t>(k)] = out; };
      gd_train(std::move(p0), x, spec, cfg, step, steps, gd);
      for (int m : marks) {
        const Eigen::MatrixXd target = flow.at(f0, *x.targets(), m * step).outputs;
        dev[r].push_back((snapshots[static_cast<std::size_t>(m)] - target).cwiseAbs().maxCoeff());
      }
    });
    TrajectoryRow row;
    row.width = width;
    for (std::size_t t = 0; t < marks.size(); ++t) {
      double mean = 0.0;
      for (const auto& d : dev) mean += d[t];
      mean /= static_cast<double>(dev.size());
      row.times.push_back(marks[t] * step);
      row.deviations.push_back(mean);
      row.max_deviation = std::max(row.max_deviation, mean);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace ntk
