#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ntk/activations.hpp"
#include "ntk/error.hpp"
#include "ntk/kernels.hpp"

namespace ntk {

enum class Verdict { strictly_positive_definite, positive_semi_definite, indefinite };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::strictly_positive_definite:
      return "strictly_positive_definite";
    case Verdict::positive_semi_definite:
      return "positive_semi_definite";
    case Verdict::indefinite:
      return "indefinite";
  }
  return "unknown";
}

inline constexpr double kDefaultSpdTolerance = 1e-8;

struct SpectralReport {
  double lambda_min = 0.0;
  double lambda_max = 0.0;
  Verdict verdict = Verdict::indefinite;
  double relative_tol = kDefaultSpdTolerance;
  std::string matrix_kind = "matrix";
  int layer = 0;
  /// Violated hypotheses of the positivity theorems for the data/activation.
  std::vector<std::string> hypothesis_flags;
};

inline void require_symmetric(const Eigen::MatrixXd& m) {
  if (m.rows() != m.cols()) throw ValidationError("matrix is not square");
  if (m.size() == 0) throw ValidationError("matrix is empty");
  const double scale = std::max(m.cwiseAbs().maxCoeff(), 1e-300);
  if (max_abs_asymmetry(m) > 1e-12 * scale) throw ValidationError("matrix is not symmetric");
}

/// All eigenvalues in ascending order (Householder tridiagonalisation +
/// implicit symmetric QR, via Eigen).
inline Eigen::VectorXd symmetric_eigenvalues(const Eigen::MatrixXd& m) {
  require_symmetric(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) throw NumericalError("symmetric eigensolver did not converge");
  return eig.eigenvalues();
}

inline std::pair<double, double> min_max_eigenvalues(const Eigen::MatrixXd& m) {
  const Eigen::VectorXd lambda = symmetric_eigenvalues(m);
  return {lambda(0), lambda(lambda.size() - 1)};
}

/// strictly PD iff lambda_min > tol * max(lambda_max, 1e-300); PSD iff
/// lambda_min >= -tol * max(lambda_max, 1e-300).
inline Verdict classify(double lambda_min, double lambda_max, double relative_tol) {
  const double scale = std::max(lambda_max, 1e-300);
  if (lambda_min > relative_tol * scale) return Verdict::strictly_positive_definite;
  if (lambda_min >= -relative_tol * scale) return Verdict::positive_semi_definite;
  return Verdict::indefinite;
}

inline SpectralReport spd_verdict(const Eigen::MatrixXd& m, double relative_tol = kDefaultSpdTolerance,
                                  std::string kind = "matrix", int layer = 0) {
  const auto [lo, hi] = min_max_eigenvalues(m);
  return {lo, hi, classify(lo, hi, relative_tol), relative_tol, std::move(kind), layer, {}};
}

inline SpectralReport spd_verdict(const KernelMatrix& k, double relative_tol = kDefaultSpdTolerance) {
  return spd_verdict(k.values, relative_tol, std::string(to_string(k.kind)), k.layer);
}

/// Which hypotheses of the positivity theorems fail for this setup.
inline std::vector<std::string> hypothesis_flags(const TrainingSet& x, const ActivationSpec& spec,
                                                 const ArchitectureConfig& cfg) {
  std::vector<std::string> flags;
  if (const auto rep = x.repeated_pair())
    flags.push_back("repeated_inputs(" + std::to_string(rep->first) + "," + std::to_string(rep->second) + ")");
  if (cfg.beta == 0.0) {
    if (const auto prop = x.proportional_pair())
      flags.push_back("proportional_inputs_without_bias(" + std::to_string(prop->first) + "," +
                      std::to_string(prop->second) + ")");
  }
  if (spec.polynomial_degree()) flags.push_back("polynomial_activation");
  return flags;
}

/// Spectral reports for theta, sigma_hat (layers 1..L) and sigma (2..L).
/// Hypothesis violations are recorded on every report; they never abort.
inline std::vector<SpectralReport> positivity_report(const TrainingSet& x, const ActivationSpec& spec,
                                                     const ArchitectureConfig& cfg, const KernelOptions& opts,
                                                     int depth, double relative_tol = kDefaultSpdTolerance) {
  const KernelStack stack = kernel_stack(x, spec, cfg, opts, depth);
  const std::vector<std::string> flags = hypothesis_flags(x, spec, cfg);
  std::vector<SpectralReport> reports;
  for (int layer = 1; layer <= depth; ++layer) {
    const auto idx = static_cast<std::size_t>(layer - 1);
    reports.push_back(spd_verdict(stack.theta[idx], relative_tol));
    reports.push_back(spd_verdict(stack.sigma_hat[idx], relative_tol));
    if (layer >= 2) reports.push_back(spd_verdict(stack.sigma[idx - 1], relative_tol));
  }
  for (auto& r : reports) r.hypothesis_flags = flags;
  return reports;
}

}  // namespace ntk
