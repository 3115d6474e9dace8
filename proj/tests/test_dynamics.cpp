#include <gtest/gtest.h>

#include <cmath>

#include "ntk/dynamics.hpp"

using namespace ntk;

namespace {

Eigen::MatrixXd random_spd(SeededSampler& s, int n, double floor) {
  Eigen::MatrixXd g(n, n);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = s.normal();
  return g * g.transpose() / n + floor * Eigen::MatrixXd::Identity(n, n);
}

Eigen::MatrixXd random_matrix(SeededSampler& s, int r, int c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s.normal();
  return m;
}

}  // namespace

TEST(Flow, InitialTimeReturnsF0) {
  SeededSampler s(1);
  const Eigen::MatrixXd theta = random_spd(s, 5, 0.1);
  const Eigen::MatrixXd f0 = random_matrix(s, 5, 2), y = random_matrix(s, 5, 2);
  const auto st = linearized_flow({theta, KernelKind::theta, 2}, f0, y, 0.0);
  EXPECT_EQ(st.outputs, f0);
  EXPECT_NEAR(st.loss, 0.5 * (f0 - y).squaredNorm(), 1e-12);
  EXPECT_THROW(linearized_flow({theta, KernelKind::theta, 2}, f0, y, -1.0), ValidationError);
}

TEST(Flow, Memorisation) {
  SeededSampler s(2);
  const Eigen::MatrixXd theta = random_spd(s, 8, 0.05);
  const LinearizedFlow flow(theta);
  const Eigen::MatrixXd f0 = random_matrix(s, 8, 1), y = random_matrix(s, 8, 1);
  const auto st = flow.at(f0, y, 50.0 / flow.lambda_min());
  EXPECT_LE((st.outputs - y).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Flow, ScalarMatchesRungeKutta) {
  const double theta = 1.7, f0 = -0.4, y = 2.0, t_end = 3.0;
  const int steps = 3000;
  const double h = t_end / steps;
  double f = f0;
  const auto rhs = [&](double v) { return -theta * (v - y); };
  for (int k = 0; k < steps; ++k) {
    const double k1 = rhs(f), k2 = rhs(f + 0.5 * h * k1), k3 = rhs(f + 0.5 * h * k2), k4 = rhs(f + h * k3);
    f += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  const auto st = LinearizedFlow(Eigen::MatrixXd::Constant(1, 1, theta))
                      .at(Eigen::MatrixXd::Constant(1, 1, f0), Eigen::MatrixXd::Constant(1, 1, y), t_end);
  EXPECT_NEAR(st.outputs(0, 0), f, 1e-10);
  EXPECT_NEAR(st.outputs(0, 0), y + std::exp(-theta * t_end) * (f0 - y), 1e-14);
}

TEST(Flow, MatrixMatchesRungeKutta) {
  SeededSampler s(3);
  const Eigen::MatrixXd theta = random_spd(s, 4, 0.2);
  const Eigen::MatrixXd f0 = random_matrix(s, 4, 2), y = random_matrix(s, 4, 2);
  const double t_end = 2.0, h = 1e-3;
  Eigen::MatrixXd f = f0;
  const auto rhs = [&](const Eigen::MatrixXd& v) -> Eigen::MatrixXd { return -theta * (v - y); };
  for (int k = 0; k < 2000; ++k) {
    const Eigen::MatrixXd k1 = rhs(f), k2 = rhs(f + 0.5 * h * k1), k3 = rhs(f + 0.5 * h * k2), k4 = rhs(f + h * k3);
    f += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  EXPECT_LE((LinearizedFlow(theta).at(f0, y, t_end).outputs - f).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Flow, LossNonIncreasingAndSemigroup) {
  SeededSampler s(4);
  Eigen::MatrixXd g = random_matrix(s, 6, 3);
  const Eigen::MatrixXd theta = g * g.transpose();  // rank 3 PSD
  const LinearizedFlow flow(theta);
  const Eigen::MatrixXd f0 = random_matrix(s, 6, 1), y = random_matrix(s, 6, 1);
  double prev = flow.at(f0, y, 0).loss;
  for (int k = 1; k <= 100; ++k) {
    const double l = flow.at(f0, y, 0.1 * k).loss;
    EXPECT_LE(l, prev * (1 + 1e-14));
    prev = l;
  }
  const Eigen::MatrixXd lhs = flow.propagator(0.3) * flow.propagator(0.7);
  EXPECT_LE((lhs - flow.propagator(1.0)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Flow, RejectsNonPsd) {
  Eigen::Matrix2d m;
  m << 1, 0, 0, -0.5;
  EXPECT_THROW(LinearizedFlow{Eigen::MatrixXd(m)}, NumericalError);
}

TEST(LossBound, Examples) {
  SeededSampler s(5);
  std::vector<double> times;
  for (int k = 0; k <= 50; ++k) times.push_back(0.2 * k);
  const Eigen::MatrixXd y = random_matrix(s, 5, 1);
  EXPECT_EQ(loss_bound_check(random_spd(s, 5, 0.1), y, y, times), 0.0);

  const Eigen::MatrixXd f0 = random_matrix(s, 5, 1);
  const LinearizedFlow scaled(2.5 * Eigen::MatrixXd::Identity(5, 5));
  const double l0 = quadratic_loss(f0, y);
  for (double t : times) EXPECT_NEAR(scaled.at(f0, y, t).loss, std::exp(-5.0 * t) * l0, 1e-10 * l0);

  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + trial % 31;
    const Eigen::MatrixXd theta = random_spd(s, n, 0.01);
    const Eigen::MatrixXd a = random_matrix(s, n, 1), b = random_matrix(s, n, 1);
    EXPECT_LE(loss_bound_check(theta, a, b, times), 1e-9 * quadratic_loss(a, b));
  }
}

TEST(GdTrain, ZeroTargetsZeroOutputs) {
  ArchitectureConfig cfg;
  cfg.n0 = 2;
  Eigen::MatrixXd x(3, 2);
  x << 1, 2, -1, 0.5, 0.3, 0.3;
  const TrainingSet set(x, Eigen::MatrixXd::Zero(3, 1));
  const auto r = gd_train(Params::zeros({2, 4, 1}), set, ActivationSpec::tanh(), cfg, 0.1, 10);
  ASSERT_EQ(r.loss.size(), 11u);
  for (double l : r.loss) EXPECT_EQ(l, 0.0);
}

TEST(GdTrain, ScalarLinearModel) {
  ArchitectureConfig cfg;
  cfg.depth = 1;
  cfg.beta = 0;
  const TrainingSet set(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1));
  const auto r = gd_train(Params::zeros({1, 1}), set, ActivationSpec::identity(), cfg, 0.1, 50);
  for (int k = 0; k <= 50; ++k) EXPECT_NEAR(r.loss[k], 0.5 * std::pow(0.9, 2 * k), 1e-12);
}

TEST(GdTrain, MonotoneAtSmallStepAndDiverges) {
  ArchitectureConfig cfg;
  cfg.n0 = 3;
  SeededSampler s(6);
  const Eigen::MatrixXd x = random_matrix(s, 6, 3), y = random_matrix(s, 6, 1);
  const TrainingSet set(x, y);
  const auto spec = ActivationSpec::tanh();
  const Params p = init_params(cfg, {3, 64, 1}, s);
  const double lmax = min_max_eigenvalues(empirical_ntk(p, set, spec, cfg)).second;
  const auto r = gd_train(p, set, spec, cfg, 0.1 / lmax, 300);
  for (std::size_t k = 1; k < r.loss.size(); ++k) EXPECT_LE(r.loss[k], r.loss[k - 1]);
  EXPECT_THROW(gd_train(p, set, spec, cfg, 1e4, 200), NumericalError);
  EXPECT_THROW(gd_train(p, set, spec, cfg, 0.0, 1), ValidationError);
  EXPECT_NEAR(default_step_size(p, set, spec, cfg), 0.5 / lmax, 1e-14 / lmax);
}

TEST(GdTrain, StopBelow) {
  ArchitectureConfig cfg;
  cfg.depth = 1;
  cfg.beta = 0;
  const TrainingSet set(Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1));
  GdOptions o;
  o.stop_below = 1e-3;
  const auto r = gd_train(Params::zeros({1, 1}), set, ActivationSpec::identity(), cfg, 0.1, 1000, o);
  EXPECT_LT(r.loss.back(), 1e-3);
  EXPECT_GE(r.loss[r.loss.size() - 2], 1e-3);
}

TEST(Trajectory, ZeroTimeAndLinearNetwork) {
  ArchitectureConfig cfg;
  cfg.n0 = 2;
  cfg.beta = 1;
  SeededSampler s(7);
  const Eigen::MatrixXd x = random_matrix(s, 5, 2), y = random_matrix(s, 5, 1);
  const TrainingSet set(x, y);
  TrajectoryOptions o;
  o.replicas = 4;
  const auto rows = trajectory_compare({64, 1024}, set, ActivationSpec::identity(), cfg, {0.0, 1.0, 5.0},
                                       SeededSampler(1), o);
  ASSERT_EQ(rows.size(), 2u);
  for (const auto& r : rows) EXPECT_EQ(r.deviations[0], 0.0);
  EXPECT_LT(rows[1].max_deviation, rows[0].max_deviation);
  EXPECT_LT(rows[1].max_deviation, 0.1);
}

TEST(Trajectory, TanhDeviationShrinks) {
  ArchitectureConfig cfg;
  cfg.n0 = 2;
  SeededSampler s(8);
  const Eigen::MatrixXd x = random_matrix(s, 4, 2), y = random_matrix(s, 4, 1);
  TrajectoryOptions o;
  o.replicas = 3;
  const auto rows = trajectory_compare({64, 256, 1024}, TrainingSet(x, y), ActivationSpec::tanh(), cfg,
                                       {0.5, 2.0}, SeededSampler(2), o);
  int inversions = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) inversions += rows[i].max_deviation >= rows[i - 1].max_deviation;
  EXPECT_LE(inversions, 1);
  EXPECT_LT(rows.back().max_deviation, rows.front().max_deviation);
}
