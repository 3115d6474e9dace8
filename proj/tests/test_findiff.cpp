#include <gtest/gtest.h>

#include <cmath>

#include "ntk/findiff.hpp"

using namespace ntk;
using namespace ntk::findiff;

namespace {

Fn spec_fn(const char* name) {
  return [s = ActivationSpec::parse(name)](double x) { return s.value(x); };
}

double uniform(SeededSampler& s, double lo, double hi) { return lo + (hi - lo) * s.uniform(); }

}  // namespace

TEST(NthDifference, Examples) {
  const Fn sq = [](double x) { return x * x; };
  const Fn cube = [](double x) { return x * x * x; };
  const Fn c = [](double) { return 4.2; };
  EXPECT_EQ(nth_difference(sq, 0.0, std::vector<double>{1, 1}), 2.0);
  EXPECT_EQ(nth_difference(c, 0.3, std::vector<double>{0.1, 2.0, -1.0}), 0.0);
  for (double t : {0.5, 1.0, 2.0}) EXPECT_NEAR(nth_difference(cube, 0.7, std::vector<double>{t, t, t}), 6 * t * t * t, 1e-12);
  EXPECT_EQ(nth_difference(cube, 1.5, std::vector<double>{}), cube(1.5));
  EXPECT_EQ(nth_difference(cube, 1.5, std::vector<double>{0.0, 1.0}), 0.0);
}

TEST(UniformDifference, AgreesWithRecursion) {
  SeededSampler s(1);
  for (int t = 0; t < 1000; ++t) {
    std::string label;
    const Fn f = findiff::detail::trial_function(t, s, label);
    const double x = uniform(s, -2, 2), h = uniform(s, -1, 1);
    const int n = findiff::detail::integer_in(s, 0, 8);
    const std::vector<double> hs(static_cast<std::size_t>(n), h);
    const auto d = uniform_difference(f, x, h, n);
    EXPECT_NEAR(d.value, nth_difference(f, x, hs), 1e-9 * std::max(d.magnitude, 1e-300)) << label;
  }
  EXPECT_EQ(uniform_nth_difference(spec_fn("tanh"), 0.4, 0.1, 0), std::tanh(0.4));
}

TEST(UniformDifference, PolynomialsVanishAboveDegree) {
  SeededSampler s(2);
  for (int d = 0; d <= 6; ++d) {
    std::vector<double> c(static_cast<std::size_t>(d) + 1);
    for (double& v : c) v = s.normal();
    const auto p = ActivationSpec::polynomial(c);
    const Fn f = [&](double x) { return p.value(x); };
    for (int trial = 0; trial < 50; ++trial) {
      const auto r = uniform_difference(f, uniform(s, -3, 3), uniform(s, -1, 1), d + 1);
      EXPECT_LE(std::abs(r.value), 1e-9 * r.magnitude);
    }
  }
}

TEST(DifferenceOperators, Commute) {
  SeededSampler s(3);
  for (int t = 0; t < 200; ++t) {
    std::string label;
    const Fn f = findiff::detail::trial_function(t, s, label);
    const double x = uniform(s, -2, 2), h1 = uniform(s, -1, 1), h2 = uniform(s, -1, 1);
    const double a = nth_difference(f, x, std::vector<double>{h1, h2});
    const double b = nth_difference(f, x, std::vector<double>{h2, h1});
    const double scale = std::abs(f(x)) + std::abs(f(x + h1)) + std::abs(f(x + h2)) + std::abs(f(x + h1 + h2));
    EXPECT_LE(std::abs(a - b), 1e-12 * std::max(scale, 1.0)) << label;
  }
}

TEST(KhCoefficients, ExamplesAndRowSums) {
  EXPECT_EQ(kh_coefficients(1, 4), (std::vector<double>{1, 1, 1, 1}));
  EXPECT_EQ(kh_coefficients(2, 2), (std::vector<double>{1, 2, 1}));
  EXPECT_EQ(kh_coefficients(2, 3), (std::vector<double>{1, 2, 3, 2, 1}));
  for (int n = 1; n <= 6; ++n)
    for (int k = 1; k <= 6; ++k) {
      const auto a = kh_coefficients(n, k);
      EXPECT_EQ(a.size(), static_cast<std::size_t>(n * (k - 1) + 1));
      double sum = 0;
      for (double v : a) sum += v;
      EXPECT_EQ(sum, std::pow(k, n));
    }
  EXPECT_THROW(kh_coefficients(0, 2), ValidationError);
}

TEST(KhIdentity, Examples) {
  const Fn cube = [](double x) { return x * x * x; };
  EXPECT_NEAR(check_kh_identity(cube, 0.7, 0.3, 2, 3).residual, 0.0, 1e-10);
  EXPECT_EQ(check_kh_identity([](double) { return 2.5; }, 0.1, 0.4, 3, 2).residual, 0.0);
  SeededSampler s(4);
  for (int t = 0; t < 500; ++t) {
    const auto r = check_kh_identity(spec_fn("tanh"), uniform(s, -1, 1), uniform(s, -1, 1),
                                     findiff::detail::integer_in(s, 1, 4), findiff::detail::integer_in(s, 1, 4));
    EXPECT_LE(r.relative(), 1e-9);
  }
}

TEST(LeibnizIdentity, Examples) {
  EXPECT_NEAR(check_leibniz_identity([](double) { return 3.0; }, 1.7, 0.2, 0).residual, 0.0, 1e-15);
  EXPECT_NEAR(check_leibniz_identity([](double x) { return x; }, 2.0, 0.5, 1).residual, 0.0, 1e-12);
  SeededSampler s(5);
  for (int t = 0; t < 500; ++t) {
    const auto r = check_leibniz_identity(spec_fn("erf"), uniform(s, -2, 2), uniform(s, -1, 1),
                                          findiff::detail::integer_in(s, 0, 5));
    EXPECT_LE(r.relative(), 1e-9);
  }
}

TEST(ChainShift, Examples) {
  const Fn sq = [](double t) { return t * t; };
  EXPECT_EQ(chain_shift_check(sq, 1.3, 0.0, 0.4, 2.0, 0.7).residual, 0.0);
  EXPECT_EQ(chain_shift_check(sq, 1.0, 2.0, 1.0, 0.0, 1.0).residual, 0.0);
  SeededSampler s(6);
  for (int t = 0; t < 500; ++t) {
    const auto r = chain_shift_check(spec_fn("gelu"), uniform(s, -2, 2), uniform(s, -2, 2), uniform(s, -2, 2),
                                     uniform(s, -2, 2), uniform(s, -1, 1));
    EXPECT_LE(r.relative(), 1e-10);
  }
}

TEST(IdentitySuite, AllPass) {
  for (const auto& r : identity_suite(1000, 3)) EXPECT_TRUE(r.passed) << r.identity << " " << r.max_relative_residual;
}

TEST(DegreeEstimate, Examples) {
  const auto v = polynomial_degree_estimate([](double x) { return 3 * x * x + x; }, {-1, 1}, 8);
  EXPECT_TRUE(v.polynomial);
  EXPECT_EQ(v.degree, 2);
  EXPECT_EQ(v.vanishing_order, 3);
  for (const char* name : {"relu", "tanh", "erf", "gelu"}) {
    const Interval dom = std::string(name) == "relu" ? Interval{-1, 1} : Interval{-2, 2};
    EXPECT_FALSE(polynomial_degree_estimate(spec_fn(name), dom, 8).polynomial) << name;
  }
  EXPECT_EQ(polynomial_degree_estimate([](double) { return 0.0; }, {-1, 1}, 3).degree, 0);
  EXPECT_THROW(polynomial_degree_estimate(spec_fn("tanh"), {-1, 1}, 0), ValidationError);
}

TEST(DegreeEstimate, RandomPolynomials) {
  SeededSampler s(7);
  for (int trial = 0; trial < 40; ++trial) {
    const int d = trial % 7;
    std::vector<double> c(static_cast<std::size_t>(d) + 1);
    for (double& v : c) v = s.normal();
    c.back() = (s.uniform() < 0.5 ? -1 : 1) * (0.5 + s.uniform());
    const auto p = ActivationSpec::polynomial(c);
    const auto v = polynomial_degree_estimate([&](double x) { return p.value(x); }, {-2, 2}, 8);
    EXPECT_TRUE(v.polynomial);
    EXPECT_EQ(v.degree, d);
  }
}

TEST(Interval, Parse) {
  const auto d = parse_interval("-2:2");
  EXPECT_EQ(d.lo, -2);
  EXPECT_EQ(d.hi, 2);
  EXPECT_THROW(parse_interval("2:-2"), ValidationError);
  EXPECT_THROW(parse_interval("a:b"), ValidationError);
  EXPECT_THROW(parse_interval("1"), ValidationError);
}

TEST(NonAlignment, Examples) {
  EXPECT_TRUE(total_nonalignment_check({Eigen::Vector2d(1, 2), Eigen::Vector2d(1, 3)}).totally_non_aligned);
  const auto bad = total_nonalignment_check({Eigen::Vector2d(1, 2), Eigen::Vector2d(2, 4)});
  EXPECT_FALSE(bad.totally_non_aligned);
  ASSERT_TRUE(bad.offending);
  EXPECT_EQ(bad.offending->first, 0);
  EXPECT_EQ(bad.offending->second, 1);
  Eigen::VectorXd z(4);
  z << -1, 0.5, 2, 7;
  EXPECT_TRUE(total_nonalignment_check({z, Eigen::VectorXd::Ones(4)}).totally_non_aligned);
  EXPECT_THROW(total_nonalignment_check({z, Eigen::VectorXd::Ones(3)}), ValidationError);
}

TEST(DegenerateDirection, LinearDegreeFourPoints) {
  Eigen::VectorXd z(4), w(4);
  z << 1, 2, 3, 5;
  w << 1, 3, 2, 7;
  const ProbePair pair{z, w};
  ASSERT_TRUE(total_nonalignment_check(pair).totally_non_aligned);
  const auto u = construct_degenerate_direction(1, pair);
  ASSERT_TRUE(u);
  EXPECT_NEAR(u->norm(), 1.0, 1e-14);
  EXPECT_LE(linear_combination_residual(ActivationSpec::identity(), *u, pair), 1e-10);
}

TEST(DegenerateDirection, QuadraticSixAndSevenPoints) {
  SeededSampler s(8);
  Eigen::VectorXd z(7), w(7);
  for (int i = 0; i < 7; ++i) z(i) = s.normal(), w(i) = s.normal();
  const ProbePair six{z.head(6), w.head(6)};
  EXPECT_FALSE(construct_degenerate_direction(2, six).has_value());
  const ProbePair seven{z, w};
  const auto u = construct_degenerate_direction(2, seven);
  ASSERT_TRUE(u);
  EXPECT_LE(linear_combination_residual(ActivationSpec::polynomial({0, 0, 1}), *u, seven), 1e-9);
  EXPECT_LE(linear_combination_residual(ActivationSpec::polynomial({0.3, -1, 2}), *u, seven), 1e-9);
  EXPECT_GT(linear_combination_residual(ActivationSpec::tanh(), *u, seven), 1e-4);
}

TEST(DegenerateDirection, RequiresNonAlignedPair) {
  EXPECT_THROW(construct_degenerate_direction(1, {Eigen::Vector3d(1, 2, 3), Eigen::Vector3d(2, 4, 1)}),
               ValidationError);
}

TEST(LinearCombination, IdentityNullSpace) {
  Eigen::VectorXd z(3), w(3);
  z << 1, 2, 4;
  w << 1, -1, 3;
  // u orthogonal to both z and w
  const Eigen::Vector3d u = Eigen::Vector3d(z).cross(Eigen::Vector3d(w)).normalized();
  EXPECT_LE(linear_combination_residual(ActivationSpec::identity(), u, {z, w}), 1e-12);
  EXPECT_THROW(linear_combination_residual(ActivationSpec::identity(), Eigen::VectorXd::Zero(3), {z, w}),
               ValidationError);
}

TEST(LinearCombination, ReluHasPositiveFloor) {
  SeededSampler s(9);
  Eigen::MatrixXd b(4, 3);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = s.normal();
  const auto probe = nonaligned_pair_probe(b);
  const auto relu = ActivationSpec::relu();
  const double floor = annihilation_floor(relu, probe.pair);
  EXPECT_GT(floor, 0.0);
  const double best = min_residual_random_directions(relu, probe.pair, 100000, SeededSampler(10));
  EXPECT_GE(best, floor);
  const double grid_scale = feature_matrix(relu, probe.pair, lattice_grid()).cwiseAbs().maxCoeff();
  EXPECT_GE(best, 1e-3 * grid_scale);
}

TEST(Probes, DistinctCombination) {
  const auto p = distinct_combination_probe(Eigen::MatrixXd::Identity(3, 3));
  EXPECT_EQ(p.x, 2.0);
  EXPECT_EQ(p.y, Eigen::Vector3d(1, 2, 4));
  Eigen::MatrixXd b2(2, 2);
  b2 << 1, 0, 0, 1;
  EXPECT_TRUE(pairwise_distinct(b2 * distinct_combination_probe(b2).y));
  SeededSampler s(11);
  Eigen::MatrixXd b(20, 5);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = std::round(3 * s.normal());
  if (!TrainingSet(b).repeated_pair()) EXPECT_TRUE(pairwise_distinct(b * distinct_combination_probe(b).y));
  Eigen::MatrixXd rep(2, 2);
  rep << 1, 2, 1, 2;
  EXPECT_THROW(distinct_combination_probe(rep), ValidationError);
}

TEST(Probes, NonAlignedPair) {
  const auto p = nonaligned_pair_probe(Eigen::MatrixXd::Identity(2, 2));
  EXPECT_TRUE(total_nonalignment_check(p.pair).totally_non_aligned);
  Eigen::MatrixXd prop(2, 2);
  prop << 1, 0, 2, 0;
  EXPECT_THROW(nonaligned_pair_probe(prop), ValidationError);
  SeededSampler s(12);
  Eigen::MatrixXd b(10, 4);
  for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = s.normal();
  EXPECT_TRUE(total_nonalignment_check(nonaligned_pair_probe(b).pair).totally_non_aligned);
}
