#pragma once

#include <charconv>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ntk/error.hpp"

namespace ntk {

/// Pointwise activation function with its almost-everywhere derivative.
///
/// CLI names: "relu", "tanh", "erf", "identity", "gelu", "poly:c0,c1,...,cd"
/// (monomial coefficients, lowest degree first).
///
/// The ReLU derivative at the kink is 0.  GELU is the exact x * Phi(x).
class ActivationSpec {
 public:
  enum class Kind { relu, tanh, erf, identity, polynomial, gelu };

  static ActivationSpec relu() { return ActivationSpec(Kind::relu, "relu", {}); }
  static ActivationSpec tanh() { return ActivationSpec(Kind::tanh, "tanh", {}); }
  static ActivationSpec erf() { return ActivationSpec(Kind::erf, "erf", {}); }
  static ActivationSpec identity() { return ActivationSpec(Kind::identity, "identity", {}); }
  static ActivationSpec gelu() { return ActivationSpec(Kind::gelu, "gelu", {}); }

  static ActivationSpec polynomial(std::vector<double> coefficients) {
    if (coefficients.empty()) throw ValidationError("polynomial activation needs at least one coefficient");
    for (double c : coefficients)
      if (!std::isfinite(c)) throw ValidationError("polynomial coefficients must be finite");
    while (coefficients.size() > 1 && coefficients.back() == 0.0) coefficients.pop_back();
    std::string name = "poly:";
    for (std::size_t i = 0; i < coefficients.size(); ++i) {
      if (i) name += ',';
      name += format_coefficient(coefficients[i]);
    }
    return ActivationSpec(Kind::polynomial, std::move(name), std::move(coefficients));
  }

  static ActivationSpec parse(std::string_view text) {
    if (text == "relu") return relu();
    if (text == "tanh") return tanh();
    if (text == "erf") return erf();
    if (text == "identity") return identity();
    if (text == "gelu") return gelu();
    if (text.starts_with("poly:")) {
      std::vector<double> coefficients;
      std::string_view rest = text.substr(5);
      while (true) {
        const auto comma = rest.find(',');
        const std::string_view item = rest.substr(0, comma);
        double value = 0.0;
        const auto [end, ec] = std::from_chars(item.data(), item.data() + item.size(), value);
        if (item.empty() || ec != std::errc{} || end != item.data() + item.size())
          throw ValidationError("bad polynomial coefficient '" + std::string(item) + "' in activation '" +
                                std::string(text) + "'");
        coefficients.push_back(value);
        if (comma == std::string_view::npos) break;
        rest = rest.substr(comma + 1);
      }
      return polynomial(std::move(coefficients));
    }
    throw ValidationError("unknown activation '" + std::string(text) + "'");
  }

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  std::span<const double> coefficients() const { return coefficients_; }

  /// Present iff the activation is a polynomial (identity included).
  std::optional<int> polynomial_degree() const {
    if (kind_ == Kind::identity) return 1;
    if (kind_ == Kind::polynomial) return static_cast<int>(coefficients_.size()) - 1;
    return std::nullopt;
  }

  /// Points where the value or the derivative is not smooth.
  std::span<const double> kinks() const {
    static constexpr double kOrigin[] = {0.0};
    if (kind_ == Kind::relu) return kOrigin;
    return {};
  }

  double value(double x) const {
    switch (kind_) {
      case Kind::relu:
        return x > 0.0 ? x : 0.0;
      case Kind::tanh:
        return std::tanh(x);
      case Kind::erf:
        return std::erf(x);
      case Kind::identity:
        return x;
      case Kind::gelu:
        return 0.5 * x * std::erfc(-x * std::numbers::sqrt2 / 2.0);
      case Kind::polynomial: {
        double acc = 0.0;
        for (auto it = coefficients_.rbegin(); it != coefficients_.rend(); ++it) acc = acc * x + *it;
        return acc;
      }
    }
    return 0.0;
  }

  double derivative(double x) const {
    switch (kind_) {
      case Kind::relu:
        return x > 0.0 ? 1.0 : 0.0;
      case Kind::tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }
      case Kind::erf:
        return 2.0 * std::numbers::inv_sqrtpi * std::exp(-x * x);
      case Kind::identity:
        return 1.0;
      case Kind::gelu:
        return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0) +
               x * std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
      case Kind::polynomial: {
        double acc = 0.0;
        for (std::size_t k = coefficients_.size(); k-- > 1;) acc = acc * x + static_cast<double>(k) * coefficients_[k];
        return acc;
      }
    }
    return 0.0;
  }

 private:
  ActivationSpec(Kind kind, std::string name, std::vector<double> coefficients)
      : kind_(kind), name_(std::move(name)), coefficients_(std::move(coefficients)) {}

  static std::string format_coefficient(double c) {
    char buf[32];
    const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, c);
    return std::string(buf, end);
  }

  Kind kind_;
  std::string name_;
  std::vector<double> coefficients_;
};

inline double eval(const ActivationSpec& spec, double x) { return spec.value(x); }
inline double eval_derivative(const ActivationSpec& spec, double x) { return spec.derivative(x); }

/// sigma as a quadrature integrand.
struct ActivationValue {
  const ActivationSpec* spec;
  double operator()(double x) const { return spec->value(x); }
  std::span<const double> breakpoints() const { return spec->kinks(); }
};

/// sigma-dot as a quadrature integrand.
struct ActivationDerivative {
  const ActivationSpec* spec;
  double operator()(double x) const { return spec->derivative(x); }
  std::span<const double> breakpoints() const { return spec->kinks(); }
};

inline ActivationValue value_of(const ActivationSpec& spec) { return {&spec}; }
inline ActivationDerivative derivative_of(const ActivationSpec& spec) { return {&spec}; }

}  // namespace ntk
