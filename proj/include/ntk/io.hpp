#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ntk/activations.hpp"
#include "ntk/error.hpp"
#include "ntk/gauss.hpp"
#include "ntk/kernels.hpp"
#include "ntk/spectra.hpp"

namespace ntk::io {

using Json = nlohmann::ordered_json;

/// %.17g, or "nan"/"inf"/"-inf".
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline void dump(const Json& j, std::string& out, int indent, int depth) {
  const auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) { out += "{}"; return; }
      out += '{';
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += Json(key).dump();
        out += indent < 0 ? ":" : ": ";
        dump(value, out, indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) { out += "[]"; return; }
      // Numeric arrays stay on one line.
      const bool flat = std::all_of(j.begin(), j.end(), [](const Json& e) { return e.is_number() || e.is_null(); });
      out += '[';
      bool first = true;
      for (const auto& value : j) {
        if (!first) out += flat && indent >= 0 ? ", " : ",";
        first = false;
        if (!flat) newline(depth + 1);
        dump(value, out, indent, depth + 1);
      }
      if (!flat) newline(depth);
      out += ']';
      return;
    }
    case Json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? format_double(v) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace detail

/// Serialises with every double at 17 significant digits; non-finite numbers become null.
inline std::string dump(const Json& j, int indent = 2) {
  std::string out;
  detail::dump(j, out, indent, 0);
  out += '\n';
  return out;
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw ValidationError("failed writing '" + path + "'");
}

inline std::string read_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ValidationError(what + ": " + e.what());
  }
}

// ---------------------------------------------------------------- CSV data

struct LoadedData {
  TrainingSet set;
  std::vector<std::string> warnings;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_real(const std::string& cell, std::size_t line) {
  const std::string t = trim(cell);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(v))
    throw ValidationError("parse error at line " + std::to_string(line) + ": '" + t + "' is not a finite real");
  return v;
}

/// Rows of comma-separated reals: the first expected_dim columns are inputs,
/// the rest (target_cols of them, or all remaining when unset) are targets.
/// Blank lines and lines starting with '#' are skipped.
inline LoadedData load_training_set(const std::string& path, int expected_dim, double beta = 1.0,
                                    std::optional<int> target_cols = std::nullopt) {
  if (expected_dim < 1) throw ValidationError("expected_dim must be >= 1");
  std::ifstream f(path);
  if (!f) throw ValidationError("cannot open data file '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string text;
  std::size_t line = 0;
  std::optional<std::size_t> width;
  while (std::getline(f, text)) {
    ++line;
    const std::string t = trim(text);
    if (t.empty() || t[0] == '#') continue;
    std::vector<double> row;
    std::stringstream ss(t);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(parse_real(cell, line));
    if (t.back() == ',') throw ValidationError("parse error at line " + std::to_string(line) + ": trailing comma");
    if (width && row.size() != *width)
      throw ValidationError("line " + std::to_string(line) + " has " + std::to_string(row.size()) +
                            " columns, expected " + std::to_string(*width));
    width = row.size();
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ValidationError("data file '" + path + "' has no rows");
  const int cols = static_cast<int>(*width);
  const int targets = target_cols.value_or(cols - expected_dim);
  if (targets < 0 || cols != expected_dim + targets)
    throw ValidationError("dimension mismatch: rows have " + std::to_string(cols) + " columns, expected " +
                          std::to_string(expected_dim) + " inputs" +
                          (target_cols ? " + " + std::to_string(*target_cols) + " targets" : std::string()));

  const auto n = static_cast<Eigen::Index>(rows.size());
  Eigen::MatrixXd in(n, expected_dim);
  std::optional<Eigen::MatrixXd> out;
  if (targets > 0) out = Eigen::MatrixXd(n, targets);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int c = 0; c < expected_dim; ++c) in(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(c)];
    for (int c = 0; c < targets; ++c)
      (*out)(i, c) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(expected_dim + c)];
  }
  LoadedData data{TrainingSet(std::move(in), std::move(out)), {}};
  if (auto rep = data.set.repeated_pair())
    data.warnings.push_back("inputs are not pairwise distinct: rows " + std::to_string(rep->first) + " and " +
                            std::to_string(rep->second) + " coincide");
  if (beta == 0.0)
    if (auto prop = data.set.proportional_pair())
      data.warnings.push_back("beta = 0 and inputs are not pairwise non-proportional: rows " +
                              std::to_string(prop->first) + " and " + std::to_string(prop->second));
  return data;
}

inline std::string matrix_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  out += '\n';
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + row[i];
    out += '\n';
  }
  return out;
}

// ------------------------------------------------------------- run config

struct RunConfig {
  ArchitectureConfig architecture;
  std::string activation = "relu";
  int quad_order = QuadratureRule::kDefaultOrder;
  std::uint64_t seed = 0;
  std::map<std::string, double> tolerances;

  ActivationSpec activation_spec() const { return ActivationSpec::parse(activation); }

  double tolerance(const std::string& name, double fallback) const {
    const auto it = tolerances.find(name);
    return it == tolerances.end() ? fallback : it->second;
  }
};

namespace detail {

inline void reject_unknown(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  for (const auto& [key, value] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ValidationError("unknown config key '" + where + key + "'");
  }
}

template <class T>
T get_as(const Json& obj, const char* key, const std::string& where) {
  try {
    return obj.at(key).get<T>();
  } catch (const Json::exception&) {
    throw ValidationError("config key '" + where + key + "' has the wrong type");
  }
}

inline double get_real(const Json& obj, const char* key, const std::string& where) {
  if (!obj.at(key).is_number()) throw ValidationError("config key '" + where + key + "' must be a number");
  return obj.at(key).get<double>();
}

inline int get_int(const Json& obj, const char* key, const std::string& where) {
  const Json& v = obj.at(key);
  if (!v.is_number_integer()) throw ValidationError("config key '" + where + key + "' must be an integer");
  return v.get<int>();
}

}  // namespace detail

/// Strict parse: unknown keys at any level are rejected.
inline RunConfig parse_run_config(const Json& j) {
  if (!j.is_object()) throw ValidationError("config must be a JSON object");
  detail::reject_unknown(j, {"architecture", "activation", "quad_order", "seed", "tolerances"}, "");
  RunConfig rc;
  if (j.contains("architecture")) {
    const Json& a = j.at("architecture");
    if (!a.is_object()) throw ValidationError("config key 'architecture' must be an object");
    const std::string w = "architecture.";
    detail::reject_unknown(a, {"n0", "depth", "beta", "rho_w", "rho_b", "layer1_convention", "outputs"}, w);
    ArchitectureConfig& c = rc.architecture;
    if (a.contains("n0")) c.n0 = detail::get_int(a, "n0", w);
    if (a.contains("depth")) c.depth = detail::get_int(a, "depth", w);
    if (a.contains("beta")) c.beta = detail::get_real(a, "beta", w);
    if (a.contains("rho_w")) c.rho_w = detail::get_real(a, "rho_w", w);
    if (a.contains("rho_b")) c.rho_b = detail::get_real(a, "rho_b", w);
    if (a.contains("outputs")) c.outputs = detail::get_int(a, "outputs", w);
    if (a.contains("layer1_convention"))
      c.layer1_convention = parse_layer1_convention(detail::get_as<std::string>(a, "layer1_convention", w));
  }
  if (j.contains("activation")) rc.activation = detail::get_as<std::string>(j, "activation", "");
  if (j.contains("quad_order")) rc.quad_order = detail::get_int(j, "quad_order", "");
  if (j.contains("seed")) {
    const Json& s = j.at("seed");
    if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
      throw ValidationError("config key 'seed' must be a non-negative integer");
    rc.seed = s.get<std::uint64_t>();
  }
  if (j.contains("tolerances")) {
    const Json& t = j.at("tolerances");
    if (!t.is_object()) throw ValidationError("config key 'tolerances' must be an object");
    for (const auto& [key, value] : t.items()) {
      if (!value.is_number()) throw ValidationError("tolerance '" + key + "' must be a number");
      rc.tolerances[key] = value.get<double>();
    }
  }
  rc.architecture.validate();
  (void)rc.activation_spec();
  if (rc.quad_order < 1) throw ValidationError("quad_order must be >= 1");
  return rc;
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(parse_json(read_text(path), "config '" + path + "'"));
}

inline Json to_json(const ArchitectureConfig& c) {
  return Json{{"n0", c.n0},       {"depth", c.depth},
              {"beta", c.beta},   {"rho_w", c.rho_w},
              {"rho_b", c.rho_b}, {"layer1_convention", std::string(to_string(c.layer1_convention))},
              {"outputs", c.outputs}};
}

inline Json to_json(const RunConfig& rc) {
  Json t = Json::object();
  for (const auto& [k, v] : rc.tolerances) t[k] = v;
  return Json{{"architecture", to_json(rc.architecture)},
              {"activation", rc.activation},
              {"quad_order", rc.quad_order},
              {"seed", rc.seed},
              {"tolerances", t}};
}

// ---------------------------------------------------------------- reports

inline Json to_json(const KernelMatrix& k) {
  Json values = Json::array();
  for (Eigen::Index i = 0; i < k.values.rows(); ++i)
    for (Eigen::Index j = 0; j < k.values.cols(); ++j) values.push_back(k.values(i, j));
  return Json{{"kind", std::string(to_string(k.kind))},
              {"layer", k.layer},
              {"size", k.values.rows()},
              {"values", values}};
}

inline KernelMatrix kernel_from_json(const Json& j) {
  try {
    KernelMatrix k;
    k.kind = parse_kernel_kind(j.at("kind").get<std::string>());
    k.layer = j.at("layer").get<int>();
    const auto n = j.at("size").get<Eigen::Index>();
    const Json& v = j.at("values");
    if (n < 1 || !v.is_array() || static_cast<Eigen::Index>(v.size()) != n * n)
      throw ValidationError("kernel matrix values must hold size^2 numbers");
    k.values.resize(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index c = 0; c < n; ++c) {
        const Json& e = v.at(static_cast<std::size_t>(i * n + c));
        if (!e.is_number()) throw ValidationError("kernel matrix entries must be numbers");
        k.values(i, c) = e.get<double>();
      }
    return k;
  } catch (const Json::exception& e) {
    throw ValidationError(std::string("malformed kernel matrix record: ") + e.what());
  }
}

inline Json to_json(const SpectralReport& r) {
  return Json{{"matrix_kind", r.matrix_kind},
              {"layer", r.layer},
              {"lambda_min", r.lambda_min},
              {"lambda_max", r.lambda_max},
              {"verdict", std::string(to_string(r.verdict))},
              {"relative_tol", r.relative_tol},
              {"hypothesis_flags", r.hypothesis_flags}};
}

}  // namespace ntk::io
