// Command-line front end: kernel, empirical, spectrum, train, flow, findiff.

#include <cstdint>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ntk/ntk.hpp"

namespace {

using ntk::io::Json;

struct Common {
  std::string config_path;
  std::string data_path;
  std::string out;
  std::optional<int> quad_order;
  std::string quad_scheme = "panel_legendre";
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-")
    std::cout << text;
  else
    ntk::io::write_text(out, text);
}

void warn(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

ntk::io::RunConfig load_config(const Common& c) {
  ntk::io::RunConfig rc = ntk::io::load_run_config(c.config_path);
  if (c.quad_order) rc.quad_order = *c.quad_order;
  if (c.seed) rc.seed = *c.seed;
  return rc;
}

ntk::KernelOptions kernel_options(const Common& c, const ntk::io::RunConfig& rc) {
  ntk::KernelOptions opts;
  if (c.quad_scheme == "panel_legendre")
    opts.rule = ntk::QuadratureRule::panel_legendre(rc.quad_order);
  else if (c.quad_scheme == "gauss_hermite")
    opts.rule = ntk::QuadratureRule::gauss_hermite(rc.quad_order);
  else
    throw ntk::ValidationError("unknown quadrature scheme '" + c.quad_scheme + "'");
  opts.threads = c.threads;
  return opts;
}

Json quadrature_json(const ntk::KernelOptions& opts) {
  return Json{{"scheme", opts.rule.scheme() == ntk::QuadratureRule::Scheme::gauss_hermite ? "gauss_hermite"
                                                                                           : "panel_legendre"},
              {"order", opts.rule.order()}};
}

ntk::io::LoadedData load_data(const Common& c, const ntk::io::RunConfig& rc,
                              std::optional<int> target_cols = std::nullopt) {
  auto data = ntk::io::load_training_set(c.data_path, rc.architecture.n0, rc.architecture.beta, target_cols);
  warn(data.warnings);
  return data;
}

void add_common(CLI::App* cmd, Common& c, bool data = true) {
  if (data) {
    cmd->add_option("--config", c.config_path, "RunConfig JSON file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", c.data_path, "CSV data, one input per row")->required()->check(CLI::ExistingFile);
    cmd->add_option("--quad-order", c.quad_order, "quadrature nodes per dimension (overrides config)");
    cmd->add_option("--quad-scheme", c.quad_scheme, "panel_legendre | gauss_hermite")
        ->check(CLI::IsMember({"panel_legendre", "gauss_hermite"}));
  }
  cmd->add_option("--out", c.out, "output file (default stdout)");
  cmd->add_option("--seed", c.seed, "seed (overrides config)");
  cmd->add_option("--threads", c.threads, "worker cap (default NTK_THREADS, then all cores)");
}

int depth_or(const std::optional<int>& depth, const ntk::io::RunConfig& rc) {
  const int d = depth.value_or(rc.architecture.depth);
  if (d < 1) throw ntk::ValidationError("depth must be >= 1");
  return d;
}

// ------------------------------------------------------------------ kernel

void run_kernel(const Common& c, std::optional<int> depth_opt, bool closed_form) {
  auto rc = load_config(c);
  const int depth = depth_or(depth_opt, rc);
  rc.architecture.depth = depth;
  auto opts = kernel_options(c, rc);
  opts.closed_form = closed_form;
  const auto data = load_data(c, rc, 0);
  const auto stack = ntk::kernel_stack(data.set, rc.activation_spec(), rc.architecture, opts, depth);
  Json matrices = Json::array();
  for (const auto* group : {&stack.sigma_hat, &stack.sigma, &stack.sigma_dot, &stack.theta})
    for (const auto& k : *group) matrices.push_back(ntk::io::to_json(k));
  const Json doc{{"config", ntk::io::to_json(rc)},
                 {"quadrature", quadrature_json(opts)},
                 {"closed_form", closed_form},
                 {"size", data.set.size()},
                 {"warnings", data.warnings},
                 {"matrices", matrices}};
  emit(c.out, ntk::io::dump(doc));
}

// --------------------------------------------------------------- empirical

void run_empirical(const Common& c, const std::vector<int>& widths, int samples) {
  const auto rc = load_config(c);
  const auto opts = kernel_options(c, rc);
  const auto data = load_data(c, rc, 0);
  const auto spec = rc.activation_spec();
  for (int w : widths)
    if (w < 1) throw ntk::ValidationError("widths must be >= 1");
  if (samples < 1) throw ntk::ValidationError("samples must be >= 1");
  const auto theta = ntk::theta_recursion(data.set, spec, rc.architecture, opts, rc.architecture.depth);
  const auto rows = ntk::width_sweep(rc.architecture, widths, data.set, spec, samples, ntk::SeededSampler(rc.seed),
                                     theta.back().values, c.threads);
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : rows)
    cells.push_back({std::to_string(r.width), std::to_string(r.sample_count),
                     ntk::io::format_double(r.frobenius_error_vs_exact), ntk::io::format_double(r.median_stderr)});
  emit(c.out, ntk::io::matrix_csv({"width", "sample_count", "frobenius_error_vs_exact", "median_stderr"}, cells));
}

// ---------------------------------------------------------------- spectrum

void run_spectrum(const Common& c, std::optional<int> depth_opt, std::optional<double> tol_opt) {
  const auto rc = load_config(c);
  const int depth = depth_or(depth_opt, rc);
  const double tol = tol_opt.value_or(rc.tolerance("spd", ntk::kDefaultSpdTolerance));
  if (!(tol >= 0.0)) throw ntk::ValidationError("tol must be >= 0");
  const auto opts = kernel_options(c, rc);
  const auto data = load_data(c, rc, 0);
  const auto reports = ntk::positivity_report(data.set, rc.activation_spec(), rc.architecture, opts, depth, tol);
  Json doc = Json::array();
  for (const auto& r : reports) doc.push_back(ntk::io::to_json(r));
  emit(c.out, ntk::io::dump(doc));
}

// ------------------------------------------------------------------- train

void run_train(const Common& c, int width, int steps, const std::string& lr, std::optional<double> stop_below) {
  const auto rc = load_config(c);
  if (width < 1) throw ntk::ValidationError("width must be >= 1");
  const auto data = load_data(c, rc, rc.architecture.outputs);
  const auto spec = rc.activation_spec();
  ntk::SeededSampler sampler(rc.seed);
  ntk::Params params = ntk::init_params(rc.architecture, ntk::equal_widths(rc.architecture, width), sampler);
  double step = 0.0;
  if (lr == "auto") {
    step = ntk::default_step_size(params, data.set, spec, rc.architecture);
  } else {
    try {
      std::size_t used = 0;
      step = std::stod(lr, &used);
      if (used != lr.size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw ntk::ValidationError("--lr must be 'auto' or a positive real, got '" + lr + "'");
    }
  }
  ntk::GdOptions gd;
  gd.stop_below = stop_below;
  const auto result = ntk::gd_train(std::move(params), data.set, spec, rc.architecture, step, steps, gd);
  std::vector<std::vector<std::string>> cells;
  for (std::size_t k = 0; k < result.loss.size(); ++k)
    cells.push_back({std::to_string(k), ntk::io::format_double(result.loss[k])});
  emit(c.out, ntk::io::matrix_csv({"step", "loss"}, cells));
  std::cerr << "step size " << ntk::io::format_double(step) << ", final loss "
            << ntk::io::format_double(result.loss.back()) << '\n';
}

// -------------------------------------------------------------------- flow

Eigen::MatrixXd load_matrix_csv(const std::string& path, Eigen::Index rows) {
  auto data = ntk::io::load_training_set(path, 1, 1.0, std::nullopt);
  Eigen::MatrixXd m(data.set.size(), 1 + (data.set.has_targets() ? data.set.targets()->cols() : 0));
  m.col(0) = data.set.inputs().col(0);
  if (data.set.has_targets()) m.rightCols(m.cols() - 1) = *data.set.targets();
  if (m.rows() != rows)
    throw ntk::ValidationError("'" + path + "' has " + std::to_string(m.rows()) + " rows, theta has size " +
                               std::to_string(rows));
  return m;
}

void run_flow(const Common& c, const std::string& theta_path, double t0, double t1, int points,
              const std::string& targets_path, const std::string& f0_path) {
  if (!(t0 >= 0.0) || !(t1 >= t0)) throw ntk::ValidationError("need 0 <= t0 <= t1");
  if (points < 1) throw ntk::ValidationError("points must be >= 1");
  const Json doc = ntk::io::parse_json(ntk::io::read_text(theta_path), "kernel file '" + theta_path + "'");
  const Json* records = doc.is_object() && doc.contains("matrices") ? &doc.at("matrices") : &doc;
  if (!records->is_array()) throw ntk::ValidationError("kernel file has no matrices array");
  std::optional<ntk::KernelMatrix> theta;
  for (const auto& r : *records) {
    auto k = ntk::io::kernel_from_json(r);
    if (k.kind == ntk::KernelKind::theta && (!theta || k.layer > theta->layer)) theta = std::move(k);
  }
  if (!theta) throw ntk::ValidationError("kernel file holds no theta matrix");
  const Eigen::Index n = theta->size();
  const Eigen::MatrixXd y = targets_path.empty() ? Eigen::MatrixXd::Ones(n, 1) : load_matrix_csv(targets_path, n);
  const Eigen::MatrixXd f0 = f0_path.empty() ? Eigen::MatrixXd::Zero(n, y.cols()) : load_matrix_csv(f0_path, n);

  std::optional<ntk::LinearizedFlow> flow;
  try {
    flow.emplace(theta->values);
  } catch (const ntk::NumericalError& e) {
    throw ntk::NumericalError("theta (layer " + std::to_string(theta->layer) + ") in '" + theta_path + "': " + e.what());
  } catch (const ntk::ValidationError& e) {
    throw ntk::ValidationError("theta (layer " + std::to_string(theta->layer) + ") in '" + theta_path + "': " + e.what());
  }
  std::vector<std::string> header{"t", "loss"};
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index mu = 0; mu < y.cols(); ++mu) header.push_back("f_" + std::to_string(i) + "_" + std::to_string(mu));
  std::vector<std::vector<std::string>> cells;
  for (int p = 0; p < points; ++p) {
    const double t = points == 1 ? t0 : t0 + (t1 - t0) * p / (points - 1);
    const auto s = flow->at(f0, y, t);
    std::vector<std::string> row{ntk::io::format_double(t), ntk::io::format_double(s.loss)};
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index mu = 0; mu < y.cols(); ++mu) row.push_back(ntk::io::format_double(s.outputs(i, mu)));
    cells.push_back(std::move(row));
  }
  emit(c.out, ntk::io::matrix_csv(header, cells));
}

// ----------------------------------------------------------------- findiff

void run_degree(const Common& c, const std::string& fn, const std::string& domain_text, int max_order,
                double tol, int stencils) {
  const auto spec = ntk::ActivationSpec::parse(fn);
  const auto domain = ntk::findiff::parse_interval(domain_text);
  ntk::findiff::DegreeOptions opts;
  opts.tol = tol;
  opts.stencils = stencils;
  opts.seed = c.seed.value_or(0);
  const auto v = ntk::findiff::polynomial_degree_estimate([&](double x) { return spec.value(x); }, domain,
                                                          max_order, opts);
  const Json doc{{"function", spec.name()},
                 {"domain", {domain.lo, domain.hi}},
                 {"max_order", max_order},
                 {"tol", tol},
                 {"stencils", stencils},
                 {"seed", opts.seed},
                 {"verdict", v.polynomial ? "polynomial" : "non_polynomial"},
                 {"degree", v.polynomial ? Json(v.degree) : Json(nullptr)},
                 {"scale", v.scale},
                 {"max_relative_difference", v.max_relative_difference}};
  emit(c.out, ntk::io::dump(doc));
}

void run_identities(const Common& c, int trials) {
  const std::uint64_t seed = c.seed.value_or(0);
  Json doc = Json::array();
  for (const auto& r : ntk::findiff::identity_suite(trials, seed))
    doc.push_back(Json{{"identity", r.identity},
                       {"trials", r.trials},
                       {"seed", seed},
                       {"max_relative_residual", r.max_relative_residual},
                       {"tolerance", r.tolerance},
                       {"verdict", r.passed ? "pass" : "fail"}});
  emit(c.out, ntk::io::dump(doc));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural tangent kernels: exact recursions, empirical kernels, spectra, dynamics"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);

  Common kc, ec, sc, tc, fc, dc, ic;

  auto* kernel = app.add_subcommand("kernel", "infinite-width kernel matrices for every layer");
  add_common(kernel, kc);
  std::optional<int> kernel_depth;
  bool quadrature_only = false;
  kernel->add_option("--depth", kernel_depth, "number of layers L (default from config)");
  kernel->add_flag("--no-closed-form", quadrature_only, "use quadrature even for relu/identity");

  auto* empirical = app.add_subcommand("empirical", "Monte Carlo empirical NTK width sweep (CSV)");
  add_common(empirical, ec);
  std::vector<int> widths{64, 256, 1024};
  int samples = 50;
  empirical->add_option("--widths", widths, "hidden widths")->delimiter(',');
  empirical->add_option("--samples", samples, "initialisations per width");

  auto* spectrum = app.add_subcommand("spectrum", "positivity report per layer (JSON)");
  add_common(spectrum, sc);
  std::optional<int> spectrum_depth;
  std::optional<double> tol;
  spectrum->add_option("--depth", spectrum_depth, "number of layers L (default from config)");
  spectrum->add_option("--tol", tol, "relative SPD tolerance (default tolerances.spd, then 1e-8)");

  auto* train = app.add_subcommand("train", "full-batch gradient descent (CSV loss curve)");
  add_common(train, tc);
  int width = 512, steps = 1000;
  std::string lr = "auto";
  std::optional<double> stop_below;
  train->add_option("--width", width, "hidden width");
  train->add_option("--steps", steps, "gradient steps");
  train->add_option("--lr", lr, "step size or 'auto' for 1/(2 lambda_max)");
  train->add_option("--stop-below", stop_below, "stop once the loss falls below this value");

  auto* flow = app.add_subcommand("flow", "linearized gradient flow under a theta matrix (CSV)");
  add_common(flow, fc, false);
  std::string theta_path, targets_path, f0_path;
  double t0 = 0.0, t1 = 100.0;
  int points = 200;
  flow->add_option("--theta", theta_path, "kernels.json from 'ntk kernel'")->required()->check(CLI::ExistingFile);
  flow->add_option("--t0", t0, "first time");
  flow->add_option("--t1", t1, "last time");
  flow->add_option("--points", points, "number of times");
  flow->add_option("--targets", targets_path, "CSV targets, N rows (default all ones)")->check(CLI::ExistingFile);
  flow->add_option("--f0", f0_path, "CSV initial outputs, N rows (default zeros)")->check(CLI::ExistingFile);

  auto* findiff = app.add_subcommand("findiff", "finite-difference calculus");
  findiff->require_subcommand(1);
  auto* degree = findiff->add_subcommand("degree", "numerical polynomial detection");
  add_common(degree, dc, false);
  std::string fn = "tanh", domain = "-2:2";
  int max_order = 8, stencils = 200;
  double degree_tol = 1e-7;
  degree->add_option("--fn", fn, "relu|tanh|erf|identity|gelu|poly:c0,c1,...");
  degree->add_option("--domain", domain, "lo:hi");
  degree->add_option("--max-order", max_order, "highest difference order tried");
  degree->add_option("--tol", degree_tol, "vanishing tolerance relative to max |f|");
  degree->add_option("--stencils", stencils, "stencils per order");
  auto* identities = findiff->add_subcommand("identities", "randomised identity suite");
  add_common(identities, ic, false);
  int trials = 1000;
  identities->add_option("--trials", trials, "trials per identity");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    if (rc == 0) return 0;
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*kernel) run_kernel(kc, kernel_depth, !quadrature_only);
    else if (*empirical) run_empirical(ec, widths, samples);
    else if (*spectrum) run_spectrum(sc, spectrum_depth, tol);
    else if (*train) run_train(tc, width, steps, lr, stop_below);
    else if (*flow) run_flow(fc, theta_path, t0, t1, points, targets_path, f0_path);
    else if (*degree) run_degree(dc, fn, domain, max_order, degree_tol, stencils);
    else if (*identities) run_identities(ic, trials);
  } catch (const ntk::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const ntk::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
