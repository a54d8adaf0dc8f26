#include "blockfit/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "blockfit/error.hpp"
#include "blockfit/io.hpp"
#include "blockfit/prediction.hpp"
#include "blockfit/selection.hpp"
#include "blockfit/simulation.hpp"

namespace blockfit {

namespace {

struct InputArgs {
  std::string edges;
  std::string cov;
  std::string family;
  bool directed = false;
  int n = 0;
  std::optional<double> fill;
  int labels = 0;
  bool dyads = false;
};

struct EngineArgs {
  int restarts = 5;
  std::uint64_t seed = 0;
  double tol = 1e-6;
  int max_iter = 500;
  std::string init = "hier";
  std::string init_labels;
  std::string convention = "ordered";
};

struct Loaded {
  FamilySpec spec;
  ValuedGraph graph;
  std::optional<EdgeCovariates> cov;
  const EdgeCovariates* cov_ptr() const { return cov ? &*cov : nullptr; }
};

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return in;
}

void add_input_options(CLI::App* cmd, InputArgs& a, bool need_family) {
  cmd->add_option("--edges", a.edges, "edge list CSV (i,j,value)")->required();
  cmd->add_option("--cov", a.cov, "edge covariate CSV (i,j,y1..yp)");
  auto* fam = cmd->add_option("--family", a.family,
                              "bernoulli|multinomial|gaussian|bigauss|poisson|poisson-prmh|"
                              "poisson-prmi|linreg|simplereg");
  if (need_family) fam->required();
  cmd->add_flag("--directed", a.directed, "treat the edge list as directed");
  cmd->add_option("--n", a.n, "number of nodes (default: largest index + 1)");
  cmd->add_option("--fill", a.fill, "value for pairs missing from the edge list");
  cmd->add_option("--labels", a.labels, "number of labels m (multinomial)");
  cmd->add_flag("--dyads", a.dyads, "encode a directed 0/1 graph as undirected dyad labels");
}

void add_engine_options(CLI::App* cmd, EngineArgs& e) {
  cmd->add_option("--restarts", e.restarts, "EM restarts")->capture_default_str();
  cmd->add_option("--seed", e.seed, "random seed")->capture_default_str();
  cmd->add_option("--tol", e.tol, "relative bound change for convergence")->capture_default_str();
  cmd->add_option("--max-iter", e.max_iter, "outer EM iterations")->capture_default_str();
  cmd->add_option("--init", e.init, "hier|random|file")
      ->check(CLI::IsMember({"hier", "random", "file"}))
      ->capture_default_str();
  cmd->add_option("--init-labels", e.init_labels, "label file for --init file");
  cmd->add_option("--edge-count-convention", e.convention, "ordered|unordered")
      ->check(CLI::IsMember({"ordered", "unordered"}))
      ->capture_default_str();
}

Loaded load_inputs(const InputArgs& a, std::optional<FamilySpec> known = std::nullopt) {
  Loaded l;
  FamilySpec spec = known ? *known : parse_family(a.family, a.labels);
  EdgeCsvOptions opt;
  opt.n = a.n;
  opt.fill = a.fill;
  opt.num_labels = spec.kind == FamilyKind::Multinomial ? spec.num_labels : 0;
  if (a.dyads) {
    if (spec.kind != FamilyKind::Multinomial)
      throw InvalidParameter("--dyads requires the multinomial family");
    opt.directed = true;
    opt.kind = ValueKind::Count;
    opt.num_labels = 0;
    auto in = open_in(a.edges);
    l.graph = encode_dyads(read_edge_csv(in, opt));
  } else {
    opt.directed = spec.value_kind() == ValueKind::PairedReal ? false : a.directed;
    opt.kind = spec.value_kind();
    auto in = open_in(a.edges);
    l.graph = read_edge_csv(in, opt);
  }
  if (spec.kind == FamilyKind::Multinomial && spec.num_labels == 0)
    spec.num_labels = l.graph.num_labels();
  if (!a.cov.empty()) {
    auto in = open_in(a.cov);
    l.cov = read_covariate_csv(in, l.graph);
    if (spec.uses_covariates() && spec.kind != FamilyKind::SimpleRegression && !known)
      spec.covariate_dim = l.cov->dim();
  }
  l.spec = spec;
  validate_data(l.spec, l.graph, l.cov_ptr());
  return l;
}

FitOptions make_fit_options(const EngineArgs& e, int n) {
  FitOptions o;
  o.restarts = e.restarts;
  o.seed = e.seed;
  o.tolerance = e.tol;
  o.max_outer = e.max_iter;
  if (e.restarts < 1) throw InvalidParameter("--restarts must be at least 1");
  if (e.max_iter < 1) throw InvalidParameter("--max-iter must be at least 1");
  if (!(e.tol > 0.0)) throw InvalidParameter("--tol must be positive");
  if (e.init == "hier") {
    o.init = InitMethod::Hierarchical;
  } else if (e.init == "random") {
    o.init = InitMethod::Random;
  } else {
    if (e.init_labels.empty()) throw InvalidParameter("--init file needs --init-labels");
    auto in = open_in(e.init_labels);
    o.init = InitMethod::Given;
    o.given_labels = read_labels(in);
    if (static_cast<int>(o.given_labels.size()) != n)
      throw DimensionError("label file has " + std::to_string(o.given_labels.size()) +
                           " entries for " + std::to_string(n) + " nodes");
  }
  return o;
}

StoredFit store(const FitResult& fit, const Loaded& l, const std::optional<IclBreakdown>& b,
                EdgeCountConvention convention) {
  StoredFit s;
  s.fit = fit;
  s.n = l.graph.size();
  if (b) s.icl = IclSummary{b->icl, b->complete_loglik, b->penalty, b->param_count, convention};
  if (l.cov) s.mean_covariate = l.cov->mean();
  return s;
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw InputError("cannot write '" + path + "'");
  f << text;
}

StoredFit load_fit(const std::string& path) {
  auto in = open_in(path);
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::exception& e) {
    throw InputError("'" + path + "' is not valid JSON: " + e.what());
  }
  return fit_from_json(j);
}

std::string csv_num(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

void print_matrix(std::ostream& os, const std::string& title, const Eigen::MatrixXd& m) {
  os << title << '\n';
  os << std::setw(8) << "";
  for (Eigen::Index l = 0; l < m.cols(); ++l) os << std::setw(12) << l + 1;
  os << '\n';
  for (Eigen::Index q = 0; q < m.rows(); ++q) {
    os << std::setw(8) << q + 1;
    for (Eigen::Index l = 0; l < m.cols(); ++l) os << std::setw(12) << std::setprecision(4) << m(q, l);
    os << '\n';
  }
}

std::string render_report(const StoredFit& s, const std::string& label) {
  const FitResult& f = s.fit;
  std::ostringstream os;
  const int Q = f.num_groups();
  os << "Model " << label << ": family " << f.family.name() << ", "
     << (f.directed ? "directed" : "undirected") << ", n = " << s.n << ", Q = " << Q << '\n';
  os << "  bound J = " << std::setprecision(10) << f.bound() << ", entropy H = " << f.entropy
     << ", " << (f.converged ? "converged" : "not converged") << " after " << f.iterations
     << " iterations\n";
  std::vector<int> sizes(Q, 0);
  for (int z : f.map_assignment) ++sizes[z];
  os << "\nGroup   size   alpha (%)\n";
  for (int q = 0; q < Q; ++q)
    os << std::setw(5) << q + 1 << std::setw(7) << sizes[q] << std::setw(12) << std::fixed
       << std::setprecision(1) << 100.0 * f.params.alpha(q) << '\n';
  os.unsetf(std::ios::floatfield);
  const auto names = f.family.component_names();
  for (std::size_t c = 0; c < names.size(); ++c) {
    os << '\n';
    print_matrix(os, names[c], f.params.theta.components[c]);
  }
  const auto snames = f.family.shared_names();
  if (!snames.empty()) os << '\n';
  for (std::size_t c = 0; c < snames.size(); ++c) {
    const double v = f.params.theta.shared(c);
    os << snames[c] << " = " << std::setprecision(6) << v;
    if (f.family.kind == FamilyKind::PoissonPRMH && static_cast<Eigen::Index>(c) < s.mean_covariate.size()) {
      const double ybar = s.mean_covariate(c);
      os << "   (mean covariate " << ybar << ", exp(beta * mean) = " << std::exp(v * ybar) << ")";
    }
    os << '\n';
  }
  if (s.icl) {
    os << "\nICL = " << std::setprecision(10) << s.icl->icl << "  (complete log-likelihood "
       << s.icl->complete_loglik << ", penalty " << s.icl->penalty << ", P_Q = "
       << s.icl->param_count << ", " << convention_name(s.icl->convention) << " edge count)\n";
  }
  if (!f.diagnostics.empty()) {
    os << "\nDiagnostics:\n";
    for (const auto& d : f.diagnostics) os << "  " << d << '\n';
  }
  return os.str();
}

int run_fit(const InputArgs& in, const EngineArgs& eng, int Q, const std::string& out_path,
            std::ostream& out) {
  const Loaded l = load_inputs(in);
  const FitOptions options = make_fit_options(eng, l.graph.size());
  const FitResult f = fit(l.graph, l.cov_ptr(), l.spec, Q, options);
  const EdgeCountConvention conv = parse_convention(eng.convention);
  const IclBreakdown b = icl(l.graph, l.cov_ptr(), f, conv);
  write_text(out_path, fit_to_json(store(f, l, b, conv)).dump(2) + "\n", out);
  return kExitOk;
}

int run_select(const InputArgs& in, const EngineArgs& eng, int qmin, int qmax,
               const std::string& format, const std::string& out_path,
               const std::string& fit_out, std::ostream& out) {
  const Loaded l = load_inputs(in);
  const FitOptions options = make_fit_options(eng, l.graph.size());
  const EdgeCountConvention conv = parse_convention(eng.convention);
  const SelectionResult r = select_q(l.graph, l.cov_ptr(), l.spec, qmin, qmax, options, conv);
  std::ostringstream os;
  if (format == "json") {
    os << selection_to_json(r).dump(2) << '\n';
  } else {
    write_selection_csv(os, r);
  }
  write_text(out_path, os.str(), out);
  if (r.chosen_q == 0) throw NumericalError("no Q in the range could be fitted");
  if (!fit_out.empty()) {
    const SelectionRecord* best = r.chosen();
    const IclBreakdown b = icl(l.graph, l.cov_ptr(), *best->fit, conv);
    write_text(fit_out, fit_to_json(store(*best->fit, l, b, conv)).dump(2) + "\n", out);
  }
  if (!out_path.empty() && out_path != "-") out << "chosen Q = " << r.chosen_q << '\n';
  return kExitOk;
}

int run_simulate(const std::string& config_path, const std::string& out_dir, int threads,
                 std::optional<int> replicates, std::optional<std::uint64_t> seed,
                 std::ostream& out) {
  auto in = open_in(config_path);
  GridConfig config = parse_grid_config(in);
  if (threads > 0) config.threads = threads;
  if (replicates) config.replicates = *replicates;
  if (seed) config.seed = *seed;
  config.validate();
  const ExperimentReport report = run_experiment(config);
  std::filesystem::create_directories(out_dir);
  {
    std::ofstream f(std::filesystem::path(out_dir) / "report.csv");
    if (!f) throw InputError("cannot write to '" + out_dir + "'");
    write_report_csv(f, report);
  }
  if (config.mode == ExperimentMode::Selection) {
    std::ofstream f(std::filesystem::path(out_dir) / "selection.csv");
    write_selection_frequencies_csv(f, report);
  }
  std::ostringstream summary;
  write_report_summary(summary, report);
  std::ofstream(std::filesystem::path(out_dir) / "summary.txt") << summary.str();
  out << summary.str();
  return kExitOk;
}

int run_predict(const std::string& fit_path, const InputArgs& in_args, const std::string& out_path,
                std::ostream& out) {
  const StoredFit s = load_fit(fit_path);
  InputArgs args = in_args;
  args.directed = s.fit.directed;
  const Loaded l = load_inputs(args, s.fit.family);
  if (l.graph.size() != s.n)
    throw DimensionError("fit has " + std::to_string(s.n) + " nodes, graph has " +
                         std::to_string(l.graph.size()));
  const PredictionReport r = predict(s.fit, l.graph, l.cov_ptr());
  std::ostringstream os;
  os << "record,i,j,observed,predicted\n";
  for (Eigen::Index i = 0; i < r.degree.size(); ++i)
    os << "degree," << i << ",," << csv_num(r.degree(i)) << ',' << csv_num(r.degree_hat(i)) << '\n';
  for (std::size_t k = 0; k < r.pairs.size(); ++k)
    os << "edge," << r.pairs[k].first << ',' << r.pairs[k].second << ','
       << csv_num(r.edge(static_cast<Eigen::Index>(k))) << ','
       << csv_num(r.edge_hat(static_cast<Eigen::Index>(k))) << '\n';
  os << "r2_degree,,,," << csv_num(r.r2_degree) << '\n';
  os << "r2_edge,,,," << csv_num(r.r2_edge) << '\n';
  write_text(out_path, os.str(), out);
  if (!out_path.empty() && out_path != "-")
    out << "R2 degrees = " << r.r2_degree << ", R2 edges = " << r.r2_edge << '\n';
  return kExitOk;
}

int run_report(const std::string& fit_path, const std::string& compare_path, std::ostream& out) {
  const StoredFit a = load_fit(fit_path);
  out << render_report(a, "A");
  if (!compare_path.empty()) {
    const StoredFit b = load_fit(compare_path);
    out << '\n' << render_report(b, "B");
    if (!a.icl || !b.icl) throw InputError("both fits need stored ICL values to compare");
    const double delta = b.icl->icl - a.icl->icl;
    out << "\nDelta ICL (B - A) = " << std::setprecision(17) << delta << "  (gain obtained when switching from A to B)\n";
  }
  return kExitOk;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Stochastic block models for valued graphs", "blockfit"};
  app.require_subcommand(1);
  bool deterministic = false;
  app.add_flag("--deterministic", deterministic, "ordered reductions (always on)");

  InputArgs fit_in, sel_in, pred_in;
  EngineArgs fit_eng, sel_eng;
  int q = 0, qmin = 1, qmax = 10, threads = 0;
  std::string fit_out, sel_out, sel_format = "csv", sel_fit_out, sim_config, sim_out = "report",
                                pred_fit, pred_out, rep_fit, rep_compare;
  std::optional<int> sim_replicates;
  std::optional<std::uint64_t> sim_seed;

  auto* fit_cmd = app.add_subcommand("fit", "fit a block model with Q groups");
  add_input_options(fit_cmd, fit_in, true);
  add_engine_options(fit_cmd, fit_eng);
  fit_cmd->add_option("--q", q, "number of groups")->required();
  fit_cmd->add_option("--out", fit_out, "fit JSON (default: stdout)");

  auto* sel_cmd = app.add_subcommand("select", "choose Q by ICL");
  add_input_options(sel_cmd, sel_in, true);
  add_engine_options(sel_cmd, sel_eng);
  sel_cmd->add_option("--qmin", qmin)->capture_default_str();
  sel_cmd->add_option("--qmax", qmax)->capture_default_str();
  sel_cmd->add_option("--format", sel_format, "csv|json")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  sel_cmd->add_option("--out", sel_out, "table output (default: stdout)");
  sel_cmd->add_option("--fit-out", sel_fit_out, "write the chosen fit as JSON");

  auto* sim_cmd = app.add_subcommand("simulate", "run the simulation grid");
  sim_cmd->add_option("--config", sim_config, "grid configuration (JSON or key = value)")->required();
  sim_cmd->add_option("--out", sim_out, "output directory")->capture_default_str();
  sim_cmd->add_option("--threads", threads, "worker threads (default: BLOCKFIT_THREADS)");
  sim_cmd->add_option("--replicates", sim_replicates, "override the replicate count");
  sim_cmd->add_option("--seed", sim_seed, "override the seed");
  sim_cmd->add_flag("--deterministic", deterministic, "ordered reductions (always on)");

  auto* pred_cmd = app.add_subcommand("predict", "predicted degrees and edges of a fitted model");
  pred_cmd->add_option("--fit", pred_fit, "fit JSON")->required();
  add_input_options(pred_cmd, pred_in, false);
  pred_cmd->add_option("--out", pred_out, "prediction CSV (default: stdout)");

  auto* rep_cmd = app.add_subcommand("report", "plain-text summary of a fit");
  rep_cmd->add_option("--fit", rep_fit, "fit JSON")->required();
  rep_cmd->add_option("--compare", rep_compare, "second fit JSON for the ICL difference");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    if (msg.empty()) msg = "invalid command line";
    err << "blockfit: " << msg << "\n";
    return kExitUsage;
  }
  try {
    if (*fit_cmd) return run_fit(fit_in, fit_eng, q, fit_out, out);
    if (*sel_cmd) return run_select(sel_in, sel_eng, qmin, qmax, sel_format, sel_out, sel_fit_out, out);
    if (*sim_cmd) return run_simulate(sim_config, sim_out, threads, sim_replicates, sim_seed, out);
    if (*pred_cmd) return run_predict(pred_fit, pred_in, pred_out, out);
    if (*rep_cmd) return run_report(rep_fit, rep_compare, out);
  } catch (const DimensionError& e) {
    err << "blockfit: inconsistent dimensions: " << e.what() << '\n';
    return kExitDimension;
  } catch (const InputError& e) {
    err << "blockfit: input error: " << e.what() << '\n';
    return kExitInput;
  } catch (const InvalidParameter& e) {
    err << "blockfit: invalid argument: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericalError& e) {
    err << "blockfit: numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "blockfit: input error: " << e.what() << '\n';
    return kExitInput;
  }
  err << "blockfit: no subcommand\n";
  return kExitUsage;
}

}  // namespace blockfit
