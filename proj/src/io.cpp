#include "blockfit/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "blockfit/error.hpp"

namespace blockfit {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

double parse_double(const std::string& s, int line) {
  double v = 0.0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end)
    throw InputError("line " + std::to_string(line) + ": '" + s + "' is not a number");
  return v;
}

int parse_index(const std::string& s, int line) {
  int v = 0;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || ptr != end || v < 0)
    throw InputError("line " + std::to_string(line) + ": '" + s + "' is not a node index");
  return v;
}

/// Reads the header and the data rows; blank lines are skipped.
std::vector<std::pair<int, std::vector<std::string>>> read_rows(std::istream& in,
                                                                std::vector<std::string>& header) {
  std::string line;
  int lineno = 0;
  std::vector<std::pair<int, std::vector<std::string>>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (header.empty()) {
      header = split(trim(line));
      continue;
    }
    auto fields = split(trim(line));
    if (fields.size() != header.size())
      throw InputError("line " + std::to_string(lineno) + ": expected " +
                       std::to_string(header.size()) + " fields, got " +
                       std::to_string(fields.size()));
    rows.emplace_back(lineno, std::move(fields));
  }
  if (header.empty()) throw InputError("empty CSV input");
  return rows;
}

Json matrix_to_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw InputError(what + " must be an array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows == 0 ? 0 : static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    if (!j[r].is_array() || static_cast<Eigen::Index>(j[r].size()) != cols)
      throw InputError(what + " has ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

Json vector_to_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

Eigen::VectorXd vector_from_json(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

template <class T>
std::string fmt(T v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

ValuedGraph read_edge_csv(std::istream& in, const EdgeCsvOptions& options) {
  std::vector<std::string> header;
  const auto rows = read_rows(in, header);
  const bool paired = options.kind == ValueKind::PairedReal;
  const std::size_t width = paired ? 4 : 3;
  if (header.size() != width || header[0] != "i" || header[1] != "j")
    throw InputError(paired ? "edge CSV header must be i,j,v1,v2" : "edge CSV header must be i,j,value");
  std::vector<EdgeEntry> entries;
  entries.reserve(rows.size());
  int max_index = -1;
  for (const auto& [lineno, f] : rows) {
    EdgeEntry e;
    e.i = parse_index(f[0], lineno);
    e.j = parse_index(f[1], lineno);
    e.first = parse_double(f[2], lineno);
    if (paired) e.second = parse_double(f[3], lineno);
    max_index = std::max({max_index, e.i, e.j});
    entries.push_back(e);
  }
  const int n = options.n > 0 ? options.n : max_index + 1;
  if (options.n > 0 && max_index >= options.n)
    throw InputError("node index " + std::to_string(max_index) + " exceeds n = " +
                     std::to_string(options.n));
  BuildOptions build;
  build.num_labels = options.num_labels;
  build.fill = options.fill;
  return build_graph(n, options.directed, entries, options.kind, build);
}

EdgeCovariates read_covariate_csv(std::istream& in, const ValuedGraph& graph) {
  std::vector<std::string> header;
  const auto rows = read_rows(in, header);
  if (header.size() < 3 || header[0] != "i" || header[1] != "j")
    throw InputError("covariate CSV header must be i,j,y1,...,yp");
  std::vector<CovariateEntry> entries;
  entries.reserve(rows.size());
  for (const auto& [lineno, f] : rows) {
    CovariateEntry e;
    e.i = parse_index(f[0], lineno);
    e.j = parse_index(f[1], lineno);
    for (std::size_t k = 2; k < f.size(); ++k) e.y.push_back(parse_double(f[k], lineno));
    entries.push_back(std::move(e));
  }
  return attach_covariates(graph, entries);
}

std::vector<int> read_labels(std::istream& in) {
  std::vector<int> labels;
  std::string token;
  int count = 0;
  while (in >> token) {
    for (const auto& part : split(token)) {
      if (part.empty()) continue;
      labels.push_back(parse_index(part, ++count));
    }
  }
  return labels;
}

std::string convention_name(EdgeCountConvention c) {
  return c == EdgeCountConvention::Ordered ? "ordered" : "unordered";
}

EdgeCountConvention parse_convention(const std::string& name) {
  if (name == "ordered") return EdgeCountConvention::Ordered;
  if (name == "unordered") return EdgeCountConvention::Unordered;
  throw InputError("unknown edge-count convention '" + name + "'");
}

Json fit_to_json(const StoredFit& stored) {
  const FitResult& f = stored.fit;
  Json j;
  j["family"] = f.family.name();
  if (f.family.kind == FamilyKind::Multinomial) j["num_labels"] = f.family.num_labels;
  if (f.family.uses_covariates()) j["covariate_dim"] = f.family.covariate_dim;
  j["directed"] = f.directed;
  j["n"] = stored.n;
  j["Q"] = f.num_groups();
  j["alpha"] = vector_to_json(f.params.alpha);
  Json theta = Json::object();
  const auto names = f.family.component_names();
  for (std::size_t c = 0; c < names.size(); ++c)
    theta[names[c]] = matrix_to_json(f.params.theta.components[c]);
  j["theta"] = std::move(theta);
  Json shared = Json::object();
  const auto snames = f.family.shared_names();
  for (std::size_t c = 0; c < snames.size(); ++c) shared[snames[c]] = f.params.theta.shared(c);
  j["shared"] = std::move(shared);
  if (stored.mean_covariate.size() > 0) j["mean_covariate"] = vector_to_json(stored.mean_covariate);
  Json degenerate = Json::array();
  const auto& deg = f.params.theta.degenerate;
  for (Eigen::Index q = 0; q < deg.rows(); ++q)
    for (Eigen::Index l = 0; l < deg.cols(); ++l)
      if (deg(q, l)) degenerate.push_back({q, l});
  j["degenerate_blocks"] = std::move(degenerate);
  j["tau"] = matrix_to_json(f.tau);
  j["J_trajectory"] = f.bound_trajectory;
  j["entropy"] = f.entropy;
  j["map_assignment"] = f.map_assignment;
  j["converged"] = f.converged;
  j["iterations"] = f.iterations;
  j["restart"] = f.restart;
  j["diagnostics"] = f.diagnostics;
  if (stored.icl) {
    j["icl"] = stored.icl->icl;
    j["complete_loglik"] = stored.icl->complete_loglik;
    j["penalty"] = stored.icl->penalty;
    j["param_count"] = stored.icl->param_count;
    j["edge_count_convention"] = convention_name(stored.icl->convention);
  }
  return j;
}

StoredFit fit_from_json(const Json& j) {
  try {
    StoredFit s;
    FitResult& f = s.fit;
    f.family = parse_family(j.at("family").get<std::string>(), j.value("num_labels", 0),
                            j.value("covariate_dim", 0));
    f.directed = j.at("directed").get<bool>();
    s.n = j.at("n").get<int>();
    const int Q = j.at("Q").get<int>();
    f.params.alpha = vector_from_json(j.at("alpha"));
    if (f.params.alpha.size() != Q) throw DimensionError("alpha length differs from Q");
    f.params.theta = make_params(f.family, Q);
    const auto names = f.family.component_names();
    for (std::size_t c = 0; c < names.size(); ++c) {
      f.params.theta.components[c] = matrix_from_json(j.at("theta").at(names[c]), names[c]);
      if (f.params.theta.components[c].rows() != Q || f.params.theta.components[c].cols() != Q)
        throw DimensionError("theta component " + names[c] + " is not Q x Q");
    }
    const auto snames = f.family.shared_names();
    for (std::size_t c = 0; c < snames.size(); ++c)
      f.params.theta.shared(c) = j.at("shared").at(snames[c]).get<double>();
    if (j.contains("degenerate_blocks"))
      for (const auto& b : j["degenerate_blocks"])
        f.params.theta.degenerate(b.at(0).get<int>(), b.at(1).get<int>()) = true;
    validate_params(f.family, f.params.theta);
    if (j.contains("mean_covariate")) s.mean_covariate = vector_from_json(j["mean_covariate"]);
    f.tau = matrix_from_json(j.at("tau"), "tau");
    if (f.tau.rows() != s.n || f.tau.cols() != Q) throw DimensionError("tau is not n x Q");
    f.bound_trajectory = j.value("J_trajectory", std::vector<double>{});
    f.entropy = j.value("entropy", classification_entropy(f.tau));
    f.map_assignment = j.contains("map_assignment") ? j["map_assignment"].get<std::vector<int>>()
                                                    : map_assignment(f.tau);
    f.converged = j.value("converged", false);
    f.iterations = j.value("iterations", 0);
    f.restart = j.value("restart", 0);
    f.diagnostics = j.value("diagnostics", std::vector<std::string>{});
    if (j.contains("icl")) {
      IclSummary icl;
      icl.icl = j["icl"].get<double>();
      icl.complete_loglik = j.value("complete_loglik", 0.0);
      icl.penalty = j.value("penalty", 0.0);
      icl.param_count = j.value("param_count", 0LL);
      icl.convention = parse_convention(j.value("edge_count_convention", std::string("ordered")));
      s.icl = icl;
    }
    return s;
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed fit JSON: ") + e.what());
  }
}

Json selection_to_json(const SelectionResult& result) {
  Json j;
  Json rows = Json::array();
  for (const auto& r : result.records) {
    Json row;
    row["Q"] = r.Q;
    row["ok"] = r.ok;
    if (r.ok) {
      row["J"] = r.fit->bound();
      row["icl"] = r.icl;
      row["complete_loglik"] = r.complete_loglik;
      row["penalty"] = r.penalty;
      row["entropy"] = r.fit->entropy;
      row["converged"] = r.fit->converged;
    } else {
      row["error"] = r.error;
    }
    rows.push_back(std::move(row));
  }
  j["records"] = std::move(rows);
  j["chosen_q"] = result.chosen_q;
  return j;
}

void write_selection_csv(std::ostream& out, const SelectionResult& result) {
  out << "Q,J,ICL,complete_loglik,penalty,entropy,converged,chosen\n";
  for (const auto& r : result.records) {
    out << r.Q << ',';
    if (r.ok) {
      out << fmt(r.fit->bound()) << ',' << fmt(r.icl) << ',' << fmt(r.complete_loglik) << ','
          << fmt(r.penalty) << ',' << fmt(r.fit->entropy) << ',' << (r.fit->converged ? 1 : 0);
    } else {
      out << "nan,-inf,nan,nan,nan,0";
    }
    out << ',' << (r.Q == result.chosen_q ? 1 : 0) << '\n';
  }
}

void write_report_csv(std::ostream& out, const ExperimentReport& report) {
  out << "n,a,lambda,gamma,parameter,value\n";
  for (const auto& c : report.cells) {
    const std::string key = std::to_string(c.n) + ',' + fmt(c.a) + ',' + fmt(c.lambda) + ',' +
                            fmt(c.gamma) + ',';
    out << key << "completed," << c.completed << '\n';
    out << key << "failed," << c.failed << '\n';
    if (report.mode == ExperimentMode::Estimation && c.completed > 0) {
      for (Eigen::Index q = 0; q < c.rmse_alpha.size(); ++q)
        out << key << "rmse_alpha_" << q + 1 << ',' << fmt(c.rmse_alpha(q)) << '\n';
      for (Eigen::Index q = 0; q < c.rmse_lambda.rows(); ++q)
        for (Eigen::Index l = 0; l < c.rmse_lambda.cols(); ++l)
          out << key << "rmse_lambda_" << q + 1 << l + 1 << ',' << fmt(c.rmse_lambda(q, l)) << '\n';
      out << key << "entropy_per_node," << fmt(c.mean_entropy) << '\n';
    }
  }
}

void write_selection_frequencies_csv(std::ostream& out, const ExperimentReport& report) {
  out << "n,a,lambda,gamma,Q,frequency\n";
  for (const auto& c : report.cells)
    for (const auto& [q, f] : c.selection)
      out << c.n << ',' << fmt(c.a) << ',' << fmt(c.lambda) << ',' << fmt(c.gamma) << ',' << q
          << ',' << fmt(f) << '\n';
}

void write_report_summary(std::ostream& out, const ExperimentReport& report) {
  const bool estimation = report.mode == ExperimentMode::Estimation;
  out << (estimation ? "Estimation" : "Selection") << " experiment, " << report.cells.size()
      << " cells\n\n";
  for (const auto& c : report.cells) {
    out << "n=" << c.n << " a=" << c.a << " lambda=" << c.lambda << " gamma=" << c.gamma << "  ("
        << c.completed << " replicates";
    if (c.failed > 0) out << ", " << c.failed << " failed";
    out << ")\n";
    if (c.completed == 0) continue;
    out << std::fixed << std::setprecision(4);
    if (estimation) {
      out << "  RMSE alpha: ";
      for (Eigen::Index q = 0; q < c.rmse_alpha.size(); ++q) out << ' ' << c.rmse_alpha(q);
      out << "\n  RMSE lambda_qq: ";
      for (Eigen::Index q = 0; q < c.rmse_lambda.rows(); ++q) out << ' ' << c.rmse_lambda(q, q);
      out << "\n  mean H/n: " << c.mean_entropy << '\n';
    } else {
      out << "  selected Q:";
      for (const auto& [q, f] : c.selection) out << "  " << q << ": " << 100.0 * f << '%';
      out << '\n';
    }
    out.unsetf(std::ios::floatfield);
    out << std::setprecision(6);
  }
}

namespace {

template <class T>
std::vector<T> as_list(const Json& v) {
  if (v.is_array()) return v.get<std::vector<T>>();
  return {v.get<T>()};
}

ExperimentMode parse_mode(const std::string& s) {
  if (s == "estimation") return ExperimentMode::Estimation;
  if (s == "selection") return ExperimentMode::Selection;
  throw InputError("mode must be estimation or selection");
}

void apply_json(GridConfig& c, const Json& j) {
  for (const auto& [key, v] : j.items()) {
    if (key == "n") c.n = as_list<int>(v);
    else if (key == "a") c.a = as_list<double>(v);
    else if (key == "lambda") c.lambda = as_list<double>(v);
    else if (key == "gamma") c.gamma = as_list<double>(v);
    else if (key == "q_star") c.q_star = v.get<int>();
    else if (key == "replicates") c.replicates = v.get<int>();
    else if (key == "seed") c.seed = v.get<std::uint64_t>();
    else if (key == "directed") c.directed = v.get<bool>();
    else if (key == "mode") c.mode = parse_mode(v.get<std::string>());
    else if (key == "q_min") c.q_min = v.get<int>();
    else if (key == "q_max") c.q_max = v.get<int>();
    else if (key == "restarts") c.restarts = v.get<int>();
    else if (key == "threads") c.threads = v.get<int>();
    else throw InputError("unknown configuration key '" + key + "'");
  }
}

Json value_from_text(const std::string& text) {
  const auto parts = split(text);
  auto scalar = [](const std::string& s) -> Json {
    if (s == "true") return true;
    if (s == "false") return false;
    try {
      return Json::parse(s);
    } catch (const Json::exception&) {
      return s;
    }
  };
  if (parts.size() == 1) return scalar(parts[0]);
  Json arr = Json::array();
  for (const auto& p : parts) arr.push_back(scalar(p));
  return arr;
}

}  // namespace

GridConfig parse_grid_config(std::istream& in) {
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  GridConfig config;
  try {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') {
      apply_json(config, Json::parse(text));
    } else {
      Json j = Json::object();
      std::istringstream lines(text);
      std::string line;
      int lineno = 0;
      while (std::getline(lines, line)) {
        ++lineno;
        const std::string t = trim(line.substr(0, line.find('#')));
        if (t.empty()) continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
          throw InputError("config line " + std::to_string(lineno) + ": expected key = value");
        j[trim(t.substr(0, eq))] = value_from_text(trim(t.substr(eq + 1)));
      }
      apply_json(config, j);
    }
  } catch (const Json::exception& e) {
    throw InputError(std::string("malformed configuration: ") + e.what());
  }
  config.validate();
  return config;
}

}  // namespace blockfit
