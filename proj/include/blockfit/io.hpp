#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "blockfit/selection.hpp"
#include "blockfit/simulation.hpp"
#include "blockfit/variational.hpp"

namespace blockfit {

using Json = nlohmann::ordered_json;

struct EdgeCsvOptions {
  /// 0 infers n from the largest index.
  int n = 0;
  bool directed = false;
  ValueKind kind = ValueKind::Count;
  int num_labels = 0;
  std::optional<double> fill;
};

/// Edge list with header `i,j,value` (or `i,j,v1,v2` for paired values).
ValuedGraph read_edge_csv(std::istream& in, const EdgeCsvOptions& options);

/// Covariates with header `i,j,y1,...,yp`.
EdgeCovariates read_covariate_csv(std::istream& in, const ValuedGraph& graph);

/// Node labels (0-based), one per node, separated by commas or whitespace.
std::vector<int> read_labels(std::istream& in);

struct IclSummary {
  double icl = 0.0;
  double complete_loglik = 0.0;
  double penalty = 0.0;
  long long param_count = 0;
  EdgeCountConvention convention = EdgeCountConvention::Ordered;
};

/// A FitResult plus what the reporting commands need alongside it.
struct StoredFit {
  FitResult fit;
  int n = 0;
  std::optional<IclSummary> icl;
  /// Mean covariate vector of the training data (covariate families).
  Eigen::VectorXd mean_covariate;
};

Json fit_to_json(const StoredFit& stored);
StoredFit fit_from_json(const Json& j);

Json selection_to_json(const SelectionResult& result);
void write_selection_csv(std::ostream& out, const SelectionResult& result);

/// One row per grid cell per reported quantity.
void write_report_csv(std::ostream& out, const ExperimentReport& report);
/// Selection frequencies, one row per grid cell and selected Q.
void write_selection_frequencies_csv(std::ostream& out, const ExperimentReport& report);
void write_report_summary(std::ostream& out, const ExperimentReport& report);

/// Grid configuration from JSON or from `key = value` lines (lists comma separated).
GridConfig parse_grid_config(std::istream& in);

std::string convention_name(EdgeCountConvention c);
EdgeCountConvention parse_convention(const std::string& name);

}  // namespace blockfit
