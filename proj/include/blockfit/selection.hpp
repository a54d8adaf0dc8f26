#pragma once

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blockfit/variational.hpp"

namespace blockfit {

/// Edge count inside the ICL penalty log: n(n-1) ordered pairs, or n(n-1)/2.
enum class EdgeCountConvention { Ordered, Unordered };

/// 1/2 {P_Q log[edges] - (Q - 1) log n}.
double icl_penalty(long long param_count, int Q, int n,
                   EdgeCountConvention convention = EdgeCountConvention::Ordered);

/// log P(X, Z; gamma) for hard labels Z (each unordered pair once if undirected).
double complete_loglik(const ValuedGraph& graph, const EdgeCovariates* cov, const FamilySpec& spec,
                       std::span<const int> labels, const MixtureParams& params);

struct IclBreakdown {
  double icl = 0.0;
  double complete_loglik = 0.0;
  double penalty = 0.0;
  long long param_count = 0;
  /// gamma re-estimated under the MAP assignment.
  MixtureParams params;
};

/// ICL of a fitted model: gamma re-optimised by one hard M-step at the MAP labels.
IclBreakdown icl(const ValuedGraph& graph, const EdgeCovariates* cov, const FitResult& fit,
                 EdgeCountConvention convention = EdgeCountConvention::Ordered);

struct SelectionRecord {
  int Q = 0;
  bool ok = false;
  std::string error;
  std::optional<FitResult> fit;
  double icl = -std::numeric_limits<double>::infinity();
  double complete_loglik = -std::numeric_limits<double>::infinity();
  double penalty = 0.0;
};

struct SelectionResult {
  std::vector<SelectionRecord> records;
  /// 0 when every fit failed.
  int chosen_q = 0;

  const SelectionRecord* chosen() const;
};

/// Fits every Q in [q_min, q_max] and keeps the ICL maximiser (ties to smaller Q).
/// Restart streams are seeded per Q from options.seed.
SelectionResult select_q(const ValuedGraph& graph, const EdgeCovariates* cov,
                         const FamilySpec& spec, int q_min, int q_max, FitOptions options = {},
                         EdgeCountConvention convention = EdgeCountConvention::Ordered);

}  // namespace blockfit
