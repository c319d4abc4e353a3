#pragma once

#include "xsep/autodiff.hpp"
#include "xsep/common.hpp"

#include <span>
#include <string>
#include <vector>

// The X-scheme loss family: spectral MSE, time-domain weighted-SDR, the
// multi-domain combination of the two, and the combination loss that applies
// the multi-domain loss to every non-empty proper subset of sources.
//
// Estimates enter as graph nodes (differentiable); targets and the mixture
// are plain data. Time signals are 1xN rows in-graph.

namespace xsep {

// A non-empty proper subset of source indices (the full set is excluded).
struct CombinationSpec {
  std::vector<int> indices;  // sorted ascending, no duplicates
  int total_sources = 0;

  void validate() const;
  std::string label() const;  // "0+2+3"
  bool operator==(const CombinationSpec& o) const {
    return indices == o.indices && total_sources == o.total_sources;
  }
};

// All subsets of size 1..J-1 ordered by size then lexicographically;
// 2^J - 2 entries.
std::vector<CombinationSpec> enumerate_combinations(int j);

struct CombinationTerm {
  CombinationSpec spec;
  Scalar mse = 0, wsdr = 0, mdl = 0;
  // Forward values of the two cosine terms, kept for the geometry probes.
  Scalar target_cos = 0, residual_cos = 0;
};

struct LossReport {
  Scalar total = 0, mse_part = 0, wsdr_part = 0, alpha = 0;
  bool combination_active = false;
  std::vector<CombinationTerm> per_combination;

  std::string to_csv() const;  // header: subset,mse,wsdr,mdl
};

// rho = ||y||^2 / (||y||^2 + ||x - y||^2 + 1e-12), in [0, 1].
Scalar energy_ratio(const RowVec& y, const RowVec& x);

// Sum over sources and bins of squared magnitude differences.
ad::Var mse_loss(ad::Graph& g, std::span<const ad::Var> est_mags, std::span<const Mat> tgt_mags);

struct WsdrBreakdown {
  ad::Var loss;  // in [-1, 1]
  Scalar target_cos = 0, residual_cos = 0;
};

// -rho cos(y, y_hat) - (1 - rho) cos(x - y, x - y_hat); norms clamped at 1e-12.
WsdrBreakdown wsdr_term(ad::Graph& g, const RowVec& y, ad::Var y_hat, const RowVec& x);

struct MdlResult {
  ad::Var loss;
  LossReport report;
};

// mse + alpha * (mean-over-sources wsdr + 1). The per-source mean keeps the
// stated [-1, 1] bound; `wsdr_sum_over_sources` switches to the literal
// summed form for comparison runs.
MdlResult mdl(ad::Graph& g, std::span<const ad::Var> est_mags, std::span<const Mat> tgt_mags,
              std::span<const ad::Var> est_times, std::span<const RowVec> tgt_times,
              const RowVec& mixture, Scalar alpha, bool wsdr_sum_over_sources = false);

// Mean of per-combination multi-domain losses over all non-empty proper
// subsets. A combination is one pseudo-source: member magnitudes are summed
// elementwise, member time signals sample-wise, for estimates and targets
// alike.
MdlResult combination_loss(ad::Graph& g, std::span<const ad::Var> est_mags,
                           std::span<const Mat> tgt_mags, std::span<const ad::Var> est_times,
                           std::span<const RowVec> tgt_times, const RowVec& mixture,
                           Scalar alpha);

struct CrossTermProbe {
  Scalar mse_combined = 0;      // sum-squared error of the combined pair
  Scalar mse_separate_sum = 0;  // per-source sum-squared errors, added
  Scalar cross_term = 0;        // combined - separate = 2 * sum(e1 .* e2)
};

// Demonstrates the error-correlation term that only the combined MSE sees.
// Inputs define y_hat_j = y_j + e_j; self-checks the identity to rounding.
CrossTermProbe correlation_term_probe(const RowVec& y1, const RowVec& y2, const RowVec& e1,
                                      const RowVec& e2);

}  // namespace xsep
