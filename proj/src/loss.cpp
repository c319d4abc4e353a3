#include "xsep/loss.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace xsep {

void CombinationSpec::validate() const {
  if (total_sources < 2)
    throw std::invalid_argument("CombinationSpec: needs at least 2 sources, got " +
                                std::to_string(total_sources));
  if (indices.empty()) throw std::invalid_argument("CombinationSpec: empty subset");
  if (static_cast<int>(indices.size()) > total_sources - 1)
    throw std::invalid_argument("CombinationSpec: the full source set is excluded");
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= total_sources)
      throw std::invalid_argument("CombinationSpec: index " + std::to_string(indices[i]) +
                                  " out of range [0, " + std::to_string(total_sources) + ")");
    if (i > 0 && indices[i] <= indices[i - 1])
      throw std::invalid_argument("CombinationSpec: indices must be sorted strictly ascending");
  }
}

std::string CombinationSpec::label() const {
  std::string out;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (i) out += '+';
    out += std::to_string(indices[i]);
  }
  return out;
}

std::vector<CombinationSpec> enumerate_combinations(int j) {
  if (j < 2)
    throw std::invalid_argument("enumerate_combinations: need J >= 2, got " + std::to_string(j));
  std::vector<CombinationSpec> out;
  for (int size = 1; size <= j - 1; ++size) {
    std::vector<int> idx(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) idx[static_cast<std::size_t>(i)] = i;
    while (true) {
      out.push_back(CombinationSpec{idx, j});
      // next lexicographic combination
      int i = size - 1;
      while (i >= 0 && idx[static_cast<std::size_t>(i)] == j - size + i) --i;
      if (i < 0) break;
      ++idx[static_cast<std::size_t>(i)];
      for (int k = i + 1; k < size; ++k)
        idx[static_cast<std::size_t>(k)] = idx[static_cast<std::size_t>(k - 1)] + 1;
    }
  }
  return out;
}

std::string LossReport::to_csv() const {
  std::string out = "subset,mse,wsdr,mdl\n";
  for (const CombinationTerm& t : per_combination) {
    out += t.spec.label();
    out += ',' + format_scalar(t.mse) + ',' + format_scalar(t.wsdr) + ',' +
           format_scalar(t.mdl) + '\n';
  }
  return out;
}

Scalar energy_ratio(const RowVec& y, const RowVec& x) {
  if (y.size() != x.size())
    throw std::invalid_argument("energy_ratio: length mismatch (" + std::to_string(y.size()) +
                                " vs " + std::to_string(x.size()) + ")");
  const Scalar ey = y.squaredNorm();
  const Scalar er = (x - y).squaredNorm();
  return ey / (ey + er + 1e-12);
}

ad::Var mse_loss(ad::Graph& g, std::span<const ad::Var> est_mags,
                 std::span<const Mat> tgt_mags) {
  if (est_mags.size() != tgt_mags.size() || est_mags.empty())
    throw std::invalid_argument("mse_loss: estimate/target counts differ (" +
                                std::to_string(est_mags.size()) + " vs " +
                                std::to_string(tgt_mags.size()) + ")");
  ad::Var total;
  for (std::size_t j = 0; j < est_mags.size(); ++j) {
    if (est_mags[j].rows() != tgt_mags[j].rows() || est_mags[j].cols() != tgt_mags[j].cols())
      throw std::invalid_argument("mse_loss: grid shape mismatch at source " + std::to_string(j) +
                                  " (" + shape_str(est_mags[j].value()) + " vs " +
                                  shape_str(tgt_mags[j]) + ")");
    ad::Var term = ad::sum_reduce(ad::square(ad::sub(est_mags[j], g.constant(tgt_mags[j]))));
    total = total.valid() ? ad::add(total, term) : term;
  }
  return total;
}

namespace {

// cos(a, b) with `a` fixed data and `b` a graph node; both norms clamped.
ad::Var cosine_to_fixed(ad::Graph& g, const RowVec& a, ad::Var b) {
  const Scalar norm_a = a.norm();
  ad::Var numer = ad::dot(g.constant(a), b);
  ad::Var denom = ad::scalar_mul(ad::l2_norm(b), norm_a);
  return ad::div_by_scalar(numer, denom, 1e-12);
}

}  // namespace

WsdrBreakdown wsdr_term(ad::Graph& g, const RowVec& y, ad::Var y_hat, const RowVec& x) {
  if (y.size() != x.size() || y_hat.cols() != y.size() || y_hat.rows() != 1)
    throw std::invalid_argument("wsdr_term: signal length mismatch (y " +
                                std::to_string(y.size()) + ", y_hat " +
                                shape_str(y_hat.value()) + ", x " + std::to_string(x.size()) +
                                ")");
  const Scalar rho = energy_ratio(y, x);
  ad::Var target_cos = cosine_to_fixed(g, y, y_hat);
  ad::Var residual = ad::sub(g.constant(x), y_hat);
  ad::Var residual_cos = cosine_to_fixed(g, RowVec(x - y), residual);
  ad::Var loss =
      ad::add(ad::scalar_mul(target_cos, -rho), ad::scalar_mul(residual_cos, -(1.0 - rho)));
  return {loss, target_cos.value()(0, 0), residual_cos.value()(0, 0)};
}

namespace {

struct PseudoSource {
  ad::Var est_mag;
  Mat tgt_mag;
  ad::Var est_time;
  RowVec tgt_time;
};

// One multi-domain term for a single (pseudo-)source.
CombinationTerm mdl_term(ad::Graph& g, const PseudoSource& ps, const RowVec& mixture,
                         Scalar alpha, CombinationSpec spec, ad::Var* loss_out) {
  ad::Var mse = ad::sum_reduce(ad::square(ad::sub(ps.est_mag, g.constant(ps.tgt_mag))));
  WsdrBreakdown w = wsdr_term(g, ps.tgt_time, ps.est_time, mixture);
  ad::Var term = ad::add(mse, ad::scalar_mul(ad::add_scalar(w.loss, 1.0), alpha));
  CombinationTerm out;
  out.spec = std::move(spec);
  out.mse = mse.value()(0, 0);
  out.wsdr = w.loss.value()(0, 0);
  out.mdl = term.value()(0, 0);
  out.target_cos = w.target_cos;
  out.residual_cos = w.residual_cos;
  *loss_out = term;
  return out;
}

void check_counts(const char* who, std::size_t mags, std::size_t tgts, std::size_t times,
                  std::size_t tgt_times) {
  if (mags == 0 || mags != tgts || mags != times || mags != tgt_times)
    throw std::invalid_argument(std::string(who) + ": inconsistent list sizes (est_mags " +
                                std::to_string(mags) + ", tgt_mags " + std::to_string(tgts) +
                                ", est_times " + std::to_string(times) + ", tgt_times " +
                                std::to_string(tgt_times) + ")");
}

}  // namespace

MdlResult mdl(ad::Graph& g, std::span<const ad::Var> est_mags, std::span<const Mat> tgt_mags,
              std::span<const ad::Var> est_times, std::span<const RowVec> tgt_times,
              const RowVec& mixture, Scalar alpha, bool wsdr_sum_over_sources) {
  check_counts("mdl", est_mags.size(), tgt_mags.size(), est_times.size(), tgt_times.size());
  if (alpha < 0.0) throw std::invalid_argument("mdl: alpha must be >= 0");
  const int j_total = static_cast<int>(est_mags.size());

  ad::Var mse, wsdr_acc;
  MdlResult result;
  result.report.alpha = alpha;
  for (int j = 0; j < j_total; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    if (est_mags[sj].rows() != tgt_mags[sj].rows() || est_mags[sj].cols() != tgt_mags[sj].cols())
      throw std::invalid_argument("mdl: grid shape mismatch at source " + std::to_string(j) +
                                  " (" + shape_str(est_mags[sj].value()) + " vs " +
                                  shape_str(tgt_mags[sj]) + ")");
    ad::Var mse_j = ad::sum_reduce(ad::square(ad::sub(est_mags[sj], g.constant(tgt_mags[sj]))));
    mse = mse.valid() ? ad::add(mse, mse_j) : mse_j;
    WsdrBreakdown w = wsdr_term(g, tgt_times[sj], est_times[sj], mixture);
    wsdr_acc = wsdr_acc.valid() ? ad::add(wsdr_acc, w.loss) : w.loss;
    CombinationTerm t;
    t.spec = CombinationSpec{{j}, std::max(j_total, 2)};
    t.wsdr = w.loss.value()(0, 0);
    t.target_cos = w.target_cos;
    t.residual_cos = w.residual_cos;
    t.mse = mse_j.value()(0, 0);
    t.mdl = t.mse + alpha * (t.wsdr + 1.0);
    result.report.per_combination.push_back(std::move(t));
  }
  if (!wsdr_sum_over_sources)
    wsdr_acc = ad::scalar_mul(wsdr_acc, 1.0 / static_cast<Scalar>(j_total));
  result.loss = ad::add(mse, ad::scalar_mul(ad::add_scalar(wsdr_acc, 1.0), alpha));
  result.report.total = result.loss.value()(0, 0);
  result.report.mse_part = mse.value()(0, 0);
  result.report.wsdr_part = wsdr_acc.value()(0, 0);
  result.report.combination_active = false;
  return result;
}

MdlResult combination_loss(ad::Graph& g, std::span<const ad::Var> est_mags,
                           std::span<const Mat> tgt_mags, std::span<const ad::Var> est_times,
                           std::span<const RowVec> tgt_times, const RowVec& mixture,
                           Scalar alpha) {
  check_counts("combination_loss", est_mags.size(), tgt_mags.size(), est_times.size(),
               tgt_times.size());
  const int j_total = static_cast<int>(est_mags.size());
  if (j_total < 2)
    throw std::invalid_argument("combination_loss: need J >= 2 sources, got " +
                                std::to_string(j_total));
  if (alpha < 0.0) throw std::invalid_argument("combination_loss: alpha must be >= 0");

  const std::vector<CombinationSpec> combos = enumerate_combinations(j_total);
  MdlResult result;
  result.report.alpha = alpha;
  result.report.combination_active = true;

  ad::Var acc;
  Scalar mse_acc = 0, wsdr_acc = 0;
  for (const CombinationSpec& spec : combos) {
    PseudoSource ps;
    for (int idx : spec.indices) {
      const auto si = static_cast<std::size_t>(idx);
      ps.est_mag = ps.est_mag.valid() ? ad::add(ps.est_mag, est_mags[si]) : est_mags[si];
      ps.est_time = ps.est_time.valid() ? ad::add(ps.est_time, est_times[si]) : est_times[si];
      if (ps.tgt_mag.size() == 0) {
        ps.tgt_mag = tgt_mags[si];
        ps.tgt_time = tgt_times[si];
      } else {
        ps.tgt_mag += tgt_mags[si];
        ps.tgt_time += tgt_times[si];
      }
    }
    ad::Var term;
    CombinationTerm t = mdl_term(g, ps, mixture, alpha, spec, &term);
    mse_acc += t.mse;
    wsdr_acc += t.wsdr;
    result.report.per_combination.push_back(std::move(t));
    acc = acc.valid() ? ad::add(acc, term) : term;
  }
  const Scalar inv_n = 1.0 / static_cast<Scalar>(combos.size());
  result.loss = ad::scalar_mul(acc, inv_n);
  result.report.total = result.loss.value()(0, 0);
  result.report.mse_part = mse_acc * inv_n;
  result.report.wsdr_part = wsdr_acc * inv_n;
  return result;
}

CrossTermProbe correlation_term_probe(const RowVec& y1, const RowVec& y2, const RowVec& e1,
                                      const RowVec& e2) {
  if (y1.size() != y2.size() || y1.size() != e1.size() || y1.size() != e2.size())
    throw std::invalid_argument("correlation_term_probe: length mismatch");
  const RowVec yh1 = y1 + e1;
  const RowVec yh2 = y2 + e2;
  const RowVec u = y1 + y2;
  const RowVec uh = yh1 + yh2;
  CrossTermProbe p;
  p.mse_combined = (u - uh).squaredNorm();
  p.mse_separate_sum = (y1 - yh1).squaredNorm() + (y2 - yh2).squaredNorm();
  p.cross_term = p.mse_combined - p.mse_separate_sum;
  const Scalar expected = 2.0 * e1.cwiseProduct(e2).sum();
  const Scalar scale = p.mse_combined + p.mse_separate_sum + std::abs(expected) + 1.0;
  if (std::abs(p.cross_term - expected) > 1e-12 * scale)
    throw NumericError("correlation_term_probe: cross-term identity violated (" +
                       format_scalar(p.cross_term) + " vs " + format_scalar(expected) + ")");
  return p;
}

}  // namespace xsep
