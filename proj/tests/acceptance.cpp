// Acceptance suite: one pass/fail line per criterion, exit 1 on any failure.
//
//  1  combination count for J=4
//  2  wSDR bound over 10^4 random triples
//  3  perfect-prediction zero for J in {2,3,4}
//  4  combined-vs-separate MSE cross-term identity
//  5  orthogonal-error detection by the pair combination
//  6  finite-difference gradient correctness (losses and full pipeline)
//  7  STFT round-trip fidelity (desk scale and 4096/75%)
//  8  bridging adds zero parameters across all gap subsets
//  9  bridging switches cross-branch gradient coupling on and off
// 10  directional desk-scale experiment: X-scheme vs baseline over 3 seeds
// 11  byte-identical retraining under a fixed seed
// 12  5-seed stability sweep of the X-scheme configuration

#include "xsep/gradcheck.hpp"
#include "xsep/loss.hpp"
#include "xsep/metrics.hpp"
#include "xsep/network.hpp"
#include "xsep/spectral.hpp"
#include "xsep/synth.hpp"
#include "xsep/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

using namespace xsep;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void criterion(int n, const std::string& name, bool pass, const std::string& details,
               double secs) {
  std::printf("%s criterion %2d: %s (%s) [%.1fs]\n", pass ? "PASS" : "FAIL", n, name.c_str(),
              details.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double secs() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
};

Mat random_grid(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng.uniform(0.0, 1.0);
  return m;
}

RowVec random_row(Rng& rng, int n, Scalar amp = 1.0) {
  RowVec v(n);
  for (int k = 0; k < n; ++k) v(k) = rng.uniform(-amp, amp);
  return v;
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof(buf), f, args);
  va_end(args);
  return buf;
}

// ---------- criteria 1..9 ----------

void c1_combination_count() {
  Timer t;
  const auto combos = enumerate_combinations(4);
  bool pass = combos.size() == 14;
  for (const auto& c : combos) pass = pass && c.indices.size() <= 3;
  criterion(1, "combination count for J=4 excludes the full set", pass,
            fmt("N=%zu", combos.size()), t.secs());
}

void c2_wsdr_bound() {
  Timer t;
  Rng rng(271828);
  Scalar lo = 1e9, hi = -1e9;
  for (int trial = 0; trial < 10000; ++trial) {
    ad::Graph g;
    const RowVec y = random_row(rng, 64);
    const RowVec x = random_row(rng, 64);
    const RowVec y_hat = random_row(rng, 64);
    const Scalar v = wsdr_term(g, y, g.constant(y_hat), x).loss.value()(0, 0);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  criterion(2, "wSDR bounded to [-1, 1] over 10^4 random triples",
            lo >= -1.0 - 1e-12 && hi <= 1.0 + 1e-12, fmt("range [%.6f, %.6f]", lo, hi),
            t.secs());
}

void c3_perfect_prediction_zero() {
  Timer t;
  Rng rng(31415);
  Scalar worst = 0.0;
  for (int j : {2, 3, 4}) {
    std::vector<Mat> tgt_mags;
    std::vector<RowVec> tgt_times;
    RowVec mixture = RowVec::Zero(96);
    for (int s = 0; s < j; ++s) {
      tgt_mags.push_back(random_grid(rng, 3, 6));
      tgt_times.push_back(random_row(rng, 96));
      mixture += tgt_times.back();
    }
    ad::Graph g;
    std::vector<ad::Var> est_mags, est_times;
    for (int s = 0; s < j; ++s) {
      est_mags.push_back(g.input(tgt_mags[static_cast<std::size_t>(s)], true));
      est_times.push_back(g.input(Mat(tgt_times[static_cast<std::size_t>(s)]), true));
    }
    worst = std::max(worst, std::abs(mdl(g, est_mags, tgt_mags, est_times, tgt_times, mixture,
                                         10.0)
                                         .loss.value()(0, 0)));
    worst = std::max(worst, std::abs(combination_loss(g, est_mags, tgt_mags, est_times,
                                                      tgt_times, mixture, 10.0)
                                         .loss.value()(0, 0)));
  }
  criterion(3, "mdl and combination loss vanish at perfect prediction (J=2,3,4)", worst <= 1e-9,
            fmt("max |loss| = %.3e", worst), t.secs());
}

void c4_cross_term_identity() {
  Timer t;
  Rng rng(9001);
  Scalar worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const RowVec y1 = random_row(rng, 64), y2 = random_row(rng, 64);
    const RowVec e1 = random_row(rng, 64), e2 = random_row(rng, 64);
    const CrossTermProbe p = correlation_term_probe(y1, y2, e1, e2);
    worst = std::max(worst, std::abs(p.cross_term - 2.0 * e1.cwiseProduct(e2).sum()));
  }
  criterion(4, "combined-MSE cross term equals 2*sum(e1.*e2)", worst <= 1e-10,
            fmt("max |deviation| = %.3e over 100 pairs", worst), t.secs());
}

void c5_orthogonality_detection() {
  Timer t;
  RowVec y0(2), yh0(2), y1(2), yh1(2), y2(2), yh2(2);
  y0 << 1, 0;
  yh0 << 0, -1;
  y1 << 0, 1;
  yh1 << -1, 0;
  y2 << 1, 1;
  yh2 << 1, 1;
  const RowVec mixture = y0 + y1 + y2;
  std::vector<Mat> tgt_mags(3, Mat::Zero(1, 1));
  std::vector<RowVec> tgt_times = {y0, y1, y2};

  ad::Graph g;
  std::vector<ad::Var> est_mags, est_times;
  for (int s = 0; s < 3; ++s) est_mags.push_back(g.input(Mat::Zero(1, 1), true));
  est_times.push_back(g.input(Mat(yh0), true));
  est_times.push_back(g.input(Mat(yh1), true));
  est_times.push_back(g.input(Mat(yh2), true));
  MdlResult r = combination_loss(g, est_mags, tgt_mags, est_times, tgt_times, mixture, 10.0);

  Scalar single0 = 1e9, single1 = 1e9, pair_cos = 0.0;
  for (const auto& term : r.report.per_combination) {
    if (term.spec.label() == "0") single0 = term.target_cos;
    if (term.spec.label() == "1") single1 = term.target_cos;
    if (term.spec.label() == "0+1") pair_cos = term.target_cos;
  }
  g.backward(r.loss);
  const Scalar grad_norm = est_times[0].grad().norm();
  const bool pass = std::abs(single0) <= 1e-12 && std::abs(single1) <= 1e-12 &&
                    std::abs(pair_cos + 1.0) <= 1e-12 && grad_norm > 0.1;
  criterion(5, "orthogonal errors invisible to singletons, caught by the pair", pass,
            fmt("singleton cos = (%.1e, %.1e), pair cos = %.12f, |dL/dy_hat1| = %.3f", single0,
                single1, pair_cos, grad_norm),
            t.secs());
}

void c6_gradient_correctness() {
  Timer t;
  const auto cases = run_gradient_checks(2024);
  bool pass = !cases.empty();
  Scalar worst_loss = 0.0, worst_pipeline = 0.0;
  for (const auto& c : cases) {
    pass = pass && c.report.pass;
    if (c.name.rfind("loss", 0) == 0 || c.name.rfind("spectral", 0) == 0)
      worst_loss = std::max(worst_loss, c.report.max_rel_err);
    if (c.name.rfind("pipeline", 0) == 0)
      worst_pipeline = std::max(worst_pipeline, c.report.max_rel_err);
  }
  criterion(6, "finite-difference checks for all losses and the full pipeline", pass,
            fmt("%zu checks; loss max err %.2e (<1e-4), pipeline %.2e (<1e-3)", cases.size(),
                worst_loss, worst_pipeline),
            t.secs());
}

void c7_stft_fidelity() {
  Timer t;
  Rng rng(55);
  const SpectralConfig desk = SpectralConfig::desk_default();
  Scalar worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Vec x(16384);
    for (int k = 0; k < 16384; ++k) x(k) = rng.uniform(-0.5, 0.5);
    const Vec y = istft(stft(x, desk), 16384);
    const int w = desk.window_length;
    worst = std::max(worst, (y.segment(w, 16384 - 2 * w) - x.segment(w, 16384 - 2 * w)).norm() /
                                x.segment(w, 16384 - 2 * w).norm());
  }
  SpectralConfig paper;  // 4096 window, 75% overlap
  Vec x(16384);
  for (int k = 0; k < 16384; ++k) x(k) = rng.uniform(-0.5, 0.5);
  const Vec y = istft(stft(x, paper), 16384);
  const Scalar paper_err =
      (y.segment(4096, 8192) - x.segment(4096, 8192)).norm() / x.segment(4096, 8192).norm();
  criterion(7, "ISTFT(STFT(x)) round-trip under 1e-6 relative error",
            worst < 1e-6 && paper_err < 1e-6,
            fmt("100 desk-scale signals max %.2e; 4096/75%% setting %.2e", worst, paper_err),
            t.secs());
}

void c8_parameter_free_bridging() {
  Timer t;
  std::int64_t first = -1;
  bool pass = true;
  for (int mask = 0; mask < 8; ++mask) {
    BridgedNetworkConfig nc;
    nc.j = 4;
    nc.bins = 129;
    nc.hidden = 64;
    for (int gap = 1; gap <= 3; ++gap)
      if (mask & (1 << (gap - 1))) nc.bridge_gaps.push_back(gap);
    const auto net = SeparationNetwork::build(nc, SpectralConfig::desk_default(), 7);
    if (first < 0) first = net.parameter_count();
    pass = pass && net.parameter_count() == first;
  }
  criterion(8, "parameter count identical across all 8 bridge-gap subsets", pass,
            fmt("%lld parameters", static_cast<long long>(first)), t.secs());
}

void c9_gradient_coupling_switch() {
  Timer t;
  Rng rng(77);
  Vec mix(1024);
  for (int k = 0; k < 1024; ++k) mix(k) = rng.uniform(-0.5, 0.5);
  const Spectrogram s = stft(mix, SpectralConfig::desk_default());
  auto [mag, phase] = magnitude_and_phase(s);

  Scalar unbridged = -1.0, bridged = -1.0;
  for (bool with_bridge : {false, true}) {
    BridgedNetworkConfig nc;
    nc.j = 4;
    nc.bins = 129;
    nc.hidden = 64;
    if (with_bridge) nc.bridge_gaps = {1};
    const auto net = SeparationNetwork::build(nc, SpectralConfig::desk_default(), 13);
    ad::Graph g;
    std::vector<ad::Var> params;
    auto out = net.forward(g, mag, phase, 1024, true, &params);
    g.backward(ad::sum_reduce(out[0].est_mag));
    Scalar cross = 0.0;
    for (std::size_t p = 12; p < 48; ++p)  // parameters of branches 1..3
      cross = std::max(cross, params[p].grad().cwiseAbs().maxCoeff());
    (with_bridge ? bridged : unbridged) = cross;
  }
  criterion(9, "cross-branch gradients: zero unbridged, alive with gap {1}",
            unbridged == 0.0 && bridged > 1e-8,
            fmt("max cross-gradient %.1e unbridged, %.3e bridged", unbridged, bridged),
            t.secs());
}

// ---------- criteria 10..12 (training) ----------

struct TrainedRun {
  TrainResult result;
  EvalResult eval;
};

TrainedRun run_one(const LoadedDataset& data, bool x_scheme, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.data_dir = data.dir;
  cfg.seed = seed;
  if (x_scheme) {
    cfg.use_mdl = true;
    cfg.use_cl = true;
    cfg.bridge_gaps = {1};
  } else {
    cfg.use_mdl = false;
    cfg.use_cl = false;
    cfg.bridge_gaps = {};
  }
  TrainedRun run;
  run.result = train(cfg, data);
  run.eval = evaluate_model(run.result.best_network, data.manifest, data.dir);
  return run;
}

void c10_c12_training(const fs::path& work) {
  const fs::path data_dir = work / "dataset";
  DatasetConfig dc;  // 30 train / 5 valid / 10 test, J=4, 6 s @ 8 kHz
  dc.seed = 1;
  build_dataset(dc, data_dir.string());
  const LoadedDataset data =
      load_training_data(data_dir.string(), SpectralConfig::desk_default());

  // criterion 10: directional experiment over 3 seeds
  {
    Timer t;
    const std::vector<std::uint64_t> seeds = {17, 18, 19};
    std::map<std::uint64_t, TrainedRun> x_runs;
    Scalar base_sum = 0.0, x_sum = 0.0;
    bool trained_ok = true;
    for (std::uint64_t s : seeds) {
      TrainedRun base = run_one(data, false, s);
      TrainedRun x = run_one(data, true, s);
      trained_ok = trained_ok && !base.result.diverged && !x.result.diverged;
      base_sum += base.eval.average.value_or(-60.0);
      x_sum += x.eval.average.value_or(-60.0);
      std::printf("  seed %llu: baseline %.3f dB, x-scheme %.3f dB\n",
                  static_cast<unsigned long long>(s), base.eval.average.value_or(-60.0),
                  x.eval.average.value_or(-60.0));
      std::fflush(stdout);
      x_runs.emplace(s, std::move(x));
    }
    const Scalar margin = (x_sum - base_sum) / 3.0;
    criterion(10, "directional experiment: X-scheme >= baseline over 3 seeds",
              trained_ok && margin >= 0.0,
              fmt("margin %+.3f dB (baseline %.3f, x-scheme %.3f)", margin, base_sum / 3.0,
                  x_sum / 3.0),
              t.secs());

    // criterion 12: extend the X-scheme runs to a 5-seed stability sweep
    Timer t12;
    std::vector<std::uint64_t> sweep_seeds = {17, 18, 19, 20, 21};
    std::vector<EvalResult> evals;
    for (std::uint64_t s : sweep_seeds) {
      auto it = x_runs.find(s);
      if (it != x_runs.end())
        evals.push_back(it->second.eval);
      else
        evals.push_back(run_one(data, true, s).eval);
    }
    const std::size_t n_sources = evals[0].source_names.size();
    std::string table;
    for (std::size_t src = 0; src < n_sources; ++src) {
      Scalar mean = 0.0;
      for (const auto& e : evals) mean += e.per_source[src].value_or(-60.0);
      mean /= static_cast<Scalar>(evals.size());
      Scalar var = 0.0;
      for (const auto& e : evals) {
        const Scalar d = e.per_source[src].value_or(-60.0) - mean;
        var += d * d;
      }
      var /= static_cast<Scalar>(evals.size() - 1);
      table += fmt("%s %.2f+/-%.2f ", evals[0].source_names[src].c_str(), mean,
                   std::sqrt(var));
    }
    Scalar avg_mean = 0.0;
    for (const auto& e : evals) avg_mean += e.average.value_or(-60.0);
    avg_mean /= static_cast<Scalar>(evals.size());
    Scalar avg_var = 0.0;
    for (const auto& e : evals) {
      const Scalar d = e.average.value_or(-60.0) - avg_mean;
      avg_var += d * d;
    }
    const Scalar avg_std = std::sqrt(avg_var / static_cast<Scalar>(evals.size() - 1));
    criterion(12, "5-seed X-scheme sweep: std of average SDR under 1.0 dB", avg_std < 1.0,
              fmt("avg %.3f +/- %.3f dB; per source: %s", avg_mean, avg_std, table.c_str()),
              t12.secs());
  }
}

void c11_determinism(const fs::path& work) {
  Timer t;
  const fs::path data_dir = work / "dataset";  // reuses the criterion-10 dataset
  const LoadedDataset data =
      load_training_data(data_dir.string(), SpectralConfig::desk_default());
  TrainConfig cfg;
  cfg.data_dir = data_dir.string();
  cfg.seed = 99;
  cfg.epochs = 8;
  const TrainResult a = train(cfg, data);
  const TrainResult b = train(cfg, data);

  const fs::path ca = work / "det_a.xsep", cb = work / "det_b.xsep";
  a.best_network.save(ca.string());
  b.best_network.save(cb.string());
  auto bytes = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  };
  const bool logs_equal = a.loss_log_csv() == b.loss_log_csv();
  const bool ckpt_equal = bytes(ca) == bytes(cb);
  criterion(11, "identical config and seed give byte-identical logs and checkpoints",
            logs_equal && ckpt_equal,
            fmt("loss logs %s, checkpoints %s", logs_equal ? "equal" : "DIFFER",
                ckpt_equal ? "equal" : "DIFFER"),
            t.secs());
}

}  // namespace

int main() {
  const fs::path work = fs::temp_directory_path() / "xsep_acceptance";
  fs::remove_all(work);
  fs::create_directories(work);

  c1_combination_count();
  c2_wsdr_bound();
  c3_perfect_prediction_zero();
  c4_cross_term_identity();
  c5_orthogonality_detection();
  c6_gradient_correctness();
  c7_stft_fidelity();
  c8_parameter_free_bridging();
  c9_gradient_coupling_switch();
  c10_c12_training(work);
  c11_determinism(work);

  fs::remove_all(work);
  if (g_failures > 0) {
    std::printf("%d criterion(s) FAILED\n", g_failures);
    return 1;
  }
  std::printf("all 12 acceptance criteria passed\n");
  return 0;
}
