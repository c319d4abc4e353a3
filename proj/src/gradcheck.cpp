#include "xsep/gradcheck.hpp"

#include "xsep/loss.hpp"
#include "xsep/network.hpp"
#include "xsep/spectral.hpp"

#include <cmath>

namespace xsep {

namespace {

Mat random_mat(Rng& rng, int rows, int cols, Scalar lo = -1.0, Scalar hi = 1.0) {
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(lo, hi);
  return m;
}

// Keeps entries away from the relu kink so central differences stay two-sided.
Mat away_from_zero(Mat m, Scalar margin) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      if (std::abs(m(r, c)) < margin) m(r, c) += m(r, c) >= 0 ? margin : -margin;
  return m;
}

ad::Var weighted_sum(ad::Graph& g, ad::Var v, const Mat& weights) {
  return ad::dot(v, g.constant(weights));
}

}  // namespace

std::vector<GradCheckCase> run_gradient_checks(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCheckCase> cases;
  auto check = [&](const std::string& name, const ad::Program& prog,
                   const std::vector<Mat>& inputs, Scalar step, Scalar tol) {
    cases.push_back({name, ad::finite_difference_check(prog, inputs, step, tol), tol});
  };

  const Scalar kStep = 1e-5;
  const Scalar kTol = 1e-4;

  // -- primitives --
  const Mat a4 = random_mat(rng, 4, 4), b4 = random_mat(rng, 4, 4), c4 = random_mat(rng, 4, 4);
  const Mat w34 = random_mat(rng, 3, 4), w43 = random_mat(rng, 4, 3);

  check("primitive add",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::add(in[0], in[1]), a4);
        },
        {random_mat(rng, 4, 4), random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive subtract",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::sub(in[0], in[1]), a4);
        },
        {random_mat(rng, 4, 4), random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive multiply",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::mul(in[0], in[1]), b4);
        },
        {random_mat(rng, 4, 4), random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive scalar-times-tensor",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::mul(in[0], in[1]), b4);
        },
        {random_mat(rng, 1, 1), random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive scalar-multiply",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::scalar_mul(in[0], 1.7), a4);
        },
        {random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive matmul chain",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::matmul(ad::matmul(in[0], in[1]), in[2]), c4);
        },
        {random_mat(rng, 4, 4), random_mat(rng, 4, 4), random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive tanh",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::tanh(in[0]), a4);
        },
        {random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive sigmoid",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::sigmoid(in[0]), a4);
        },
        {random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive relu",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::relu(in[0]), a4);
        },
        {away_from_zero(random_mat(rng, 4, 4), 1e-3)}, kStep, kTol);
  check("primitive sum-reduce",
        [&](ad::Graph&, const std::vector<ad::Var>& in) { return ad::sum_reduce(in[0]); },
        {random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive square",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::square(in[0]), a4);
        },
        {random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive sqrt",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::sqrt(ad::add_scalar(in[0], 2.0)), a4);
        },
        {random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive l2-norm",
        [&](ad::Graph&, const std::vector<ad::Var>& in) { return ad::l2_norm(in[0]); },
        {random_mat(rng, 4, 4)}, kStep, kTol);
  check("primitive dot",
        [&](ad::Graph&, const std::vector<ad::Var>& in) { return ad::dot(in[0], in[1]); },
        {random_mat(rng, 1, 16), random_mat(rng, 1, 16)}, kStep, kTol);
  check("primitive concat+slice",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          const ad::Var parts[] = {in[0], in[1]};
          ad::Var cat = ad::concat(parts, 0);
          return weighted_sum(g, ad::slice(cat, 1, 1, 4, 3), w43);
        },
        {random_mat(rng, 3, 4), random_mat(rng, 3, 4)}, kStep, kTol);
  check("primitive branch-mean",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          const ad::Var branches[] = {in[0], in[1], in[2]};
          return weighted_sum(g, ad::branch_mean(branches), w34);
        },
        {random_mat(rng, 3, 4), random_mat(rng, 3, 4), random_mat(rng, 3, 4)}, kStep, kTol);
  check("primitive div-by-scalar",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          ad::Var denom = ad::add_scalar(ad::l2_norm(in[1]), 0.5);
          return weighted_sum(g, ad::div_by_scalar(in[0], denom), a4);
        },
        {random_mat(rng, 4, 4), random_mat(rng, 4, 4)}, kStep, kTol);
  const Mat ola_probe = random_mat(rng, 1, 12);
  check("primitive overlap-add",
        [&](ad::Graph& g, const std::vector<ad::Var>& in) {
          return weighted_sum(g, ad::overlap_add(in[0], 2, 12), ola_probe);
        },
        {random_mat(rng, 4, 6)}, kStep, kTol);

  // -- losses --
  const SpectralConfig toy{16, 4, 100.0};
  const int bins = toy.bins();

  {
    std::vector<Mat> tgt = {random_mat(rng, 3, 5, 0.0, 1.0), random_mat(rng, 3, 5, 0.0, 1.0)};
    check("loss mse",
          [tgt](ad::Graph& g, const std::vector<ad::Var>& in) {
            return mse_loss(g, in, tgt);
          },
          {random_mat(rng, 3, 5, 0.0, 1.0), random_mat(rng, 3, 5, 0.0, 1.0)}, kStep, kTol);
  }
  {
    const RowVec y = random_mat(rng, 1, 64);
    const RowVec x = RowVec(y) + RowVec(random_mat(rng, 1, 64));
    check("loss wsdr",
          [y, x](ad::Graph& g, const std::vector<ad::Var>& in) {
            return wsdr_term(g, y, in[0], x).loss;
          },
          {random_mat(rng, 1, 64)}, kStep, kTol);
  }

  // Random 3-source setup shared by the mdl and combination-loss checks.
  {
    const int j = 3, n = 64;
    std::vector<RowVec> tgt_times;
    RowVec mixture = RowVec::Zero(n);
    std::vector<Mat> tgt_mags;
    for (int s = 0; s < j; ++s) {
      RowVec y = random_mat(rng, 1, n);
      mixture += y;
      tgt_times.push_back(std::move(y));
      tgt_mags.push_back(random_mat(rng, 2, 5, 0.0, 1.0));
    }
    std::vector<Mat> inputs;
    for (int s = 0; s < j; ++s) inputs.push_back(random_mat(rng, 2, 5, 0.0, 1.0));
    for (int s = 0; s < j; ++s) inputs.push_back(random_mat(rng, 1, n));

    auto split = [j](const std::vector<ad::Var>& in) {
      std::vector<ad::Var> mags(in.begin(), in.begin() + j);
      std::vector<ad::Var> times(in.begin() + j, in.end());
      return std::make_pair(mags, times);
    };
    check("loss mdl (3 sources)",
          [=](ad::Graph& g, const std::vector<ad::Var>& in) {
            auto [mags, times] = split(in);
            return mdl(g, mags, tgt_mags, times, tgt_times, mixture, 10.0).loss;
          },
          inputs, kStep, kTol);
    check("loss combination (3 sources)",
          [=](ad::Graph& g, const std::vector<ad::Var>& in) {
            auto [mags, times] = split(in);
            return combination_loss(g, mags, tgt_mags, times, tgt_times, mixture, 10.0).loss;
          },
          inputs, kStep, kTol);
  }

  // -- spectral layers --
  check("spectral stft",
        [toy](ad::Graph& g, const std::vector<ad::Var>& in) {
          SpectroVars s = stft_layer(g, in[0], toy);
          return ad::add(ad::sum_reduce(ad::square(s.re)), ad::sum_reduce(ad::square(s.im)));
        },
        {random_mat(rng, 1, 32)}, kStep, kTol);
  {
    const Mat probe = random_mat(rng, 1, 24);
    check("spectral istft",
          [toy, probe](ad::Graph& g, const std::vector<ad::Var>& in) {
            ad::Var out = istft_layer(g, in[0], in[1], toy, 24);
            return ad::dot(out, g.constant(probe));
          },
          {random_mat(rng, 3, bins), random_mat(rng, 3, bins)}, kStep, kTol);
  }
  check("spectral magnitude",
        [](ad::Graph& g, const std::vector<ad::Var>& in) {
          return ad::sum_reduce(magnitude_layer(g, in[0], in[1]));
        },
        {away_from_zero(random_mat(rng, 3, 4), 0.05), away_from_zero(random_mat(rng, 3, 4), 0.05)},
        kStep, kTol);

  // -- full pipeline: network -> masks -> ISTFT -> combination loss --
  {
    BridgedNetworkConfig nc;
    nc.j = 2;
    nc.bins = bins;
    nc.hidden = 4;
    nc.bridge_gaps = {1, 2};
    SeparationNetwork net = SeparationNetwork::build(nc, toy, splitmix64(seed));

    const int crop = 20;  // two frames at window 16 / hop 4
    Vec y0 = random_mat(rng, crop, 1) * 0.4;
    Vec y1 = random_mat(rng, crop, 1) * 0.4;
    Vec mixture = y0 + y1;
    const Spectrogram ms = stft(mixture, toy);
    auto [mag, phase] = magnitude_and_phase(ms);
    std::vector<Mat> tgt_mags = {magnitude(stft(y0, toy)), magnitude(stft(y1, toy))};
    std::vector<RowVec> tgt_times = {y0.transpose(), y1.transpose()};
    const RowVec mix_row = mixture.transpose();

    check("pipeline network-through-istft (combination loss)",
          [=, &net](ad::Graph& g, const std::vector<ad::Var>& in) {
            auto branches = net.forward_with_params(g, in, mag, phase, crop);
            std::vector<ad::Var> est_mags, est_times;
            for (const auto& b : branches) {
              est_mags.push_back(b.est_mag);
              est_times.push_back(b.est_time);
            }
            return combination_loss(g, est_mags, tgt_mags, est_times, tgt_times, mix_row, 10.0)
                .loss;
          },
          net.parameters(), 1e-4, 1e-3);
  }

  return cases;
}

bool all_gradient_checks_passed(const std::vector<GradCheckCase>& cases) {
  for (const GradCheckCase& c : cases)
    if (!c.report.pass) return false;
  return !cases.empty();
}

}  // namespace xsep
