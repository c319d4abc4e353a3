#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "xsep/spectral.hpp"

#include <cmath>

using namespace xsep;

namespace {

Vec random_signal(Rng& rng, int n, Scalar amp = 0.5) {
  Vec v(n);
  for (int k = 0; k < n; ++k) v(k) = rng.uniform(-amp, amp);
  return v;
}

Scalar weighted_energy(const Spectrogram& s) {
  const int n = s.config.window_length;
  Scalar e = 0.0;
  for (Eigen::Index t = 0; t < s.frames(); ++t) {
    for (Eigen::Index f = 0; f < s.bins(); ++f) {
      const Scalar w = (f == 0 || f == n / 2) ? 1.0 : 2.0;
      e += w * (s.re(t, f) * s.re(t, f) + s.im(t, f) * s.im(t, f));
    }
  }
  return e;
}

}  // namespace

TEST_CASE("hann window closed form and validation") {
  const RowVec w = hann_window(4);
  CHECK(w(0) == doctest::Approx(0.0));
  CHECK(w(1) == doctest::Approx(0.5));
  CHECK(w(2) == doctest::Approx(1.0));
  CHECK(w(3) == doctest::Approx(0.5));

  const RowVec paper = hann_window(4096);
  CHECK(paper.size() == 4096);
  CHECK(paper(0) == doctest::Approx(0.0));
  CHECK(paper(2048) == doctest::Approx(1.0));
  CHECK(paper.minCoeff() >= 0.0);
  CHECK(paper.maxCoeff() <= 1.0);

  CHECK_THROWS_AS(hann_window(5), std::invalid_argument);
  CHECK_THROWS_AS(hann_window(0), std::invalid_argument);
}

TEST_CASE("squared shifted windows sum to 1.5 at hop n/4 (overlap-add envelope)") {
  // Direct summation oracle over 8 overlapping frames.
  const int n = 256, hop = n / 4;
  const RowVec w = hann_window(n);
  const int out_len = 7 * hop + n;
  RowVec env = RowVec::Zero(out_len);
  for (int t = 0; t < 8; ++t)
    for (int k = 0; k < n; ++k) env(t * hop + k) += w(k) * w(k);
  for (int k = n; k < out_len - n; ++k) CHECK(env(k) == doctest::Approx(1.5).epsilon(1e-12));

  SpectralConfig cfg = SpectralConfig::desk_default();
  const RowVec lib_env = window_overlap_envelope(cfg, 8, 7 * cfg.hop + cfg.window_length);
  CHECK(lib_env(cfg.window_length) == doctest::Approx(1.5));
}

TEST_CASE("stft of zero signal is zero; short signals are rejected") {
  SpectralConfig cfg = SpectralConfig::desk_default();
  const Spectrogram s = stft(Vec::Zero(1024), cfg);
  CHECK(s.bins() == cfg.window_length / 2 + 1);
  CHECK(s.re.cwiseAbs().maxCoeff() == 0.0);
  CHECK(s.im.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(stft(Vec::Zero(100), cfg), std::invalid_argument);
}

TEST_CASE("stft is linear") {
  SpectralConfig cfg = SpectralConfig::desk_default();
  Rng rng(5);
  const Vec a = random_signal(rng, 2048);
  const Vec b = random_signal(rng, 2048);
  const Spectrogram sa = stft(a, cfg), sb = stft(b, cfg), sum = stft(a + b, cfg);
  CHECK((sum.re - (sa.re + sb.re)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((sum.im - (sa.im + sb.im)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("bin-center sinusoid concentrates energy in its bin (direct DFT oracle)") {
  const int n = 4096;
  const Scalar sr = 44100.0;
  const int bin = 300;
  Vec x(n);
  for (int k = 0; k < n; ++k) x(k) = std::sin(2.0 * M_PI * bin * k / n);

  // Rectangular-window DFT of one frame via the matrices themselves.
  auto dft = dft_matrices(n);
  RowVec re = x.transpose() * dft->analysis_cos;
  RowVec im = x.transpose() * dft->analysis_sin;
  Scalar total = 0.0, at_bin = 0.0;
  for (int f = 0; f < n / 2 + 1; ++f) {
    const Scalar w = (f == 0 || f == n / 2) ? 1.0 : 2.0;
    const Scalar e = w * (re(f) * re(f) + im(f) * im(f));
    total += e;
    if (f == bin) at_bin = e;
  }
  CHECK(at_bin / total >= 0.99);

  // With the Hann analysis window the energy spreads to the two neighbours.
  SpectralConfig cfg{n, n / 4, sr};
  const Spectrogram s = stft(x, cfg);
  Scalar frame_total = 0.0, neighborhood = 0.0;
  for (int f = 0; f < s.bins(); ++f) {
    const Scalar w = (f == 0 || f == n / 2) ? 1.0 : 2.0;
    const Scalar e = w * (s.re(0, f) * s.re(0, f) + s.im(0, f) * s.im(0, f));
    frame_total += e;
    if (std::abs(f - bin) <= 1) neighborhood += e;
  }
  CHECK(neighborhood / frame_total >= 0.99);
}

TEST_CASE("istft(stft(x)) reconstructs the interior to 1e-6 relative") {
  SpectralConfig cfg = SpectralConfig::desk_default();
  Rng rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec x = random_signal(rng, 16384);
    const Vec y = istft(stft(x, cfg), 16384);
    const int w = cfg.window_length;
    const Scalar err = (y.segment(w, 16384 - 2 * w) - x.segment(w, 16384 - 2 * w)).norm() /
                       x.segment(w, 16384 - 2 * w).norm();
    CHECK(err < 1e-6);
  }
}

TEST_CASE("zero spectrogram resynthesizes to silence; bad out_length rejected") {
  SpectralConfig cfg = SpectralConfig::desk_default();
  Spectrogram s;
  s.re = Mat::Zero(4, cfg.bins());
  s.im = Mat::Zero(4, cfg.bins());
  s.config = cfg;
  const Vec y = istft(s, 1000);
  CHECK(y.size() == 1000);
  CHECK(y.cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(istft(s, 0), std::invalid_argument);
  CHECK_THROWS_AS(istft(s, -5), std::invalid_argument);
}

TEST_CASE("magnitude and phase: closed forms and degenerate bins") {
  SpectralConfig cfg = SpectralConfig::desk_default();
  Spectrogram s;
  s.re = Mat::Zero(1, cfg.bins());
  s.im = Mat::Zero(1, cfg.bins());
  s.config = cfg;
  s.re(0, 3) = 3.0;
  s.im(0, 3) = 4.0;
  auto [mag, phase] = magnitude_and_phase(s);
  CHECK(mag(0, 3) == doctest::Approx(5.0));
  // zero bin: magnitude collapses to the epsilon floor, phase is (1, 0)
  CHECK(mag(0, 0) == doctest::Approx(1e-12));
  CHECK(phase.unit_re(0, 0) == 1.0);
  CHECK(phase.unit_im(0, 0) == 0.0);
}

TEST_CASE("recombining magnitude with original phase reproduces (re, im)") {
  Rng rng(23);
  SpectralConfig cfg = SpectralConfig::desk_default();
  const Vec x = random_signal(rng, 4096);
  const Spectrogram s = stft(x, cfg);
  auto [mag, phase] = magnitude_and_phase(s);
  Scalar worst = 0.0;
  for (Eigen::Index t = 0; t < s.frames(); ++t) {
    for (Eigen::Index f = 0; f < s.bins(); ++f) {
      if (mag(t, f) < 1e-9) continue;  // degenerate bins carry the fixed phase
      worst = std::max(worst, std::abs(mag(t, f) * phase.unit_re(t, f) - s.re(t, f)));
      worst = std::max(worst, std::abs(mag(t, f) * phase.unit_im(t, f) - s.im(t, f)));
    }
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("energy consistency: weighted spectrogram energy = 1.5 * signal energy") {
  // Holds for signals supported away from the edges; the 1.5 is the Hann
  // squared-window envelope and the unitary DFT contributes no extra factor.
  Rng rng(31);
  SpectralConfig cfg = SpectralConfig::desk_default();
  const int n = 8192;
  Vec x = Vec::Zero(n);
  for (int k = cfg.window_length; k < n - cfg.window_length; ++k) x(k) = rng.uniform(-0.5, 0.5);
  const Scalar spec_energy = weighted_energy(stft(x, cfg));
  const Scalar expect = 1.5 * x.squaredNorm();
  CHECK(spec_energy == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("graph stft/istft layers agree with the plain implementations") {
  Rng rng(41);
  SpectralConfig cfg = SpectralConfig::desk_default();
  const Vec x = random_signal(rng, 2048);
  const Spectrogram plain = stft(x, cfg);

  ad::Graph g;
  ad::Var xv = g.constant(Mat(x.transpose()));
  SpectroVars sv = stft_layer(g, xv, cfg);
  CHECK((sv.re.value() - plain.re).cwiseAbs().maxCoeff() == 0.0);
  CHECK((sv.im.value() - plain.im).cwiseAbs().maxCoeff() == 0.0);

  const Vec back = istft(plain, 2048);
  ad::Var bv = istft_layer(g, sv.re, sv.im, cfg, 2048);
  CHECK((bv.value().row(0).transpose() - back).cwiseAbs().maxCoeff() < 1e-12);

  ad::Var m = magnitude_layer(g, sv.re, sv.im);
  CHECK((m.value() - magnitude(plain)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("paper-scale 4096/75% round trip") {
  Rng rng(53);
  SpectralConfig cfg;  // defaults are the paper setting
  CHECK(cfg.window_length == 4096);
  CHECK(cfg.hop == 1024);
  const Vec x = random_signal(rng, 16384);
  const Vec y = istft(stft(x, cfg), 16384);
  const int w = cfg.window_length;
  const Scalar err = (y.segment(w, 16384 - 2 * w) - x.segment(w, 16384 - 2 * w)).norm() /
                     x.segment(w, 16384 - 2 * w).norm();
  CHECK(err < 1e-6);
}
