#include "xsep/spectral.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace xsep {

void SpectralConfig::validate() const {
  if (window_length < 2 || window_length % 2 != 0)
    throw std::invalid_argument("SpectralConfig: window_length must be even and >= 2, got " +
                                std::to_string(window_length));
  if (hop <= 0)
    throw std::invalid_argument("SpectralConfig: hop must be positive, got " +
                                std::to_string(hop));
  if (sample_rate <= 0.0) throw std::invalid_argument("SpectralConfig: sample_rate must be positive");
}

RowVec hann_window(int n) {
  if (n < 2 || n % 2 != 0)
    throw std::invalid_argument("hann_window: length must be even and >= 2, got " +
                                std::to_string(n));
  RowVec w(n);
  for (int k = 0; k < n; ++k) w(k) = 0.5 - 0.5 * std::cos(2.0 * M_PI * k / n);
  return w;
}

namespace {

std::shared_ptr<const DftMatrices> build_dft(int n) {
  const int bins = n / 2 + 1;
  auto m = std::make_shared<DftMatrices>();
  m->analysis_cos.resize(n, bins);
  m->analysis_sin.resize(n, bins);
  m->synth_cos.resize(bins, n);
  m->synth_sin.resize(bins, n);
  // Unitary 1/sqrt(n) scaling on both sides: exact inversion, and summed
  // one-sided spectrogram energy stays comparable across window lengths.
  const Scalar scale = 1.0 / std::sqrt(static_cast<Scalar>(n));
  for (int f = 0; f < bins; ++f) {
    const Scalar weight = (f == 0 || f == n / 2) ? 1.0 : 2.0;
    for (int k = 0; k < n; ++k) {
      const Scalar angle =
          2.0 * M_PI * static_cast<Scalar>(f) * static_cast<Scalar>(k) / static_cast<Scalar>(n);
      const Scalar c = std::cos(angle), s = std::sin(angle);
      m->analysis_cos(k, f) = c * scale;
      m->analysis_sin(k, f) = -s * scale;
      m->synth_cos(f, k) = weight * c * scale;
      m->synth_sin(f, k) = -weight * s * scale;
    }
  }
  return m;
}

}  // namespace

std::shared_ptr<const DftMatrices> dft_matrices(int window_length) {
  if (window_length < 2 || window_length % 2 != 0)
    throw std::invalid_argument("dft_matrices: window length must be even and >= 2");
  // Small windows are hot (one lookup per stft/istft call); the 4096-point
  // paper setting is ~270 MB of matrices, so it is built per call instead.
  if (window_length <= 1024) {
    static std::mutex mtx;
    static std::map<int, std::shared_ptr<const DftMatrices>> cache;
    std::lock_guard<std::mutex> lock(mtx);
    auto it = cache.find(window_length);
    if (it != cache.end()) return it->second;
    auto m = build_dft(window_length);
    cache.emplace(window_length, m);
    return m;
  }
  return build_dft(window_length);
}

int stft_frame_count(Eigen::Index signal_len, const SpectralConfig& cfg) {
  if (signal_len < cfg.window_length)
    throw std::invalid_argument("stft: signal length " + std::to_string(signal_len) +
                                " is shorter than one window (" +
                                std::to_string(cfg.window_length) + ")");
  return static_cast<int>((signal_len - cfg.window_length) / cfg.hop) + 1;
}

RowVec window_overlap_envelope(const SpectralConfig& cfg, int frames, int out_length) {
  const RowVec w = hann_window(cfg.window_length);
  RowVec env = RowVec::Zero(out_length);
  for (int t = 0; t < frames; ++t) {
    const int start = t * cfg.hop;
    const int len = std::min(cfg.window_length, out_length - start);
    if (len > 0) env.segment(start, len) += w.head(len).array().square().matrix();
  }
  return env;
}

Spectrogram stft(const Vec& x, const SpectralConfig& cfg) {
  cfg.validate();
  const int frames = stft_frame_count(x.size(), cfg);
  const int win = cfg.window_length;
  const RowVec w = hann_window(win);
  Mat framed(frames, win);
  for (int t = 0; t < frames; ++t)
    framed.row(t) = x.segment(t * cfg.hop, win).transpose().cwiseProduct(w);
  auto dft = dft_matrices(win);
  Spectrogram s;
  s.re.noalias() = framed * dft->analysis_cos;
  s.im.noalias() = framed * dft->analysis_sin;
  s.config = cfg;
  return s;
}

// Near the edges the envelope decays toward zero; dividing a *modified*
// spectrogram (masked magnitudes, substituted phase) by a vanishing envelope
// amplifies edge content by orders of magnitude. Clamping at a quarter of the
// envelope plateau leaves every properly covered sample untouched and merely
// attenuates the first/last fraction of a window instead of blowing it up.
Scalar envelope_floor(const RowVec& env) {
  return std::max(1e-12, 0.25 * env.maxCoeff());
}

Vec istft(const Spectrogram& s, int out_length) {
  if (out_length <= 0)
    throw std::invalid_argument("istft: out_length must be positive, got " +
                                std::to_string(out_length));
  if (s.frames() < 1) throw std::invalid_argument("istft: spectrogram has no frames");
  const SpectralConfig& cfg = s.config;
  cfg.validate();
  const int win = cfg.window_length;
  auto dft = dft_matrices(win);
  Mat frames_time = s.re * dft->synth_cos + s.im * dft->synth_sin;
  const RowVec w = hann_window(win);
  Vec out = Vec::Zero(out_length);
  for (Eigen::Index t = 0; t < frames_time.rows(); ++t) {
    const int start = static_cast<int>(t) * cfg.hop;
    const int len = std::min<int>(win, out_length - start);
    if (len > 0)
      out.segment(start, len) +=
          (frames_time.row(t).head(len).cwiseProduct(w.head(len))).transpose();
  }
  const RowVec env = window_overlap_envelope(cfg, static_cast<int>(s.frames()), out_length);
  const Scalar floor = envelope_floor(env);
  for (int k = 0; k < out_length; ++k) out(k) /= std::max(env(k), floor);
  return out;
}

Mat magnitude(const Spectrogram& s) {
  return (s.re.array().square() + s.im.array().square() + 1e-24).sqrt().matrix();
}

std::pair<Mat, PhaseGrids> magnitude_and_phase(const Spectrogram& s) {
  Mat mag = magnitude(s);
  PhaseGrids phase;
  phase.unit_re.resize(mag.rows(), mag.cols());
  phase.unit_im.resize(mag.rows(), mag.cols());
  for (Eigen::Index t = 0; t < mag.rows(); ++t) {
    for (Eigen::Index f = 0; f < mag.cols(); ++f) {
      const Scalar m = mag(t, f);
      if (m <= 1.0000001e-12) {  // degenerate bin: unit phase fixed to (1, 0)
        phase.unit_re(t, f) = 1.0;
        phase.unit_im(t, f) = 0.0;
      } else {
        phase.unit_re(t, f) = s.re(t, f) / m;
        phase.unit_im(t, f) = s.im(t, f) / m;
      }
    }
  }
  return {std::move(mag), std::move(phase)};
}

SpectroVars stft_layer(ad::Graph& g, ad::Var x, const SpectralConfig& cfg) {
  cfg.validate();
  if (x.rows() != 1)
    throw std::invalid_argument("stft_layer: signal must be a 1xN row, got " +
                                shape_str(x.value()));
  const int frames = stft_frame_count(x.cols(), cfg);
  const int win = cfg.window_length;
  std::vector<ad::Var> rows;
  rows.reserve(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) rows.push_back(ad::slice(x, 0, t * cfg.hop, 1, win));
  ad::Var framed = ad::concat(rows, 0);
  const RowVec w = hann_window(win);
  ad::Var wgrid = g.constant(w.replicate(frames, 1));
  ad::Var windowed = ad::mul(framed, wgrid);
  auto dft = dft_matrices(win);
  ad::Var re = ad::matmul(windowed, g.constant(dft->analysis_cos));
  ad::Var im = ad::matmul(windowed, g.constant(dft->analysis_sin));
  return {re, im};
}

ad::Var istft_layer(ad::Graph& g, ad::Var re, ad::Var im, const SpectralConfig& cfg,
                    int out_length) {
  if (out_length <= 0)
    throw std::invalid_argument("istft_layer: out_length must be positive, got " +
                                std::to_string(out_length));
  cfg.validate();
  if (re.rows() < 1) throw std::invalid_argument("istft_layer: spectrogram has no frames");
  const int frames = static_cast<int>(re.rows());
  const int win = cfg.window_length;
  auto dft = dft_matrices(win);
  ad::Var frames_time = ad::add(ad::matmul(re, g.constant(dft->synth_cos)),
                                ad::matmul(im, g.constant(dft->synth_sin)));
  const RowVec w = hann_window(win);
  ad::Var windowed = ad::mul(frames_time, g.constant(w.replicate(frames, 1)));
  ad::Var summed = ad::overlap_add(windowed, cfg.hop, out_length);
  RowVec recip = window_overlap_envelope(cfg, frames, out_length);
  const Scalar floor = envelope_floor(recip);
  for (int k = 0; k < out_length; ++k) recip(k) = 1.0 / std::max(recip(k), floor);
  return ad::mul(summed, g.constant(recip));
}

ad::Var magnitude_layer(ad::Graph& g, ad::Var re, ad::Var im) {
  ad::Var energy = ad::add(ad::square(re), ad::square(im));
  return ad::sqrt(ad::add_scalar(energy, 1e-24));
}

}  // namespace xsep
