#pragma once

#include "xsep/autodiff.hpp"
#include "xsep/common.hpp"

#include <memory>
#include <utility>

// STFT / ISTFT realized as explicit DFT matrix products so the same code path
// serves both plain evaluation and the differentiable layers used for loss
// computation. One-sided spectra, periodic Hann analysis and synthesis
// windows, overlap-add normalized by the squared-window envelope.
//
// DFT normalization: unitary 1/sqrt(n) on both analysis and synthesis, with
// one-sided weights (1 for DC/Nyquist, 2 elsewhere) baked into synthesis.
// With Hann and hop = n/4 the squared-window envelope is 1.5 on interior
// samples, so summed one-sided spectrogram energy relates to signal energy as
//   sum |X|^2 (weighted) = 1.5 * ||x||^2
// for signals supported away from the edges, independent of window length.
// This scaling is what makes the default multi-domain mixing weight
// (alpha = 10) put the spectral and time-domain terms on comparable ranges.

namespace xsep {

struct SpectralConfig {
  int window_length = 4096;
  int hop = 1024;
  Scalar sample_rate = 44100.0;

  static SpectralConfig desk_default() { return {256, 64, 8000.0}; }

  int bins() const { return window_length / 2 + 1; }
  void validate() const;
};

struct Spectrogram {
  Mat re, im;  // frames x bins
  SpectralConfig config;

  Eigen::Index frames() const { return re.rows(); }
  Eigen::Index bins() const { return re.cols(); }
};

// Unit-magnitude real/imag pair per bin; (1, 0) where the bin is degenerate.
struct PhaseGrids {
  Mat unit_re, unit_im;
};

// Periodic Hann, w[k] = 0.5 - 0.5 cos(2 pi k / n). n must be even and >= 2.
RowVec hann_window(int n);

struct DftMatrices {
  // window x bins, analysis: Re = frames * cos_part, Im = frames * sin_part
  Mat analysis_cos, analysis_sin;
  // bins x window, synthesis: time_frames = Re * cos_part + Im * sin_part
  Mat synth_cos, synth_sin;
};

// Cached for small windows; large windows are built on demand.
std::shared_ptr<const DftMatrices> dft_matrices(int window_length);

int stft_frame_count(Eigen::Index signal_len, const SpectralConfig& cfg);

// Sum of squared shifted synthesis windows, the overlap-add normalizer.
RowVec window_overlap_envelope(const SpectralConfig& cfg, int frames, int out_length);

Spectrogram stft(const Vec& x, const SpectralConfig& cfg);
Vec istft(const Spectrogram& s, int out_length);

Mat magnitude(const Spectrogram& s);
std::pair<Mat, PhaseGrids> magnitude_and_phase(const Spectrogram& s);

// ---- differentiable layers ----

struct SpectroVars {
  ad::Var re, im;
};

// x is a 1 x n row; gradients flow through slice/concat and the DFT matmuls.
SpectroVars stft_layer(ad::Graph& g, ad::Var x, const SpectralConfig& cfg);
ad::Var istft_layer(ad::Graph& g, ad::Var re, ad::Var im, const SpectralConfig& cfg,
                    int out_length);
ad::Var magnitude_layer(ad::Graph& g, ad::Var re, ad::Var im);

}  // namespace xsep
