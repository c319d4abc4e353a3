#pragma once

#include "xsep/common.hpp"
#include "xsep/loss.hpp"
#include "xsep/metrics.hpp"
#include "xsep/network.hpp"
#include "xsep/spectral.hpp"
#include "xsep/synth.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

// The optimization loop binding network, losses and data: Adam updates,
// seeded random cropping, epoch scheduling and the ablation-mode switches
// (baseline MSE / multi-domain / bridged / combination loss).

namespace xsep {

struct TrainConfig {
  // Ablation axes. Combination loss always runs through multi-domain terms;
  // with use_mdl off its terms degrade to spectral MSE (alpha treated as 0).
  bool use_mdl = true;
  bool use_cl = true;
  std::vector<int> bridge_gaps{1};

  Scalar alpha = 10.0;
  Scalar learning_rate = 0.001;
  Scalar weight_decay = 1e-5;
  int batch_size = 4;
  Scalar crop_seconds = 1.0;
  int epochs = 60;
  std::uint64_t seed = 17;
  Scalar grad_clip_norm = 5.0;
  bool wsdr_sum_over_sources = false;
  int hidden = 64;
  SpectralConfig spectral = SpectralConfig::desk_default();
  std::string data_dir;

  void validate() const;
  Scalar effective_alpha() const { return use_mdl ? alpha : 0.0; }

  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
  static TrainConfig load(const std::string& path);
};

struct AdamState {
  static constexpr Scalar kBeta1 = 0.9;
  static constexpr Scalar kBeta2 = 0.999;
  static constexpr Scalar kEps = 1e-8;

  std::vector<Mat> m, v;
  std::int64_t t = 0;

  static AdamState like(const std::vector<Mat>& params);
};

// g' = grad + weight_decay * param; first/second moments with bias correction;
// param -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_step(std::vector<Mat>& params, const std::vector<Mat>& grads, AdamState& state,
               Scalar lr, Scalar weight_decay);

struct Crop {
  std::vector<Vec> sources;
  Vec mixture;
  int offset = 0;
};

// Identical offset for every signal, so Eq-1 additivity survives the crop.
// `align` restricts offsets to multiples (the trainer uses the STFT hop so
// crops slice precomputed spectrograms).
Crop sample_crop(const SourceSet& track, Scalar crop_seconds, Rng& rng, int align = 1);

// A track with its full-length spectrogram data precomputed once.
struct PreparedTrack {
  SourceSet set;
  Mat mix_mag;
  PhaseGrids mix_phase;
  std::vector<Mat> source_mags;
};

struct LoadedDataset {
  DatasetManifest manifest;
  std::string dir;
  SpectralConfig spectral;
  std::vector<PreparedTrack> train, valid;
};

LoadedDataset load_training_data(const std::string& data_dir, const SpectralConfig& spectral);

struct TrainResult {
  SeparationNetwork best_network;
  int best_epoch = 0;
  Scalar best_valid_loss = 0.0;
  std::vector<std::array<Scalar, 2>> epoch_losses;  // {train, valid}
  Scalar wall_seconds = 0.0;
  bool diverged = false;
  std::string divergence_note;
  std::string final_loss_report_csv;  // per-combination breakdown at the end

  // Deterministic: epoch,train_loss,valid_loss only. Wall-clock time lives in
  // the run report so identical runs produce byte-identical logs.
  std::string loss_log_csv() const;
};

TrainResult train(const TrainConfig& cfg, const LoadedDataset& data);
TrainResult train(const TrainConfig& cfg);  // loads cfg.data_dir itself

struct SeedSweepResult {
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> source_names;
  // per seed: per-source SDR aggregates plus the source average
  std::vector<std::vector<Scalar>> per_seed_source_db;
  std::vector<Scalar> per_seed_avg_db;
  std::vector<Scalar> source_mean, source_std;  // over seeds
  Scalar avg_mean = 0.0, avg_std = 0.0;

  std::string to_csv() const;  // seed,source,sdr_db,std_db with ALL summary rows
};

// Trains one model per seed and evaluates each on the test split.
SeedSweepResult seed_sweep(const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                           const LoadedDataset& data);

}  // namespace xsep
