#include "xsep/trainer.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

using nlohmann::json;

namespace xsep {

void TrainConfig::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("train config: alpha must be >= 0");
  if (learning_rate <= 0.0) throw std::invalid_argument("train config: learning_rate must be > 0");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight_decay must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (crop_seconds <= 0.0) throw std::invalid_argument("train config: crop_seconds must be > 0");
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (hidden < 1) throw std::invalid_argument("train config: hidden must be >= 1");
  spectral.validate();
  BridgedNetworkConfig nc;
  nc.j = 2;
  nc.bins = spectral.bins();
  nc.hidden = hidden;
  nc.bridge_gaps = bridge_gaps;
  nc.validate();
}

std::string TrainConfig::to_json() const {
  json j;
  j["use_mdl"] = use_mdl;
  j["use_cl"] = use_cl;
  j["bridge_gaps"] = bridge_gaps;
  j["alpha"] = alpha;
  j["learning_rate"] = learning_rate;
  j["weight_decay"] = weight_decay;
  j["batch_size"] = batch_size;
  j["crop_seconds"] = crop_seconds;
  j["epochs"] = epochs;
  j["seed"] = seed;
  j["grad_clip_norm"] = grad_clip_norm;
  j["wsdr_sum_over_sources"] = wsdr_sum_over_sources;
  j["hidden"] = hidden;
  j["spectral"] = {{"window_length", spectral.window_length},
                   {"hop", spectral.hop},
                   {"sample_rate", spectral.sample_rate}};
  j["data_dir"] = data_dir;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(std::string("train config is not valid JSON: ") + e.what());
  }
  TrainConfig c;
  auto get = [&](const char* key, auto& slot) {
    if (j.contains(key)) slot = j.at(key).get<std::decay_t<decltype(slot)>>();
  };
  get("use_mdl", c.use_mdl);
  get("use_cl", c.use_cl);
  get("bridge_gaps", c.bridge_gaps);
  get("alpha", c.alpha);
  get("learning_rate", c.learning_rate);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("crop_seconds", c.crop_seconds);
  get("epochs", c.epochs);
  get("seed", c.seed);
  get("grad_clip_norm", c.grad_clip_norm);
  get("wsdr_sum_over_sources", c.wsdr_sum_over_sources);
  get("hidden", c.hidden);
  get("data_dir", c.data_dir);
  if (j.contains("spectral")) {
    const json& s = j.at("spectral");
    if (s.contains("window_length")) c.spectral.window_length = s.at("window_length").get<int>();
    if (s.contains("hop")) c.spectral.hop = s.at("hop").get<int>();
    if (s.contains("sample_rate")) c.spectral.sample_rate = s.at("sample_rate").get<Scalar>();
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open train config: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return from_json(text);
}

AdamState AdamState::like(const std::vector<Mat>& params) {
  AdamState s;
  for (const Mat& p : params) {
    s.m.push_back(Mat::Zero(p.rows(), p.cols()));
    s.v.push_back(Mat::Zero(p.rows(), p.cols()));
  }
  return s;
}

void adam_step(std::vector<Mat>& params, const std::vector<Mat>& grads, AdamState& state,
               Scalar lr, Scalar weight_decay) {
  if (params.size() != grads.size() || params.size() != state.m.size())
    throw std::invalid_argument("adam_step: parameter/gradient/state size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].rows() != grads[i].rows() || params[i].cols() != grads[i].cols())
      throw std::invalid_argument("adam_step: shape mismatch at parameter " + std::to_string(i) +
                                  " (" + shape_str(params[i]) + " vs " + shape_str(grads[i]) +
                                  ")");
    if (!grads[i].allFinite())
      throw NumericError("adam_step: non-finite gradient at parameter " + std::to_string(i));
  }
  state.t += 1;
  const Scalar bc1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<Scalar>(state.t));
  const Scalar bc2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<Scalar>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat g = grads[i] + weight_decay * params[i];
    state.m[i] = AdamState::kBeta1 * state.m[i] + (1.0 - AdamState::kBeta1) * g;
    state.v[i] = AdamState::kBeta2 * state.v[i] +
                 (1.0 - AdamState::kBeta2) * g.cwiseProduct(g);
    const Mat m_hat = state.m[i] / bc1;
    const Mat v_hat = state.v[i] / bc2;
    params[i].array() -=
        lr * m_hat.array() / (v_hat.array().sqrt() + AdamState::kEps);
  }
}

Crop sample_crop(const SourceSet& track, Scalar crop_seconds, Rng& rng, int align) {
  const auto want = static_cast<Eigen::Index>(std::lround(crop_seconds * track.sample_rate));
  const Eigen::Index have = track.mixture.size();
  if (want > have)
    throw std::invalid_argument("sample_crop: crop needs " + std::to_string(want) +
                                " samples but the track has " + std::to_string(have));
  if (align < 1) throw std::invalid_argument("sample_crop: align must be >= 1");
  const Eigen::Index max_offset = (have - want) / align;
  const Eigen::Index offset = align * rng.uniform_int(0, max_offset);
  Crop crop;
  crop.offset = static_cast<int>(offset);
  crop.mixture = track.mixture.segment(offset, want);
  for (const Vec& s : track.sources) crop.sources.push_back(s.segment(offset, want));
  return crop;
}

namespace {

PreparedTrack prepare_track(SourceSet set, const SpectralConfig& spectral) {
  PreparedTrack p;
  const Spectrogram mix_spec = stft(set.mixture, spectral);
  auto [mag, phase] = magnitude_and_phase(mix_spec);
  p.mix_mag = std::move(mag);
  p.mix_phase = std::move(phase);
  for (const Vec& s : set.sources) p.source_mags.push_back(magnitude(stft(s, spectral)));
  p.set = std::move(set);
  return p;
}

}  // namespace

LoadedDataset load_training_data(const std::string& data_dir, const SpectralConfig& spectral) {
  LoadedDataset d;
  d.manifest = DatasetManifest::load((std::filesystem::path(data_dir) / "manifest.json").string());
  d.dir = data_dir;
  d.spectral = spectral;
  for (const TrackEntry& t : d.manifest.split("train"))
    d.train.push_back(prepare_track(load_track(data_dir, t, d.manifest.config.j), spectral));
  for (const TrackEntry& t : d.manifest.split("valid"))
    d.valid.push_back(prepare_track(load_track(data_dir, t, d.manifest.config.j), spectral));
  if (d.train.empty()) throw DataError("dataset has no train tracks: " + data_dir);
  if (d.valid.empty()) throw DataError("dataset has no valid tracks: " + data_dir);
  return d;
}

std::string TrainResult::loss_log_csv() const {
  std::string out = "epoch,train_loss,valid_loss\n";
  for (std::size_t e = 0; e < epoch_losses.size(); ++e)
    out += std::to_string(e + 1) + "," + format_scalar(epoch_losses[e][0]) + "," +
           format_scalar(epoch_losses[e][1]) + "\n";
  return out;
}

namespace {

// Spectrogram rows covering a hop-aligned crop: frame t of the crop equals
// frame offset/hop + t of the full track.
struct CropGrids {
  Mat mix_mag;
  PhaseGrids phase;
  std::vector<Mat> tgt_mags;
};

CropGrids slice_grids(const PreparedTrack& track, int offset, int crop_len,
                      const SpectralConfig& spectral) {
  const int first = offset / spectral.hop;
  const int frames = stft_frame_count(crop_len, spectral);
  CropGrids g;
  g.mix_mag = track.mix_mag.middleRows(first, frames);
  g.phase.unit_re = track.mix_phase.unit_re.middleRows(first, frames);
  g.phase.unit_im = track.mix_phase.unit_im.middleRows(first, frames);
  for (const Mat& m : track.source_mags) g.tgt_mags.push_back(m.middleRows(first, frames));
  return g;
}

struct ItemLoss {
  Scalar value = 0.0;
  LossReport report;
};

// Builds the forward program and the active loss for one crop. When `grads`
// is non-null, runs backward and accumulates d(loss)/d(param) into it.
ItemLoss item_loss(const SeparationNetwork& net, const TrainConfig& cfg,
                   const PreparedTrack& track, int offset, int crop_len,
                   std::vector<Mat>* grads) {
  const CropGrids grids = slice_grids(track, offset, crop_len, cfg.spectral);
  RowVec mixture = track.set.mixture.segment(offset, crop_len).transpose();

  ad::Graph g;
  std::vector<ad::Var> param_vars;
  auto branches = net.forward(g, grids.mix_mag, grids.phase, crop_len, grads != nullptr,
                              grads != nullptr ? &param_vars : nullptr);

  const int j = net.config().j;
  std::vector<ad::Var> est_mags, est_times;
  std::vector<RowVec> tgt_times;
  for (int s = 0; s < j; ++s) {
    est_mags.push_back(branches[static_cast<std::size_t>(s)].est_mag);
    est_times.push_back(branches[static_cast<std::size_t>(s)].est_time);
    tgt_times.emplace_back(
        track.set.sources[static_cast<std::size_t>(s)].segment(offset, crop_len).transpose());
  }

  ItemLoss out;
  ad::Var loss;
  if (cfg.use_cl) {
    MdlResult r = combination_loss(g, est_mags, grids.tgt_mags, est_times, tgt_times, mixture,
                                   cfg.effective_alpha());
    loss = r.loss;
    out.report = std::move(r.report);
  } else if (cfg.use_mdl) {
    MdlResult r = mdl(g, est_mags, grids.tgt_mags, est_times, tgt_times, mixture, cfg.alpha,
                      cfg.wsdr_sum_over_sources);
    loss = r.loss;
    out.report = std::move(r.report);
  } else {
    loss = mse_loss(g, est_mags, grids.tgt_mags);
    out.report.total = loss.value()(0, 0);
    out.report.mse_part = out.report.total;
  }
  out.value = loss.value()(0, 0);

  if (grads) {
    g.backward(loss);
    for (std::size_t p = 0; p < param_vars.size(); ++p) (*grads)[p] += param_vars[p].grad();
  }
  return out;
}

RowVec running_mean(const std::vector<const Mat*>& grids, bool second_moment,
                    const RowVec* mean) {
  const Eigen::Index bins = grids[0]->cols();
  RowVec acc = RowVec::Zero(bins);
  Eigen::Index rows = 0;
  for (const Mat* g : grids) {
    if (second_moment)
      acc += (g->rowwise() - *mean).array().square().colwise().sum().matrix();
    else
      acc += g->colwise().sum();
    rows += g->rows();
  }
  return acc / static_cast<Scalar>(rows);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const LoadedDataset& data) {
  cfg.validate();
  const int j = data.manifest.config.j;
  if (cfg.use_cl && j < 2)
    throw std::invalid_argument("train: combination loss needs J >= 2 sources");
  const int crop_len =
      static_cast<int>(std::lround(cfg.crop_seconds * data.manifest.config.sample_rate));

  BridgedNetworkConfig nc;
  nc.j = j;
  nc.bins = cfg.spectral.bins();
  nc.hidden = cfg.hidden;
  nc.bridge_gaps = cfg.bridge_gaps;
  SeparationNetwork net = SeparationNetwork::build(nc, cfg.spectral, cfg.seed);

  // Frozen per-bin normalization from the training mixtures.
  std::vector<const Mat*> mags;
  for (const PreparedTrack& t : data.train) mags.push_back(&t.mix_mag);
  RowVec mean = running_mean(mags, false, nullptr);
  RowVec var = running_mean(mags, true, &mean);
  net.set_input_stats(mean, var.cwiseSqrt());

  Rng rng(splitmix64(cfg.seed ^ 0x7261696e65724cULL));
  AdamState adam = AdamState::like(net.parameters());

  TrainResult result;
  result.best_valid_loss = std::numeric_limits<Scalar>::infinity();
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    rng.shuffle(order);
    Scalar train_loss_sum = 0.0;
    std::size_t items = 0;
    bool epoch_ok = true;
    for (std::size_t begin = 0; begin < order.size() && epoch_ok;
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Mat> grads;
      for (const Mat& p : net.parameters()) grads.push_back(Mat::Zero(p.rows(), p.cols()));
      Scalar batch_loss = 0.0;
      try {
        for (std::size_t k = begin; k < end; ++k) {
          const PreparedTrack& track = data.train[order[k]];
          const int offset =
              sample_crop(track.set, cfg.crop_seconds, rng, cfg.spectral.hop).offset;
          batch_loss += item_loss(net, cfg, track, offset, crop_len, &grads).value;
        }
        const Scalar inv = 1.0 / static_cast<Scalar>(end - begin);
        for (Mat& gm : grads) gm *= inv;
        if (cfg.grad_clip_norm > 0.0) {
          Scalar sq = 0.0;
          for (const Mat& gm : grads) sq += gm.squaredNorm();
          const Scalar norm = std::sqrt(sq);
          if (norm > cfg.grad_clip_norm) {
            const Scalar s = cfg.grad_clip_norm / norm;
            for (Mat& gm : grads) gm *= s;
          }
        }
        adam_step(net.parameters(), grads, adam, cfg.learning_rate, cfg.weight_decay);
      } catch (const NumericError& e) {
        result.diverged = true;
        result.divergence_note =
            "epoch " + std::to_string(epoch) + ": " + e.what() + " (last good checkpoint kept)";
        epoch_ok = false;
        break;
      }
      train_loss_sum += batch_loss;
      items += end - begin;
    }
    if (result.diverged) break;

    // Validation: deterministic hop-aligned center crops, forward only.
    Scalar valid_sum = 0.0;
    for (const PreparedTrack& track : data.valid) {
      const Eigen::Index have = track.set.mixture.size();
      const int offset = static_cast<int>(((have - crop_len) / 2) / cfg.spectral.hop) *
                         cfg.spectral.hop;
      valid_sum += item_loss(net, cfg, track, offset, crop_len, nullptr).value;
    }
    const Scalar train_loss = train_loss_sum / static_cast<Scalar>(items);
    const Scalar valid_loss = valid_sum / static_cast<Scalar>(data.valid.size());
    result.epoch_losses.push_back({train_loss, valid_loss});
    if (valid_loss < result.best_valid_loss) {
      result.best_valid_loss = valid_loss;
      result.best_epoch = epoch;
      result.best_network = net;
    }
  }

  if (result.best_epoch == 0) result.best_network = net;  // diverged before any epoch finished

  // Per-combination breakdown of the retained model on the first valid track.
  {
    const PreparedTrack& track = data.valid.front();
    const Eigen::Index have = track.set.mixture.size();
    const int offset =
        static_cast<int>(((have - crop_len) / 2) / cfg.spectral.hop) * cfg.spectral.hop;
    ItemLoss il = item_loss(result.best_network, cfg, track, offset, crop_len, nullptr);
    result.final_loss_report_csv = il.report.to_csv();
  }

  result.wall_seconds =
      std::chrono::duration<Scalar>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

TrainResult train(const TrainConfig& cfg) {
  LoadedDataset data = load_training_data(cfg.data_dir, cfg.spectral);
  return train(cfg, data);
}

std::string SeedSweepResult::to_csv() const {
  std::string out = "seed,source,sdr_db,std_db\n";
  for (std::size_t s = 0; s < seeds.size(); ++s)
    for (std::size_t src = 0; src < source_names.size(); ++src)
      out += std::to_string(seeds[s]) + "," + source_names[src] + "," +
             format_scalar(per_seed_source_db[s][src]) + ",\n";
  for (std::size_t src = 0; src < source_names.size(); ++src)
    out += "ALL," + source_names[src] + "," + format_scalar(source_mean[src]) + "," +
           format_scalar(source_std[src]) + "\n";
  return out;
}

SeedSweepResult seed_sweep(const TrainConfig& cfg, const std::vector<std::uint64_t>& seeds,
                           const LoadedDataset& data) {
  if (seeds.empty()) throw std::invalid_argument("seed_sweep: need at least one seed");
  SeedSweepResult out;
  out.seeds = seeds;
  for (std::uint64_t seed : seeds) {
    TrainConfig run = cfg;
    run.seed = seed;
    TrainResult r = train(run, data);
    EvalResult e = evaluate_model(r.best_network, data.manifest, data.dir);
    if (out.source_names.empty()) out.source_names = e.source_names;
    std::vector<Scalar> row;
    for (const auto& v : e.per_source) row.push_back(v.value_or(-60.0));
    out.per_seed_source_db.push_back(row);
    out.per_seed_avg_db.push_back(e.average.value_or(-60.0));
  }
  const auto n = static_cast<Scalar>(seeds.size());
  for (std::size_t src = 0; src < out.source_names.size(); ++src) {
    Scalar mean = 0.0;
    for (const auto& row : out.per_seed_source_db) mean += row[src];
    mean /= n;
    Scalar var = 0.0;
    for (const auto& row : out.per_seed_source_db) var += (row[src] - mean) * (row[src] - mean);
    var = seeds.size() > 1 ? var / (n - 1.0) : 0.0;
    out.source_mean.push_back(mean);
    out.source_std.push_back(std::sqrt(var));
  }
  out.avg_mean = std::accumulate(out.per_seed_avg_db.begin(), out.per_seed_avg_db.end(), 0.0) / n;
  Scalar var = 0.0;
  for (Scalar v : out.per_seed_avg_db) var += (v - out.avg_mean) * (v - out.avg_mean);
  out.avg_std = seeds.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return out;
}

}  // namespace xsep
