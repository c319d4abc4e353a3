// xsep: data generation, training, ablation grids, bridging sweeps,
// evaluation, separation of arbitrary WAVs, and gradient self-checks.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation failure,
// 3 numerical failure (NaN abort or failed self-check).

#include "xsep/gradcheck.hpp"
#include "xsep/metrics.hpp"
#include "xsep/network.hpp"
#include "xsep/synth.hpp"
#include "xsep/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <array>
#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace xsep;

namespace {

int worker_limit() {
  if (const char* env = std::getenv("XSEP_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return v;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string gaps_label(const std::vector<int>& gaps) {
  if (gaps.empty()) return "none";
  std::string s;
  for (std::size_t i = 0; i < gaps.size(); ++i) {
    if (i) s += '+';
    s += std::to_string(gaps[i]);
  }
  return s;
}

// Trains one configuration, writes its artifacts, and returns the test-split
// evaluation.
EvalResult run_and_eval(const TrainConfig& cfg, const LoadedDataset& data, const fs::path& out) {
  fs::create_directories(out);
  TrainResult r = train(cfg, data);
  r.best_network.save((out / "checkpoint.xsep").string());
  write_text(out / "loss_log.csv", "# seed=" + std::to_string(cfg.seed) + "\n" + r.loss_log_csv());
  write_text(out / "loss_report.csv", r.final_loss_report_csv);
  json report;
  report["wall_seconds"] = r.wall_seconds;
  report["best_epoch"] = r.best_epoch;
  report["best_valid_loss"] = r.best_valid_loss;
  report["diverged"] = r.diverged;
  if (r.diverged) report["divergence_note"] = r.divergence_note;
  report["config"] = json::parse(cfg.to_json());
  write_text(out / "train_report.json", report.dump(2) + "\n");
  if (r.diverged) throw NumericError("training diverged: " + r.divergence_note);
  return evaluate_model(r.best_network, data.manifest, data.dir);
}

std::string grid_csv_header(const std::vector<std::string>& names, const std::string& key) {
  std::string h = key;
  for (const std::string& n : names) h += "," + n;
  return h + ",avg\n";
}

std::string grid_csv_row(const std::string& key, const EvalResult& e) {
  std::string row = key;
  for (const auto& v : e.per_source) row += "," + format_scalar(v.value_or(-60.0));
  row += "," + format_scalar(e.average.value_or(-60.0));
  return row + "\n";
}

// Runs a list of (label, config) members, optionally in parallel worker
// threads; results are merged in config order.
std::vector<EvalResult> run_grid(const std::vector<std::pair<std::string, TrainConfig>>& members,
                                 const LoadedDataset& data, const fs::path& out, int jobs) {
  std::vector<EvalResult> results(members.size());
  std::vector<std::string> errors(members.size());
  std::atomic<std::size_t> next{0};
  const int n_workers = std::max(1, std::min<int>(jobs, static_cast<int>(members.size())));
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= members.size()) return;
      try {
        results[i] = run_and_eval(members[i].second, data, out / ("run_" + members[i].first));
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < members.size(); ++i)
    if (!errors[i].empty())
      throw NumericError("grid member '" + members[i].first + "' failed: " + errors[i]);
  return results;
}

int cmd_gen_data(const std::string& out_dir, int tracks, int valid, int test, int j,
                 double duration, double sr, std::uint64_t seed, bool overwrite) {
  DatasetConfig cfg;
  cfg.train_tracks = tracks;
  cfg.valid_tracks = valid;
  cfg.test_tracks = test;
  cfg.j = j;
  cfg.duration_s = duration;
  cfg.sample_rate = sr;
  cfg.seed = seed;
  cfg.overwrite = overwrite;
  DatasetManifest m = build_dataset(cfg, out_dir);
  std::cout << "wrote " << m.tracks.size() << " tracks (" << cfg.train_tracks << " train / "
            << cfg.valid_tracks << " valid / " << cfg.test_tracks << " test) under " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
  TrainConfig cfg = TrainConfig::load(config_path);
  LoadedDataset data = load_training_data(cfg.data_dir, cfg.spectral);
  EvalResult e = run_and_eval(cfg, data, out_dir);
  std::cout << "best checkpoint written to " << (fs::path(out_dir) / "checkpoint.xsep").string()
            << "\ntest-split summary:\n"
            << grid_csv_header(e.source_names, "run") << grid_csv_row("train", e);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out_path) {
  SeparationNetwork net = SeparationNetwork::load(ckpt);
  DatasetManifest manifest =
      DatasetManifest::load((fs::path(data_dir) / "manifest.json").string());
  EvalResult e = evaluate_model(net, manifest, data_dir);
  const std::string csv = e.to_csv();
  if (out_path.empty())
    std::cout << csv;
  else
    write_text(out_path, csv);
  return 0;
}

int cmd_separate(const std::string& ckpt, const std::string& in_wav, const std::string& out_dir) {
  SeparationNetwork net = SeparationNetwork::load(ckpt);
  WavData wav = read_wav(in_wav);
  fs::create_directories(out_dir);
  const bool mono = wav.channels.size() == 1;
  for (std::size_t c = 0; c < wav.channels.size(); ++c) {
    SeparationOutput sep = net.separate(wav.channels[c]);
    for (std::size_t s = 0; s < sep.est_times.size(); ++s) {
      // Masked resynthesis can overshoot 1.0 slightly on pathological input.
      Vec clipped = sep.est_times[s].cwiseMax(-1.0).cwiseMin(1.0);
      const std::string name = mono ? "source_" + std::to_string(s) + ".wav"
                                    : "source_" + std::to_string(s) + "_ch" +
                                          std::to_string(c) + ".wav";
      write_wav(clipped, (fs::path(out_dir) / name).string(), wav.sample_rate);
    }
  }
  std::cout << "wrote " << net.config().j * static_cast<int>(wav.channels.size())
            << " stems to " << out_dir << "\n";
  return 0;
}

int cmd_sweep_bridges(const std::string& config_path, const std::string& out_dir, int jobs) {
  TrainConfig base = TrainConfig::load(config_path);
  LoadedDataset data = load_training_data(base.data_dir, base.spectral);
  std::vector<std::pair<std::string, TrainConfig>> members;
  for (int mask = 0; mask < 8; ++mask) {
    TrainConfig cfg = base;
    cfg.bridge_gaps.clear();
    for (int gap = 1; gap <= 3; ++gap)
      if (mask & (1 << (gap - 1))) cfg.bridge_gaps.push_back(gap);
    members.emplace_back(gaps_label(cfg.bridge_gaps), cfg);
  }
  const fs::path out(out_dir);
  fs::create_directories(out);
  std::vector<EvalResult> results = run_grid(members, data, out, jobs);
  std::string csv = "# seed=" + std::to_string(base.seed) + "\n" +
                    grid_csv_header(results[0].source_names, "gaps");
  for (std::size_t i = 0; i < members.size(); ++i)
    csv += grid_csv_row(members[i].first, results[i]);
  write_text(out / "sweep_bridges.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir, int jobs) {
  TrainConfig base = TrainConfig::load(config_path);
  if (base.bridge_gaps.empty()) base.bridge_gaps = {1};
  LoadedDataset data = load_training_data(base.data_dir, base.spectral);
  std::vector<std::pair<std::string, TrainConfig>> members;
  std::vector<std::array<bool, 3>> flags;  // mdl, bridge, cl
  for (int mask = 0; mask < 8; ++mask)
    flags.push_back({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0});
  for (std::size_t i = 0; i < flags.size(); ++i) {
    TrainConfig cfg = base;
    cfg.use_mdl = flags[i][0];
    cfg.use_cl = flags[i][2];
    if (!flags[i][1]) cfg.bridge_gaps.clear();
    const std::string label = (i + 1 < flags.size()) ? "C" + std::to_string(i + 1) : "P";
    members.emplace_back(label, cfg);
  }
  const fs::path out(out_dir);
  fs::create_directories(out);
  std::vector<EvalResult> results = run_grid(members, data, out, jobs);
  std::string csv = "# seed=" + std::to_string(base.seed) + "\n";
  csv += "mode,mdl,bridge,cl";
  for (const std::string& n : results[0].source_names) csv += "," + n;
  csv += ",avg\n";
  for (std::size_t i = 0; i < members.size(); ++i) {
    std::string row = members[i].first;
    row += flags[i][0] ? ",1" : ",0";
    row += flags[i][1] ? ",1" : ",0";
    row += flags[i][2] ? ",1" : ",0";
    for (const auto& v : results[i].per_source) row += "," + format_scalar(v.value_or(-60.0));
    row += "," + format_scalar(results[i].average.value_or(-60.0));
    csv += row + "\n";
  }
  write_text(out / "ablation.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_seed_sweep(const std::string& config_path, int n_seeds, const std::string& out_dir) {
  TrainConfig cfg = TrainConfig::load(config_path);
  LoadedDataset data = load_training_data(cfg.data_dir, cfg.spectral);
  std::vector<std::uint64_t> seeds;
  for (int i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
  SeedSweepResult r = seed_sweep(cfg, seeds, data);
  const std::string csv = "# seed=" + std::to_string(cfg.seed) + "\n" + r.to_csv();
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "seed_sweep.csv", csv);
  }
  std::cout << csv;
  std::cout << "avg over sources: " << format_scalar(r.avg_mean) << " +/- "
            << format_scalar(r.avg_std) << " dB\n";
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  const auto cases = run_gradient_checks(seed);
  bool ok = true;
  for (const GradCheckCase& c : cases) {
    std::cout << (c.report.pass ? "PASS " : "FAIL ") << c.name
              << " (max_rel_err=" << format_scalar(c.report.max_rel_err)
              << ", tol=" << format_scalar(c.tolerance) << ")\n";
    ok = ok && c.report.pass;
  }
  if (!ok) {
    std::cerr << "gradcheck: finite-difference validation failed\n";
    return 3;
  }
  std::cout << cases.size() << " gradient checks passed\n";
  return 0;
}

int cmd_combos(int j) {
  const auto combos = enumerate_combinations(j);
  for (const CombinationSpec& c : combos) std::cout << c.label() << "\n";
  std::cout << "N=" << combos.size() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xsep: crossing-scheme source separation workbench"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  std::string gen_out;
  int gen_tracks = 30, gen_valid = 5, gen_test = 10, gen_j = 4;
  double gen_duration = 6.0, gen_sr = 8000.0;
  std::uint64_t gen_seed = 1;
  bool gen_overwrite = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--tracks", gen_tracks, "train tracks (default 30)");
  gen->add_option("--valid-tracks", gen_valid, "valid tracks (default 5)");
  gen->add_option("--test-tracks", gen_test, "test tracks (default 10)");
  gen->add_option("--j", gen_j, "sources per track (default 4)");
  gen->add_option("--duration", gen_duration, "track duration seconds (default 6)");
  gen->add_option("--sr", gen_sr, "sample rate Hz (default 8000)");
  gen->add_option("--seed", gen_seed, "dataset seed");
  gen->add_flag("--overwrite", gen_overwrite, "replace an existing dataset");

  // train
  auto* tr = app.add_subcommand("train", "train one configuration");
  std::string tr_config, tr_out;
  tr->add_option("--config", tr_config, "train config JSON")->required();
  tr->add_option("--out", tr_out, "output directory")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string ev_ckpt, ev_data, ev_out;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--out", ev_out, "CSV output path (default stdout)");

  // separate
  auto* sep = app.add_subcommand("separate", "separate a mixture WAV into stems");
  std::string sep_ckpt, sep_in, sep_out;
  sep->add_option("--ckpt", sep_ckpt, "checkpoint file")->required();
  sep->add_option("--in", sep_in, "input mixture wav")->required();
  sep->add_option("--out", sep_out, "output directory")->required();

  // sweep-bridges
  auto* swb = app.add_subcommand("sweep-bridges", "train every bridge-gap subset");
  std::string swb_config, swb_out = "sweep_bridges_out";
  int swb_jobs = 1;
  swb->add_option("--config", swb_config, "train config JSON")->required();
  swb->add_option("--out", swb_out, "output directory");
  swb->add_option("--jobs", swb_jobs, "parallel runs (default 1)");

  // ablate
  auto* abl = app.add_subcommand("ablate", "train the 8 {MDL, bridge, CL} combinations");
  std::string abl_config, abl_out = "ablate_out";
  int abl_jobs = 1;
  abl->add_option("--config", abl_config, "train config JSON")->required();
  abl->add_option("--out", abl_out, "output directory");
  abl->add_option("--jobs", abl_jobs, "parallel runs (default 1)");

  // seed-sweep
  auto* ssw = app.add_subcommand("seed-sweep", "train the config across several seeds");
  std::string ssw_config, ssw_out;
  int ssw_seeds = 5;
  ssw->add_option("--config", ssw_config, "train config JSON")->required();
  ssw->add_option("--seeds", ssw_seeds, "number of seeds (default 5)");
  ssw->add_option("--out", ssw_out, "output directory (optional)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "run every finite-difference suite");
  std::uint64_t gc_seed = 2024;
  gc->add_option("--seed", gc_seed, "rng seed for the checks");

  // combos
  auto* cb = app.add_subcommand("combos", "print the combination-loss enumeration");
  int cb_j = 4;
  cb->add_option("--j", cb_j, "source count")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen_data(gen_out, gen_tracks, gen_valid, gen_test, gen_j, gen_duration, gen_sr,
                          gen_seed, gen_overwrite);
    if (tr->parsed()) return cmd_train(tr_config, tr_out);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_out);
    if (sep->parsed()) return cmd_separate(sep_ckpt, sep_in, sep_out);
    if (swb->parsed())
      return cmd_sweep_bridges(swb_config, swb_out, std::min(swb_jobs, worker_limit()));
    if (abl->parsed()) return cmd_ablate(abl_config, abl_out, std::min(abl_jobs, worker_limit()));
    if (ssw->parsed()) return cmd_seed_sweep(ssw_config, ssw_seeds, ssw_out);
    if (gc->parsed()) return cmd_gradcheck(gc_seed);
    if (cb->parsed()) return cmd_combos(cb_j);
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
