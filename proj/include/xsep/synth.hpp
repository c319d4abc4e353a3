#pragma once

#include "xsep/common.hpp"

#include <cstdint>
#include <string>
#include <vector>

// Deterministic synthetic multi-source tracks: the mixture is the exact
// sample-wise sum of its sources. Four source families with controllably
// overlapping spectra stand in for the bass/drums/other/vocals roles, plus
// RIFF float32 WAV ingestion/emission and a JSON dataset manifest.

namespace xsep {

struct SourceSet {
  std::vector<Vec> sources;  // J aligned signals
  Vec mixture;               // exact sample-wise sum
  Scalar sample_rate = 8000.0;
  std::uint64_t seed = 0;
  std::vector<std::string> family_labels;
};

// Family of source j is j mod 4: harmonic tone stack (fundamental 80-400 Hz),
// amplitude-modulated noise bursts, low-passed tone below 200 Hz, and
// band-limited noise. All signals are scaled by one common factor so the
// mixture peaks at 0.9.
SourceSet generate_track(std::uint64_t seed, int j, Scalar duration_s, Scalar sample_rate);

std::string source_family_name(int j);

// Mono IEEE-float32 RIFF/WAVE.
void write_wav(const Vec& signal, const std::string& path, Scalar sample_rate);

struct WavData {
  std::vector<Vec> channels;
  Scalar sample_rate = 0.0;
};
WavData read_wav(const std::string& path);

struct DatasetConfig {
  int train_tracks = 30, valid_tracks = 5, test_tracks = 10;
  int j = 4;
  Scalar duration_s = 6.0;
  Scalar sample_rate = 8000.0;
  std::uint64_t seed = 1;
  bool overwrite = false;
};

struct TrackEntry {
  std::string id;
  std::uint64_t seed = 0;
  Scalar duration_s = 0.0;
  std::string split;  // train / valid / test
};

struct DatasetManifest {
  DatasetConfig config;
  std::vector<TrackEntry> tracks;

  std::vector<TrackEntry> split(const std::string& name) const;
  void save(const std::string& path) const;
  static DatasetManifest load(const std::string& path);
};

// Writes <out_dir>/<track id>/{mixture.wav, source_<j>.wav} for every track
// plus <out_dir>/manifest.json.
DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir);

SourceSet load_track(const std::string& dataset_dir, const TrackEntry& entry, int j);

}  // namespace xsep
