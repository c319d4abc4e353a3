#pragma once

#include "xsep/common.hpp"
#include "xsep/network.hpp"
#include "xsep/synth.hpp"

#include <optional>
#include <string>
#include <vector>

// Evaluation-side SDR, decoupled from the training losses: classic energy
// ratio in dB, framewise medians, then a median over tracks (in that fixed
// order), with a per-source summary and an overall average.

namespace xsep {

// 10 log10(||ref||^2 / (||ref - est||^2 + 1e-12)), clamped to [-60, 60] dB.
Scalar sdr_db(const Vec& ref, const Vec& est);

struct FramewiseSdr {
  std::vector<Scalar> frame_db;       // non-silent frames, in time order
  std::optional<Scalar> median_db;    // empty when every frame is silent
  int silent_frames = 0;
};

// Non-overlapping frames (default 1 s); frames whose reference is all-zero
// are marked silent and excluded from the median. Even-count medians are the
// mean of the two central values.
FramewiseSdr framewise_median_sdr(const Vec& ref, const Vec& est, Scalar frame_length_s,
                                  Scalar sample_rate);

struct EvalResult {
  struct Row {
    std::string track, source;
    std::optional<Scalar> median_db;
  };
  std::vector<std::string> source_names;
  std::vector<Row> per_track;                        // track-major, source-minor
  std::vector<std::optional<Scalar>> per_source;     // median over tracks
  std::optional<Scalar> average;                     // mean of per-source aggregates

  // header track,source,median_sdr_db; summary rows use track = "ALL" and the
  // overall mean uses source = "Avg.".
  std::string to_csv() const;
};

std::optional<Scalar> median(std::vector<Scalar> values);

// Separates every track of the manifest's test split and aggregates SDR.
EvalResult evaluate_model(const SeparationNetwork& net, const DatasetManifest& manifest,
                          const std::string& dataset_dir, Scalar frame_length_s = 1.0);

// Same aggregation for caller-provided estimates (oracle/sanity baselines).
EvalResult evaluate_estimates(
    const std::vector<std::pair<std::string, const SourceSet*>>& tracks,
    const std::vector<std::vector<Vec>>& estimates, Scalar frame_length_s = 1.0);

}  // namespace xsep
