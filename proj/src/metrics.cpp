#include "xsep/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace xsep {

Scalar sdr_db(const Vec& ref, const Vec& est) {
  if (ref.size() != est.size())
    throw std::invalid_argument("sdr_db: length mismatch (" + std::to_string(ref.size()) +
                                " vs " + std::to_string(est.size()) + ")");
  const Scalar ref_energy = ref.squaredNorm();
  const Scalar err_energy = (ref - est).squaredNorm() + 1e-12;
  if (ref_energy <= 0.0) return -60.0;
  const Scalar db = 10.0 * std::log10(ref_energy / err_energy);
  return std::clamp(db, -60.0, 60.0);
}

std::optional<Scalar> median(std::vector<Scalar> values) {
  if (values.empty()) return std::nullopt;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

FramewiseSdr framewise_median_sdr(const Vec& ref, const Vec& est, Scalar frame_length_s,
                                  Scalar sample_rate) {
  if (frame_length_s <= 0.0)
    throw std::invalid_argument("framewise_median_sdr: frame length must be positive");
  if (ref.size() != est.size())
    throw std::invalid_argument("framewise_median_sdr: length mismatch (" +
                                std::to_string(ref.size()) + " vs " +
                                std::to_string(est.size()) + ")");
  const auto frame = static_cast<Eigen::Index>(std::lround(frame_length_s * sample_rate));
  Eigen::Index count = frame > 0 ? ref.size() / frame : 0;
  FramewiseSdr out;
  if (count == 0) count = 1;  // short signal: evaluate it as a single frame
  for (Eigen::Index t = 0; t < count; ++t) {
    const Eigen::Index start = t * frame;
    const Eigen::Index len = std::min<Eigen::Index>(frame, ref.size() - start);
    const Vec rf = ref.segment(start, len);
    if (rf.squaredNorm() == 0.0) {
      ++out.silent_frames;
      continue;
    }
    out.frame_db.push_back(sdr_db(rf, est.segment(start, len)));
  }
  out.median_db = median(out.frame_db);
  return out;
}

namespace {

std::string opt_to_str(const std::optional<Scalar>& v) {
  return v ? format_scalar(*v) : "nan";
}

EvalResult aggregate(const std::vector<std::string>& names,
                     std::vector<EvalResult::Row> rows, int sources) {
  EvalResult res;
  res.source_names = names;
  res.per_track = std::move(rows);
  std::vector<Scalar> aggregates;
  for (int s = 0; s < sources; ++s) {
    std::vector<Scalar> vals;
    for (const auto& row : res.per_track)
      if (row.source == names[static_cast<std::size_t>(s)] && row.median_db)
        vals.push_back(*row.median_db);
    res.per_source.push_back(median(std::move(vals)));
    if (res.per_source.back()) aggregates.push_back(*res.per_source.back());
  }
  if (static_cast<int>(aggregates.size()) == sources)
    res.average = std::accumulate(aggregates.begin(), aggregates.end(), 0.0) /
                  static_cast<Scalar>(sources);
  return res;
}

}  // namespace

std::string EvalResult::to_csv() const {
  std::string out = "track,source,median_sdr_db\n";
  for (const Row& r : per_track)
    out += r.track + "," + r.source + "," + opt_to_str(r.median_db) + "\n";
  for (std::size_t s = 0; s < source_names.size(); ++s)
    out += "ALL," + source_names[s] + "," + opt_to_str(per_source[s]) + "\n";
  out += "ALL,Avg.," + opt_to_str(average) + "\n";
  return out;
}

EvalResult evaluate_model(const SeparationNetwork& net, const DatasetManifest& manifest,
                          const std::string& dataset_dir, Scalar frame_length_s) {
  const std::vector<TrackEntry> test = manifest.split("test");
  if (test.empty()) throw DataError("evaluate_model: manifest has no test tracks");

  std::vector<std::string> names;
  std::vector<EvalResult::Row> rows;
  for (const TrackEntry& entry : test) {
    const SourceSet set = load_track(dataset_dir, entry, manifest.config.j);
    if (names.empty()) names = set.family_labels;
    const SeparationOutput sep = net.separate(set.mixture);
    for (int s = 0; s < manifest.config.j; ++s) {
      const auto ss = static_cast<std::size_t>(s);
      if (sep.est_times[ss].size() != set.sources[ss].size())
        throw DataError("evaluate_model: estimate/reference length mismatch on track " +
                        entry.id);
      FramewiseSdr f = framewise_median_sdr(set.sources[ss], sep.est_times[ss], frame_length_s,
                                            set.sample_rate);
      rows.push_back({entry.id, names[ss], f.median_db});
    }
  }
  return aggregate(names, std::move(rows), manifest.config.j);
}

EvalResult evaluate_estimates(
    const std::vector<std::pair<std::string, const SourceSet*>>& tracks,
    const std::vector<std::vector<Vec>>& estimates, Scalar frame_length_s) {
  if (tracks.size() != estimates.size() || tracks.empty())
    throw std::invalid_argument("evaluate_estimates: track/estimate count mismatch");
  std::vector<std::string> names = tracks[0].second->family_labels;
  std::vector<EvalResult::Row> rows;
  for (std::size_t t = 0; t < tracks.size(); ++t) {
    const SourceSet& set = *tracks[t].second;
    for (std::size_t s = 0; s < set.sources.size(); ++s) {
      FramewiseSdr f = framewise_median_sdr(set.sources[s], estimates[t][s], frame_length_s,
                                            set.sample_rate);
      rows.push_back({tracks[t].first, names[s], f.median_db});
    }
  }
  return aggregate(names, std::move(rows), static_cast<int>(names.size()));
}

}  // namespace xsep
