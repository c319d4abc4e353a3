#include "xsep/synth.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

using nlohmann::json;
namespace fs = std::filesystem;

namespace xsep {

namespace {

constexpr const char* kFamilyNames[4] = {"harmonic", "drums", "bass", "other"};

// Slow sinusoidal amplitude envelope in [0.15, 1].
Vec slow_envelope(Rng& rng, int n, Scalar sr) {
  const Scalar rate = rng.uniform(0.15, 0.6);
  const Scalar phase = rng.uniform(0.0, 2.0 * M_PI);
  Vec env(n);
  for (int k = 0; k < n; ++k)
    env(k) = 0.575 + 0.425 * std::sin(2.0 * M_PI * rate * k / sr + phase);
  return env;
}

// A track-wide rhythm: exponentially decaying gate retriggered at a fixed
// period. Drums are noise gated by it; tonal sources duck against it, the way
// a rhythm section modulates the rest of a mix.
struct Rhythm {
  Scalar period_samples = 0.0;
  Scalar offset = 0.0;
  Scalar decay_s = 0.0;

  static Rhythm draw(Rng& rng, Scalar sr) {
    Rhythm r;
    const Scalar rate = rng.uniform(2.0, 4.5);  // bursts per second
    r.period_samples = sr / rate;
    r.offset = rng.uniform(0.0, r.period_samples);
    r.decay_s = rng.uniform(0.03, 0.09);
    return r;
  }
  Scalar gate(int k, Scalar sr) const {
    const Scalar since = std::fmod(static_cast<Scalar>(k) + offset, period_samples) / sr;
    return std::exp(-since / decay_s);
  }
};

// Amplitude dip synchronized to the rhythm, applied to the tonal families.
Vec ducking(Rng& rng, int n, Scalar sr, const Rhythm& rhythm) {
  const Scalar depth = rng.uniform(0.25, 0.5);
  Vec env(n);
  for (int k = 0; k < n; ++k) env(k) = 1.0 - depth * rhythm.gate(k, sr);
  return env;
}

Vec harmonic_stack(Rng& rng, int n, Scalar sr, const Rhythm& rhythm) {
  const Scalar f0 = rng.uniform(80.0, 400.0);
  const int partials = 4;
  Vec out = Vec::Zero(n);
  for (int p = 1; p <= partials; ++p) {
    const Scalar f = f0 * p;
    if (f >= 0.45 * sr) break;
    const Scalar amp = rng.uniform(0.5, 1.0) / (p * std::sqrt(static_cast<Scalar>(p)));
    const Scalar phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int k = 0; k < n; ++k) out(k) += amp * std::sin(2.0 * M_PI * f * k / sr + phase);
  }
  return out.cwiseProduct(slow_envelope(rng, n, sr)).cwiseProduct(ducking(rng, n, sr, rhythm));
}

// White noise gated by the burst train. Broadband, so every other source has
// to share bins with it during bursts.
Vec noise_bursts(Rng& rng, int n, Scalar sr, const Rhythm& rhythm) {
  Vec out(n);
  for (int k = 0; k < n; ++k) out(k) = 1.4 * rng.uniform(-1.0, 1.0) * rhythm.gate(k, sr);
  return out;
}

Vec low_tone(Rng& rng, int n, Scalar sr, const Rhythm& rhythm) {
  const Scalar f0 = rng.uniform(50.0, 95.0);  // partial 2 stays below 200 Hz
  const Scalar a2 = rng.uniform(0.1, 0.35);
  const Scalar ph1 = rng.uniform(0.0, 2.0 * M_PI);
  const Scalar ph2 = rng.uniform(0.0, 2.0 * M_PI);
  Vec out(n);
  for (int k = 0; k < n; ++k) {
    const Scalar t = 2.0 * M_PI * k / sr;
    out(k) = std::sin(f0 * t + ph1) + a2 * std::sin(2.0 * f0 * t + ph2);
  }
  return out.cwiseProduct(slow_envelope(rng, n, sr)).cwiseProduct(ducking(rng, n, sr, rhythm));
}

// Band-limited noise as a dense stack of random sinusoids. The band sits
// above most harmonic-stack partials but still overlaps their tail (and the
// broadband bursts), so cross-source leakage stays in play.
Vec band_noise(Rng& rng, int n, Scalar sr, const Rhythm& rhythm) {
  const Scalar lo = 1200.0;
  const Scalar hi = std::min(3200.0, 0.45 * sr);
  const int components = 60;
  Vec out = Vec::Zero(n);
  for (int c = 0; c < components; ++c) {
    const Scalar f = rng.uniform(lo, hi);
    const Scalar amp = rng.uniform(0.3, 1.0) / std::sqrt(static_cast<Scalar>(components));
    const Scalar phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int k = 0; k < n; ++k) out(k) += amp * std::sin(2.0 * M_PI * f * k / sr + phase);
  }
  return out.cwiseProduct(slow_envelope(rng, n, sr)).cwiseProduct(ducking(rng, n, sr, rhythm));
}

}  // namespace

std::string source_family_name(int j) { return kFamilyNames[j % 4]; }

SourceSet generate_track(std::uint64_t seed, int j, Scalar duration_s, Scalar sample_rate) {
  if (j < 2 || j > 8)
    throw std::invalid_argument("generate_track: J must be in [2, 8], got " + std::to_string(j));
  if (duration_s <= 0.0) throw std::invalid_argument("generate_track: duration must be positive");
  const int n = static_cast<int>(std::lround(duration_s * sample_rate));

  SourceSet set;
  set.sample_rate = sample_rate;
  set.seed = seed;
  Rng track_rng(splitmix64(seed ^ 0x243f6a8885a308d3ULL));
  const Rhythm rhythm = Rhythm::draw(track_rng, sample_rate);
  for (int s = 0; s < j; ++s) {
    Rng rng(splitmix64(seed ^ (0x6a09e667f3bcc909ULL + static_cast<std::uint64_t>(s))));
    Vec sig;
    switch (s % 4) {
      case 0: sig = harmonic_stack(rng, n, sample_rate, rhythm); break;
      case 1: sig = noise_bursts(rng, n, sample_rate, rhythm); break;
      case 2: sig = low_tone(rng, n, sample_rate, rhythm); break;
      default: sig = band_noise(rng, n, sample_rate, rhythm); break;
    }
    set.sources.push_back(std::move(sig));
    std::string label = source_family_name(s);
    if (s >= 4) label += "_" + std::to_string(s);
    set.family_labels.push_back(std::move(label));
  }

  Vec mix = Vec::Zero(n);
  for (const Vec& s : set.sources) mix += s;
  Scalar peak = mix.cwiseAbs().maxCoeff();
  for (const Vec& s : set.sources) peak = std::max(peak, s.cwiseAbs().maxCoeff());
  const Scalar scale = peak > 0.0 ? 0.9 / peak : 1.0;
  for (Vec& s : set.sources) s *= scale;

  // Eq-1 additivity is the contract: the stored mixture is recomputed as the
  // sample-wise sum of the scaled sources, never rescaled independently.
  set.mixture = Vec::Zero(n);
  for (const Vec& s : set.sources) set.mixture += s;
  return set;
}

// ---- WAV ----

namespace {

void put_u16(std::string& b, std::uint16_t v) {
  b.push_back(static_cast<char>(v & 0xff));
  b.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct WavReader {
  std::ifstream in;
  explicit WavReader(const std::string& path) : in(path, std::ios::binary) {}

  void read(void* dst, std::size_t n, const char* chunk) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw DataError(std::string("wav: truncated '") + chunk + "' chunk");
  }
  std::uint16_t u16(const char* chunk) {
    unsigned char b[2];
    read(b, 2, chunk);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* chunk) {
    unsigned char b[4];
    read(b, 4, chunk);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
};

}  // namespace

void write_wav(const Vec& signal, const std::string& path, Scalar sample_rate) {
  const Scalar peak = signal.size() > 0 ? signal.cwiseAbs().maxCoeff() : 0.0;
  if (peak > 1.0)
    throw std::invalid_argument("write_wav: peak amplitude " + format_scalar(peak) +
                                " exceeds 1.0");
  const auto n = static_cast<std::uint32_t>(signal.size());
  const std::uint32_t data_bytes = n * 4;

  std::string b;
  b.reserve(60 + data_bytes);
  b += "RIFF";
  put_u32(b, 4 + (8 + 16) + (8 + 4) + (8 + data_bytes));
  b += "WAVE";
  b += "fmt ";
  put_u32(b, 16);
  put_u16(b, 3);  // IEEE float
  put_u16(b, 1);  // mono
  put_u32(b, static_cast<std::uint32_t>(std::lround(sample_rate)));
  put_u32(b, static_cast<std::uint32_t>(std::lround(sample_rate)) * 4);
  put_u16(b, 4);
  put_u16(b, 32);
  b += "fact";
  put_u32(b, 4);
  put_u32(b, n);
  b += "data";
  put_u32(b, data_bytes);
  for (Eigen::Index k = 0; k < signal.size(); ++k)
    put_u32(b, std::bit_cast<std::uint32_t>(static_cast<float>(signal(k))));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open wav for writing: " + path);
  out.write(b.data(), static_cast<std::streamsize>(b.size()));
  if (!out) throw DataError("failed writing wav: " + path);
}

WavData read_wav(const std::string& path) {
  WavReader r(path);
  if (!r.in) throw DataError("cannot open wav: " + path);
  char id[4];
  r.read(id, 4, "RIFF");
  if (std::memcmp(id, "RIFF", 4) != 0) throw DataError("wav: malformed 'RIFF' chunk: " + path);
  r.u32("RIFF");
  r.read(id, 4, "WAVE");
  if (std::memcmp(id, "WAVE", 4) != 0) throw DataError("wav: missing 'WAVE' form: " + path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t sample_rate = 0;
  bool have_fmt = false;
  std::vector<unsigned char> data;
  bool have_data = false;

  while (true) {
    r.in.read(id, 4);
    if (r.in.gcount() == 0) break;  // clean end of chunk list
    if (r.in.gcount() != 4) throw DataError("wav: truncated chunk header: " + path);
    const std::uint32_t size = r.u32("chunk header");
    std::string name(id, 4);
    if (name == "fmt ") {
      if (size < 16) throw DataError("wav: malformed 'fmt ' chunk (size < 16)");
      format = r.u16("fmt ");
      channels = r.u16("fmt ");
      sample_rate = r.u32("fmt ");
      r.u32("fmt ");  // byte rate
      r.u16("fmt ");  // block align
      bits = r.u16("fmt ");
      std::vector<char> rest(size - 16);
      if (!rest.empty()) r.read(rest.data(), rest.size(), "fmt ");
      have_fmt = true;
    } else if (name == "data") {
      data.resize(size);
      if (size > 0) r.read(data.data(), size, "data");
      have_data = true;
    } else {
      std::vector<char> skip(size);
      if (size > 0) r.read(skip.data(), size, name.c_str());
    }
    if (size % 2 == 1) {  // chunks are word-aligned
      char pad;
      r.in.read(&pad, 1);
    }
  }
  if (!have_fmt) throw DataError("wav: missing 'fmt ' chunk: " + path);
  if (!have_data) throw DataError("wav: missing 'data' chunk: " + path);
  if (channels < 1) throw DataError("wav: 'fmt ' chunk declares zero channels: " + path);

  const bool float32 = format == 3 && bits == 32;
  const bool pcm16 = format == 1 && bits == 16;
  if (!float32 && !pcm16)
    throw DataError("wav: unsupported encoding in 'fmt ' chunk (format " +
                    std::to_string(format) + ", " + std::to_string(bits) + "-bit): " + path);

  const std::size_t bytes_per_sample = float32 ? 4 : 2;
  const std::size_t frame_bytes = bytes_per_sample * channels;
  const std::size_t frames = frame_bytes > 0 ? data.size() / frame_bytes : 0;

  WavData out;
  out.sample_rate = static_cast<Scalar>(sample_rate);
  out.channels.assign(channels, Vec(static_cast<Eigen::Index>(frames)));
  const unsigned char* p = data.data();
  for (std::size_t fidx = 0; fidx < frames; ++fidx) {
    for (std::uint16_t c = 0; c < channels; ++c) {
      Scalar v;
      if (float32) {
        std::uint32_t raw = static_cast<std::uint32_t>(p[0]) |
                            (static_cast<std::uint32_t>(p[1]) << 8) |
                            (static_cast<std::uint32_t>(p[2]) << 16) |
                            (static_cast<std::uint32_t>(p[3]) << 24);
        v = static_cast<Scalar>(std::bit_cast<float>(raw));
        p += 4;
      } else {
        const auto raw = static_cast<std::int16_t>(p[0] | (p[1] << 8));
        v = static_cast<Scalar>(raw) / 32768.0;
        p += 2;
      }
      out.channels[c](static_cast<Eigen::Index>(fidx)) = v;
    }
  }
  return out;
}

// ---- dataset ----

std::vector<TrackEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<TrackEntry> out;
  for (const TrackEntry& t : tracks)
    if (t.split == name) out.push_back(t);
  return out;
}

void DatasetManifest::save(const std::string& path) const {
  json j;
  j["config"] = {{"train_tracks", config.train_tracks}, {"valid_tracks", config.valid_tracks},
                 {"test_tracks", config.test_tracks},   {"j", config.j},
                 {"duration_s", config.duration_s},     {"sample_rate", config.sample_rate},
                 {"seed", config.seed}};
  j["tracks"] = json::array();
  for (const TrackEntry& t : tracks)
    j["tracks"].push_back({{"id", t.id}, {"seed", t.seed}, {"duration_s", t.duration_s},
                           {"split", t.split}});
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest DatasetManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError(std::string("manifest is not valid JSON: ") + e.what());
  }
  DatasetManifest m;
  const json& c = j.at("config");
  m.config.train_tracks = c.at("train_tracks").get<int>();
  m.config.valid_tracks = c.at("valid_tracks").get<int>();
  m.config.test_tracks = c.at("test_tracks").get<int>();
  m.config.j = c.at("j").get<int>();
  m.config.duration_s = c.at("duration_s").get<Scalar>();
  m.config.sample_rate = c.at("sample_rate").get<Scalar>();
  m.config.seed = c.at("seed").get<std::uint64_t>();
  for (const json& t : j.at("tracks"))
    m.tracks.push_back(TrackEntry{t.at("id").get<std::string>(), t.at("seed").get<std::uint64_t>(),
                                  t.at("duration_s").get<Scalar>(),
                                  t.at("split").get<std::string>()});
  return m;
}

DatasetManifest build_dataset(const DatasetConfig& cfg, const std::string& out_dir) {
  if (cfg.train_tracks < 1 || cfg.valid_tracks < 1 || cfg.test_tracks < 1)
    throw std::invalid_argument("build_dataset: every split needs at least one track");
  const fs::path root(out_dir);
  const fs::path manifest_path = root / "manifest.json";
  if (fs::exists(manifest_path) && !cfg.overwrite)
    throw DataError("dataset already exists at " + manifest_path.string() +
                    " (pass overwrite to regenerate)");
  fs::create_directories(root);

  DatasetManifest m;
  m.config = cfg;
  const int total = cfg.train_tracks + cfg.valid_tracks + cfg.test_tracks;
  for (int i = 0; i < total; ++i) {
    TrackEntry t;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "track_%03d", i);
    t.id = buf;
    t.seed = splitmix64(cfg.seed + static_cast<std::uint64_t>(i) + 1);
    t.duration_s = cfg.duration_s;
    t.split = i < cfg.train_tracks           ? "train"
              : i < cfg.train_tracks + cfg.valid_tracks ? "valid"
                                                        : "test";
    m.tracks.push_back(std::move(t));
  }

  for (const TrackEntry& t : m.tracks) {
    const SourceSet set = generate_track(t.seed, cfg.j, cfg.duration_s, cfg.sample_rate);
    const fs::path dir = root / t.id;
    fs::create_directories(dir);
    write_wav(set.mixture, (dir / "mixture.wav").string(), cfg.sample_rate);
    for (int s = 0; s < cfg.j; ++s)
      write_wav(set.sources[static_cast<std::size_t>(s)],
                (dir / ("source_" + std::to_string(s) + ".wav")).string(), cfg.sample_rate);
  }
  m.save(manifest_path.string());
  return m;
}

SourceSet load_track(const std::string& dataset_dir, const TrackEntry& entry, int j) {
  const fs::path dir = fs::path(dataset_dir) / entry.id;
  SourceSet set;
  set.seed = entry.seed;
  WavData mix = read_wav((dir / "mixture.wav").string());
  if (mix.channels.size() != 1)
    throw DataError("track " + entry.id + ": expected mono mixture");
  set.mixture = std::move(mix.channels[0]);
  set.sample_rate = mix.sample_rate;
  for (int s = 0; s < j; ++s) {
    WavData w = read_wav((dir / ("source_" + std::to_string(s) + ".wav")).string());
    if (w.channels.size() != 1 || w.channels[0].size() != set.mixture.size())
      throw DataError("track " + entry.id + ": source " + std::to_string(s) +
                      " does not align with the mixture");
    set.sources.push_back(std::move(w.channels[0]));
    std::string label = source_family_name(s);
    if (s >= 4) label += "_" + std::to_string(s);
    set.family_labels.push_back(std::move(label));
  }
  return set;
}

}  // namespace xsep
