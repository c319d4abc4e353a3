#include "xsep/network.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

using nlohmann::json;

namespace xsep {

void BridgedNetworkConfig::validate() const {
  if (j < 1) throw std::invalid_argument("network: J must be >= 1, got " + std::to_string(j));
  if (bins < 1 || hidden < 1)
    throw std::invalid_argument("network: bins and hidden must be >= 1");
  for (std::size_t i = 0; i < bridge_gaps.size(); ++i) {
    if (bridge_gaps[i] < 1 || bridge_gaps[i] > kNumBlocks - 1)
      throw std::invalid_argument("network: invalid bridge gap index " +
                                  std::to_string(bridge_gaps[i]) + " (valid: 1.." +
                                  std::to_string(kNumBlocks - 1) + ")");
    if (i > 0 && bridge_gaps[i] <= bridge_gaps[i - 1])
      throw std::invalid_argument("network: bridge gaps must be sorted and unique");
  }
}

bool BridgedNetworkConfig::has_gap(int gap) const {
  return std::find(bridge_gaps.begin(), bridge_gaps.end(), gap) != bridge_gaps.end();
}

namespace {

Mat init_matrix(Rng& rng, int rows, int cols, int fan_in) {
  const Scalar k = 1.0 / std::sqrt(static_cast<Scalar>(fan_in));
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-k, k);
  return m;
}

}  // namespace

SeparationNetwork SeparationNetwork::build(const BridgedNetworkConfig& cfg,
                                           const SpectralConfig& spectral, std::uint64_t seed) {
  cfg.validate();
  spectral.validate();
  if (cfg.bins != spectral.bins())
    throw std::invalid_argument("network: bins " + std::to_string(cfg.bins) +
                                " does not match spectral config (" +
                                std::to_string(spectral.bins()) + ")");
  SeparationNetwork net;
  net.cfg_ = cfg;
  net.spectral_ = spectral;
  net.input_mean_ = RowVec::Zero(cfg.bins);
  net.input_std_ = RowVec::Ones(cfg.bins);

  Rng rng(seed);
  const int h = cfg.hidden;
  auto push = [&](const std::string& name, int rows, int cols, int fan_in) {
    net.params_.push_back(init_matrix(rng, rows, cols, fan_in));
    net.names_.push_back(name);
  };
  for (int j = 0; j < cfg.j; ++j) {
    const std::string p = "branch" + std::to_string(j) + ".";
    push(p + "affine_in.W", cfg.bins, h, cfg.bins);
    push(p + "affine_in.b", 1, h, cfg.bins);
    for (const char* dir : {"fwd", "bwd"}) {
      push(p + "rnn." + dir + ".W", h, h, h);
      push(p + "rnn." + dir + ".U", h, h, h);
      push(p + "rnn." + dir + ".b", 1, h, h);
    }
    push(p + "affine_mid.W", 2 * h, h, 2 * h);
    push(p + "affine_mid.b", 1, h, 2 * h);
    push(p + "mask_head.W", h, cfg.bins, h);
    push(p + "mask_head.b", 1, cfg.bins, h);
  }
  return net;
}

std::int64_t SeparationNetwork::parameter_count() const {
  std::int64_t n = 0;
  for (const Mat& p : params_) n += p.size();
  return n;
}

void SeparationNetwork::set_input_stats(RowVec mean, RowVec stddev) {
  if (mean.size() != cfg_.bins || stddev.size() != cfg_.bins)
    throw std::invalid_argument("network: input stats must have one entry per bin");
  input_mean_ = std::move(mean);
  input_std_ = stddev.cwiseMax(1e-6);
}

namespace {

ad::Var affine(ad::Var x, ad::Var w, ad::Var b, ad::Var ones) {
  return ad::add(ad::matmul(x, w), ad::matmul(ones, b));
}

ad::Var recurrent_direction(ad::Graph& g, ad::Var x, ad::Var w, ad::Var u, ad::Var b,
                            ad::Var ones, int hidden, bool reverse) {
  const int frames = static_cast<int>(x.rows());
  ad::Var pre = affine(x, w, b, ones);
  ad::Var h_prev = g.constant(Mat::Zero(1, hidden));
  std::vector<ad::Var> rows(static_cast<std::size_t>(frames));
  for (int i = 0; i < frames; ++i) {
    const int t = reverse ? frames - 1 - i : i;
    ad::Var z = ad::add(ad::slice(pre, t, 0, 1, hidden), ad::matmul(h_prev, u));
    ad::Var h = ad::tanh(z);
    rows[static_cast<std::size_t>(t)] = h;
    h_prev = h;
  }
  return ad::concat(rows, 0);
}

}  // namespace

std::vector<SeparationNetwork::BranchVars> SeparationNetwork::forward(
    ad::Graph& g, const Mat& mixture_mag, const PhaseGrids& phase, int out_length,
    bool params_require_grad, std::vector<ad::Var>* param_vars) const {
  std::vector<ad::Var> pv;
  pv.reserve(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i)
    pv.push_back(g.input(params_[i], params_require_grad, names_[i]));
  if (param_vars) *param_vars = pv;
  return forward_with_params(g, pv, mixture_mag, phase, out_length);
}

std::vector<SeparationNetwork::BranchVars> SeparationNetwork::forward_with_params(
    ad::Graph& g, std::span<const ad::Var> pv, const Mat& mixture_mag, const PhaseGrids& phase,
    int out_length) const {
  if (mixture_mag.cols() != cfg_.bins)
    throw std::invalid_argument("forward: mixture magnitude has " +
                                std::to_string(mixture_mag.cols()) + " bins, network expects " +
                                std::to_string(cfg_.bins));
  if (mixture_mag.rows() < 1) throw std::invalid_argument("forward: empty spectrogram");
  if (pv.size() != params_.size())
    throw std::invalid_argument("forward: expected " + std::to_string(params_.size()) +
                                " parameter nodes, got " + std::to_string(pv.size()));
  const int frames = static_cast<int>(mixture_mag.rows());
  const int h = cfg_.hidden;
  constexpr int kPerBranch = 12;

  Mat normalized = (mixture_mag.rowwise() - input_mean_).array().rowwise() /
                   input_std_.array();
  ad::Var x0 = g.constant(std::move(normalized));
  ad::Var ones = g.constant(Mat::Ones(frames, 1));
  ad::Var mag = g.constant(mixture_mag);

  std::vector<ad::Var> act(static_cast<std::size_t>(cfg_.j), x0);
  auto param = [&](int j, int k) { return pv[static_cast<std::size_t>(j * kPerBranch + k)]; };

  // Block 1: affine + tanh
  for (int j = 0; j < cfg_.j; ++j)
    act[static_cast<std::size_t>(j)] =
        ad::tanh(affine(act[static_cast<std::size_t>(j)], param(j, 0), param(j, 1), ones));
  if (cfg_.has_gap(1)) act.assign(act.size(), ad::branch_mean(act));

  // Block 2: bidirectional recurrent, directions concatenated along features
  for (int j = 0; j < cfg_.j; ++j) {
    ad::Var in = act[static_cast<std::size_t>(j)];
    ad::Var f = recurrent_direction(g, in, param(j, 2), param(j, 3), param(j, 4), ones, h, false);
    ad::Var b = recurrent_direction(g, in, param(j, 5), param(j, 6), param(j, 7), ones, h, true);
    const ad::Var parts[] = {f, b};
    act[static_cast<std::size_t>(j)] = ad::concat(parts, 1);
  }
  if (cfg_.has_gap(2)) act.assign(act.size(), ad::branch_mean(act));

  // Block 3: affine + relu
  for (int j = 0; j < cfg_.j; ++j)
    act[static_cast<std::size_t>(j)] =
        ad::relu(affine(act[static_cast<std::size_t>(j)], param(j, 8), param(j, 9), ones));
  if (cfg_.has_gap(3)) act.assign(act.size(), ad::branch_mean(act));

  // Block 4: sigmoid mask head, then masking and resynthesis
  std::vector<BranchVars> out(static_cast<std::size_t>(cfg_.j));
  for (int j = 0; j < cfg_.j; ++j) {
    auto& o = out[static_cast<std::size_t>(j)];
    o.mask = ad::sigmoid(affine(act[static_cast<std::size_t>(j)], param(j, 10), param(j, 11), ones));
    o.est_mag = ad::mul(o.mask, mag);
    ad::Var re = ad::mul(o.est_mag, g.constant(phase.unit_re));
    ad::Var im = ad::mul(o.est_mag, g.constant(phase.unit_im));
    o.est_time = istft_layer(g, re, im, spectral_, out_length);
  }
  return out;
}

SeparationOutput SeparationNetwork::separate(const Vec& mixture) const {
  const Spectrogram s = stft(mixture, spectral_);
  auto [mag, phase] = magnitude_and_phase(s);
  ad::Graph g;
  auto branches = forward(g, mag, phase, static_cast<int>(mixture.size()), false);
  SeparationOutput out;
  for (const BranchVars& b : branches) {
    out.masks.push_back(b.mask.value());
    out.est_mags.push_back(b.est_mag.value());
    out.est_times.push_back(b.est_time.value().row(0).transpose());
  }
  return out;
}

// ---- checkpoint io ----

namespace {

constexpr char kMagic[4] = {'X', 'S', 'E', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
  std::ifstream in;
  std::uint64_t offset = 0;
  explicit Reader(const std::string& path) : in(path, std::ios::binary) {}

  void read(void* dst, std::size_t n, const char* what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n)
      throw DataError("checkpoint truncated at byte offset " + std::to_string(offset) +
                      " while reading " + what);
    offset += n;
  }
  std::uint32_t u32(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t u64(const char* what) {
    std::uint64_t v = 0;
    unsigned char b[8];
    read(b, 8, what);
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
};

}  // namespace

void SeparationNetwork::save(const std::string& path) const {
  json cfg;
  cfg["j"] = cfg_.j;
  cfg["bins"] = cfg_.bins;
  cfg["hidden"] = cfg_.hidden;
  cfg["bridge_gaps"] = cfg_.bridge_gaps;
  cfg["spectral"] = {{"window_length", spectral_.window_length},
                     {"hop", spectral_.hop},
                     {"sample_rate", spectral_.sample_rate}};
  cfg["input_mean"] = std::vector<Scalar>(input_mean_.begin(), input_mean_.end());
  cfg["input_std"] = std::vector<Scalar>(input_std_.begin(), input_std_.end());
  cfg["param_count"] = parameter_count();
  const std::string cfg_str = cfg.dump();

  std::string buf;
  buf.reserve(16 + cfg_str.size() + static_cast<std::size_t>(parameter_count()) * 8);
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u64(buf, cfg_str.size());
  buf += cfg_str;
  for (const Mat& p : params_) {
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      for (Eigen::Index c = 0; c < p.cols(); ++c) {
        put_u64(buf, std::bit_cast<std::uint64_t>(p(r, c)));
      }
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open checkpoint for writing: " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("failed writing checkpoint: " + path);
}

SeparationNetwork SeparationNetwork::load(const std::string& path) {
  Reader r(path);
  if (!r.in) throw DataError("cannot open checkpoint: " + path);
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw DataError("not an XSEP checkpoint (bad magic bytes): " + path);
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                    std::to_string(kVersion) + ")");
  const std::uint64_t cfg_len = r.u64("config length");
  std::string cfg_str(cfg_len, '\0');
  r.read(cfg_str.data(), cfg_len, "config json");

  json cfg;
  try {
    cfg = json::parse(cfg_str);
  } catch (const json::exception& e) {
    throw DataError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }

  BridgedNetworkConfig nc;
  nc.j = cfg.at("j").get<int>();
  nc.bins = cfg.at("bins").get<int>();
  nc.hidden = cfg.at("hidden").get<int>();
  nc.bridge_gaps = cfg.at("bridge_gaps").get<std::vector<int>>();
  SpectralConfig sc;
  sc.window_length = cfg.at("spectral").at("window_length").get<int>();
  sc.hop = cfg.at("spectral").at("hop").get<int>();
  sc.sample_rate = cfg.at("spectral").at("sample_rate").get<Scalar>();

  SeparationNetwork net = build(nc, sc, 0);
  const auto mean = cfg.at("input_mean").get<std::vector<Scalar>>();
  const auto stddev = cfg.at("input_std").get<std::vector<Scalar>>();
  if (static_cast<int>(mean.size()) != nc.bins || static_cast<int>(stddev.size()) != nc.bins)
    throw DataError("checkpoint input stats do not match bin count");
  net.input_mean_ = Eigen::Map<const RowVec>(mean.data(), nc.bins);
  net.input_std_ = Eigen::Map<const RowVec>(stddev.data(), nc.bins);

  if (cfg.at("param_count").get<std::int64_t>() != net.parameter_count())
    throw DataError("checkpoint parameter count does not match its config");
  for (Mat& p : net.params_) {
    for (Eigen::Index row = 0; row < p.rows(); ++row) {
      for (Eigen::Index col = 0; col < p.cols(); ++col) {
        p(row, col) = std::bit_cast<Scalar>(r.u64("parameters"));
      }
    }
  }
  char extra;
  r.in.read(&extra, 1);
  if (r.in.gcount() == 1) throw DataError("checkpoint has trailing bytes: " + path);
  return net;
}

}  // namespace xsep
