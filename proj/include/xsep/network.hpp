#pragma once

#include "xsep/autodiff.hpp"
#include "xsep/common.hpp"
#include "xsep/spectral.hpp"

#include <cstdint>
#include <string>
#include <vector>

// The separation network: J parallel branches of
//   Affine+tanh -> bidirectional vanilla recurrent -> Affine+relu -> Affine+sigmoid mask head
// with a parameter-free averaging bridge insertable at any of the three
// inter-block gaps. Masks multiply the mixture magnitude; time-domain
// estimates are resynthesized with the mixture phase.

namespace xsep {

struct BridgedNetworkConfig {
  int j = 4;       // number of sources / branches
  int bins = 129;  // input/output frequency dimension
  int hidden = 64;
  std::vector<int> bridge_gaps;  // subset of {1, 2, 3}, sorted

  static constexpr int kNumBlocks = 4;

  void validate() const;
  bool has_gap(int gap) const;
};

struct SeparationOutput {
  std::vector<Mat> masks;     // J grids, strictly in (0, 1)
  std::vector<Mat> est_mags;  // mask .* mixture magnitude
  std::vector<Vec> est_times; // mixture length
};

class SeparationNetwork {
 public:
  SeparationNetwork() = default;

  // Fresh parameters from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), seeded.
  static SeparationNetwork build(const BridgedNetworkConfig& cfg, const SpectralConfig& spectral,
                                 std::uint64_t seed);

  const BridgedNetworkConfig& config() const { return cfg_; }
  const SpectralConfig& spectral() const { return spectral_; }

  std::int64_t parameter_count() const;
  std::vector<Mat>& parameters() { return params_; }
  const std::vector<Mat>& parameters() const { return params_; }
  const std::vector<std::string>& parameter_names() const { return names_; }

  // Frozen per-bin input normalization, computed from the training set.
  void set_input_stats(RowVec mean, RowVec stddev);
  const RowVec& input_mean() const { return input_mean_; }
  const RowVec& input_std() const { return input_std_; }

  struct BranchVars {
    ad::Var mask, est_mag, est_time;
  };

  // Builds the forward program on `g`. When `param_vars` is non-null it
  // receives the parameter leaves in declaration order (for reading gradients
  // back out after backward()).
  std::vector<BranchVars> forward(ad::Graph& g, const Mat& mixture_mag, const PhaseGrids& phase,
                                  int out_length, bool params_require_grad,
                                  std::vector<ad::Var>* param_vars = nullptr) const;

  // Same program over caller-provided parameter nodes in declaration order
  // (the gradient-check harness substitutes its own leaves here).
  std::vector<BranchVars> forward_with_params(ad::Graph& g, std::span<const ad::Var> params,
                                              const Mat& mixture_mag, const PhaseGrids& phase,
                                              int out_length) const;

  // Plain inference: stft, mask, resynthesize. Runs the same program as
  // forward() with frozen parameters.
  SeparationOutput separate(const Vec& mixture) const;

  // Checkpoint: magic "XSEP", u32 version, length-prefixed JSON config, then
  // parameters as little-endian 64-bit reals in declaration order.
  void save(const std::string& path) const;
  static SeparationNetwork load(const std::string& path);

 private:
  BridgedNetworkConfig cfg_;
  SpectralConfig spectral_;
  std::vector<Mat> params_;
  std::vector<std::string> names_;
  RowVec input_mean_, input_std_;
};

}  // namespace xsep
