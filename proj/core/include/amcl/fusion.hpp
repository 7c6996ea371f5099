#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "amcl/autodiff.hpp"
#include "amcl/model_zoo.hpp"
#include "amcl/rng.hpp"

namespace amcl {

struct FusionConfig {
  std::size_t members = 2;
  std::size_t channels = 32;    // channels of one member's tap
  bool spatial = true;          // taps are [B, C, H, W] (else [B, C])
  std::size_t reduction = 4;    // channel-gate bottleneck ratio
  double residual_scale = 1.0;  // weight of each member's own tap in member_input
  bool gate = true;

  void validate() const;
};

/// Shared fusion of member tap features:
///
///   fused        = gate(p) * p,   p = projection(concat(taps))
///   gate(p)      = sigmoid(W2 relu(W1 avgpool(p) + b1) + b2)
///   member_input = fused + residual_scale * own_tap
///
/// The projection is a 1x1 convolution (dense for flat taps) mapping M*C
/// channels to C and starts as the per-channel member average.
class FusionModule {
 public:
  FusionModule(FusionConfig config, std::uint64_t seed);

  const FusionConfig& config() const noexcept { return config_; }

  /// One fused tensor for the whole ensemble; concat order is member index.
  Var fuse(Graph& g, std::span<const Var> taps, bool trainable = true);
  Var member_input(Graph& g, Var fused, Var own_tap);

  void set_identity_projection();
  void set_averaging_projection();

  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<Tensor*> parameter_ptrs();
  std::uint64_t checksum() const noexcept;

 private:
  Var bind(Graph& g, std::size_t param, bool trainable);

  FusionConfig config_;
  std::vector<NamedTensor> params_;
};

FusionConfig fusion_config_for(const ArchitectureSpec& spec, std::size_t members);

/// Row permutation plan for the stochastic feature-sharing baseline.
struct SharePlan {
  std::vector<std::vector<std::size_t>> source;  // [member][row] -> source member
  std::vector<bool> shared;                      // per row: a permutation was drawn

  std::size_t shared_rows() const;
};

/// Per batch row, with probability `p_share` draw a uniform permutation of
/// the members' features; otherwise keep the identity.
SharePlan plan_feature_share(std::size_t members, std::size_t rows, double p_share, Rng& rng);

/// Applies a plan: output m, row b is taps[plan.source[m][b]] row b.
std::vector<Var> feature_share(Graph& g, std::span<const Var> taps, const SharePlan& plan);

}  // namespace amcl
