#include "amcl/fusion.hpp"

#include <algorithm>
#include <numeric>

#include "amcl/errors.hpp"

namespace amcl {
namespace {

enum Param : std::size_t { kProjWeight, kProjBias, kSqueezeWeight, kSqueezeBias, kExpandWeight, kExpandBias };

}  // namespace

void FusionConfig::validate() const {
  if (members == 0) throw ConfigError("fusion needs at least one member");
  if (channels == 0) throw ConfigError("fusion channel count must be positive");
  if (reduction == 0) throw ConfigError("fusion reduction must be positive");
  if (!(residual_scale >= 0.0 && residual_scale <= 1.0)) throw ConfigError("residual scale must lie in [0, 1]");
}

FusionModule::FusionModule(FusionConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const std::size_t c = config_.channels;
  const std::size_t mc = config_.members * c;
  const std::size_t hidden = std::max<std::size_t>(1, c / config_.reduction);
  Shape proj_shape = config_.spatial ? Shape{c, mc, 1, 1} : Shape{c, mc};

  params_.push_back({"fusion.proj.weight", Tensor(proj_shape)});
  params_.push_back({"fusion.proj.bias", Tensor({c})});
  params_.push_back({"fusion.squeeze.weight", Tensor({hidden, c})});
  params_.push_back({"fusion.squeeze.bias", Tensor({hidden})});
  params_.push_back({"fusion.expand.weight", Tensor({c, hidden})});
  params_.push_back({"fusion.expand.bias", Tensor({c})});
  init_uniform_fan_in(params_[kSqueezeWeight].tensor, c, 1.4142135623730951, splitmix64(seed));
  init_uniform_fan_in(params_[kExpandWeight].tensor, hidden, 1.0, splitmix64(seed + 1));
  set_averaging_projection();
  for (auto& p : params_) p.tensor.enable_grad();
}

void FusionModule::set_identity_projection() {
  Tensor& w = params_[kProjWeight].tensor;
  const std::size_t c = config_.channels, mc = config_.members * c;
  std::fill(w.data().begin(), w.data().end(), 0.0);
  for (std::size_t o = 0; o < c; ++o) w[o * mc + o] = 1.0;
  std::fill(params_[kProjBias].tensor.data().begin(), params_[kProjBias].tensor.data().end(), 0.0);
}

void FusionModule::set_averaging_projection() {
  Tensor& w = params_[kProjWeight].tensor;
  const std::size_t c = config_.channels, mc = config_.members * c;
  std::fill(w.data().begin(), w.data().end(), 0.0);
  const double share = 1.0 / static_cast<double>(config_.members);
  for (std::size_t o = 0; o < c; ++o)
    for (std::size_t m = 0; m < config_.members; ++m) w[o * mc + m * c + o] = share;
  std::fill(params_[kProjBias].tensor.data().begin(), params_[kProjBias].tensor.data().end(), 0.0);
}

Var FusionModule::bind(Graph& g, std::size_t param, bool trainable) {
  Tensor& t = params_[param].tensor;
  if (trainable) return g.parameter(t);
  return g.input(Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end())));
}

Var FusionModule::fuse(Graph& g, std::span<const Var> taps, bool trainable) {
  if (taps.size() != config_.members)
    throw ConfigError("fusion expects " + std::to_string(config_.members) + " taps, got " +
                      std::to_string(taps.size()));
  const Shape& shape = g.value(taps[0]).shape();
  for (Var t : taps)
    if (g.value(t).shape() != shape)
      throw ConfigError("fusion taps must share one shape: " + shape_string(g.value(t).shape()) + " vs " +
                        shape_string(shape));
  const std::size_t rank = config_.spatial ? 4 : 2;
  if (shape.size() != rank || shape[1] != config_.channels)
    throw ConfigError("fusion tap " + shape_string(shape) + " does not match configured channels " +
                      std::to_string(config_.channels));

  Var stacked = taps.size() == 1 ? taps[0] : ops::concat(g, taps, 1);
  Var proj = config_.spatial
                 ? ops::conv2d(g, stacked, bind(g, kProjWeight, trainable), bind(g, kProjBias, trainable))
                 : ops::dense(g, stacked, bind(g, kProjWeight, trainable), bind(g, kProjBias, trainable));
  if (!config_.gate) return proj;

  Var pooled = ops::global_avg_pool(g, proj);
  Var squeeze = ops::relu(g, ops::dense(g, pooled, bind(g, kSqueezeWeight, trainable), bind(g, kSqueezeBias, trainable)));
  Var gate = ops::sigmoid(g, ops::dense(g, squeeze, bind(g, kExpandWeight, trainable), bind(g, kExpandBias, trainable)));
  return ops::channel_scale(g, proj, gate);
}

Var FusionModule::member_input(Graph& g, Var fused, Var own_tap) {
  if (config_.residual_scale == 0.0) return fused;
  Var residual = config_.residual_scale == 1.0 ? own_tap : ops::scale(g, own_tap, config_.residual_scale);
  return ops::add(g, fused, residual);
}

std::vector<Tensor*> FusionModule::parameter_ptrs() {
  std::vector<Tensor*> out;
  for (auto& p : params_) out.push_back(&p.tensor);
  return out;
}

std::uint64_t FusionModule::checksum() const noexcept {
  std::uint64_t h = 0;
  for (const auto& p : params_) h = splitmix64(h ^ p.tensor.checksum());
  return h;
}

FusionConfig fusion_config_for(const ArchitectureSpec& spec, std::size_t members) {
  FusionConfig cfg;
  cfg.members = members;
  cfg.channels = spec.widths.at(0);
  cfg.spatial = spec.kind == ArchKind::simple_cnn;
  return cfg;
}

std::size_t SharePlan::shared_rows() const {
  return static_cast<std::size_t>(std::count(shared.begin(), shared.end(), true));
}

SharePlan plan_feature_share(std::size_t members, std::size_t rows, double p_share, Rng& rng) {
  if (!(p_share >= 0.0 && p_share <= 1.0)) throw ConfigError("share probability must lie in [0, 1]");
  SharePlan plan;
  plan.source.assign(members, std::vector<std::size_t>(rows));
  plan.shared.assign(rows, false);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<std::size_t> perm(members);
  for (std::size_t r = 0; r < rows; ++r) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    if (coin(rng) < p_share) {
      plan.shared[r] = true;
      for (std::size_t i = members; i > 1; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(perm[i - 1], perm[pick(rng)]);
      }
    }
    for (std::size_t m = 0; m < members; ++m) plan.source[m][r] = perm[m];
  }
  return plan;
}

std::vector<Var> feature_share(Graph& g, std::span<const Var> taps, const SharePlan& plan) {
  if (plan.source.size() != taps.size()) throw ConfigError("share plan member count does not match taps");
  std::vector<Var> out;
  out.reserve(taps.size());
  for (std::size_t m = 0; m < taps.size(); ++m) out.push_back(ops::select_rows(g, taps, plan.source[m]));
  return out;
}

}  // namespace amcl
