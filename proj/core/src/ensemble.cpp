#include "amcl/ensemble.hpp"

#include <algorithm>
#include <numeric>

#include "amcl/errors.hpp"

namespace amcl {

const char* method_name(Method method) noexcept {
  switch (method) {
    case Method::ie: return "ie";
    case Method::smcl: return "smcl";
    case Method::cmcl: return "cmcl";
    case Method::amcl: return "amcl";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "ie") return Method::ie;
  if (name == "smcl") return Method::smcl;
  if (name == "cmcl") return Method::cmcl;
  if (name == "amcl") return Method::amcl;
  throw ConfigError("unknown method '" + name + "' (expected ie, smcl, cmcl or amcl)");
}

const char* fusion_name(FusionKind kind) noexcept {
  switch (kind) {
    case FusionKind::none: return "none";
    case FusionKind::module: return "module";
    case FusionKind::share: return "share";
  }
  return "unknown";
}

FusionKind parse_fusion(const std::string& name) {
  if (name == "none") return FusionKind::none;
  if (name == "module" || name == "fusion_module") return FusionKind::module;
  if (name == "share" || name == "feature_share") return FusionKind::share;
  throw ConfigError("unknown fusion '" + name + "' (expected none, module or share)");
}

bool uses_auxiliary_head(Method method) noexcept { return method == Method::amcl; }

void EnsembleConfig::validate() const {
  if (members < 1) throw ConfigError("ensemble needs at least one member");
  arch.validate();
  penalty.validate(members);
  if (arch.auxiliary_head != uses_auxiliary_head(method))
    throw ConfigError(std::string("method ") + method_name(method) +
                      (uses_auxiliary_head(method) ? " needs" : " must not have") + " an auxiliary head");
  if (method == Method::amcl && penalty.threshold_epochs == 0)
    throw StateError("amcl needs at least one loss-based epoch before specialization can be fixed");
  if (fusion != FusionKind::none && members < 2) throw ConfigError("feature fusion needs at least 2 members");
  if (!(share_probability >= 0.0 && share_probability <= 1.0))
    throw ConfigError("share probability must lie in [0, 1]");
}

EnsembleState EnsembleState::create(EnsembleConfig config) {
  config.validate();
  EnsembleState state;
  state.members.reserve(config.members);
  for (std::size_t m = 0; m < config.members; ++m) state.members.push_back(build_member(config.arch, m, config.seed));
  if (config.fusion == FusionKind::module)
    state.fusion.emplace(fusion_config_for(config.arch, config.members), derive_seed(config.seed, kFusionStream));
  state.counter = AssignmentCounter(config.num_classes(), config.members);
  state.config = std::move(config);
  return state;
}

Tensor EnsembleState::predict(const Tensor& raw) const {
  // Image examples are flattened for mlp members.
  const Shape& in_shape = config.arch.input_shape;
  Tensor batch = raw;
  if (raw.rank() != in_shape.size() + 1) {
    Shape flat{raw.dim(0)};
    flat.insert(flat.end(), in_shape.begin(), in_shape.end());
    batch = raw.reshaped(flat);
  }
  const std::size_t m_count = members.size();
  const std::size_t slots = config.arch.output_dim();
  const std::size_t b_count = batch.dim(0);
  Tensor out({b_count, m_count, slots});
  auto scatter = [&](std::size_t m, const Tensor& p) {
    for (std::size_t b = 0; b < b_count; ++b)
      std::copy_n(p.data().begin() + static_cast<std::ptrdiff_t>(b * slots), slots,
                  out.data().begin() + static_cast<std::ptrdiff_t>((b * m_count + m) * slots));
  };
  if (!fusion) {
    for (std::size_t m = 0; m < m_count; ++m) scatter(m, members[m].predict_proba(batch));
    return out;
  }
  // Parameters are bound as constants, so the const_casts never mutate.
  auto& self = const_cast<EnsembleState&>(*this);
  Graph g;
  Var in = g.input(batch);
  std::vector<Var> taps;
  for (auto& member : self.members) taps.push_back(member.stem(g, in, false));
  Var fused = self.fusion->fuse(g, taps, false);
  for (std::size_t m = 0; m < m_count; ++m) {
    Var x = self.fusion->member_input(g, fused, taps[m]);
    Var p = ops::softmax(g, self.members[m].head(g, x, false), 1);
    scatter(m, g.value(p));
  }
  return out;
}

Tensor EnsembleState::predict(const LabeledDataset& data, std::size_t chunk) const {
  if (data.size() == 0) throw InputError("cannot predict on an empty dataset");
  chunk = std::max<std::size_t>(1, chunk);
  const std::size_t m_count = members.size(), slots = config.arch.output_dim();
  Tensor out({data.size(), m_count, slots});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t n = std::min(chunk, data.size() - start);
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), start);
    Tensor part = predict(data.batch(idx));
    std::copy(part.data().begin(), part.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(start * m_count * slots));
  }
  return out;
}

std::vector<Tensor*> EnsembleState::parameter_ptrs() {
  std::vector<Tensor*> out;
  for (auto& member : members)
    for (Tensor* t : member.parameter_ptrs()) out.push_back(t);
  if (fusion)
    for (Tensor* t : fusion->parameter_ptrs()) out.push_back(t);
  return out;
}

std::uint64_t EnsembleState::checksum() const noexcept {
  std::uint64_t h = 0;
  for (const auto& member : members) h = splitmix64(h ^ member.checksum());
  if (fusion) h = splitmix64(h ^ fusion->checksum());
  return h;
}

}  // namespace amcl
