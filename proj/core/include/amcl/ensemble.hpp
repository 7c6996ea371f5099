#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amcl/dataset.hpp"
#include "amcl/fusion.hpp"
#include "amcl/mcl_losses.hpp"
#include "amcl/model_zoo.hpp"

namespace amcl {

enum class Method { ie, smcl, cmcl, amcl };
enum class FusionKind { none, module, share };

const char* method_name(Method method) noexcept;
Method parse_method(const std::string& name);
const char* fusion_name(FusionKind kind) noexcept;
FusionKind parse_fusion(const std::string& name);

/// Only AMCL heads carry the auxiliary slot.
bool uses_auxiliary_head(Method method) noexcept;

struct EnsembleConfig {
  Method method = Method::amcl;
  std::size_t members = 2;
  ArchitectureSpec arch;  // arch.auxiliary_head must agree with the method
  PenaltyConfig penalty;
  FusionKind fusion = FusionKind::none;
  double share_probability = 0.5;
  std::uint64_t seed = 1;

  std::size_t num_classes() const noexcept { return arch.num_classes; }
  void validate() const;
};

/// Members plus everything training accumulates about them.
struct EnsembleState {
  EnsembleConfig config;
  std::vector<MemberModel> members;
  std::optional<FusionModule> fusion;  // present only for FusionKind::module
  AssignmentCounter counter;
  SpecializationMatrix specialization;
  std::size_t epochs_completed = 0;

  /// Fresh, seeded ensemble. Member m is initialised from derive_seed(seed, m).
  static EnsembleState create(EnsembleConfig config);

  /// Per-member probabilities over the full head, [B, M, output_dim].
  /// Feature sharing is a training-time perturbation and is not applied.
  Tensor predict(const Tensor& batch) const;
  /// predict() over a whole dataset in chunks of `chunk` examples.
  Tensor predict(const LabeledDataset& data, std::size_t chunk = 256) const;

  std::vector<Tensor*> parameter_ptrs();
  std::uint64_t checksum() const noexcept;
};

}  // namespace amcl
