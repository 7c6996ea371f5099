#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "amcl/autodiff.hpp"
#include "amcl/tensor.hpp"

namespace amcl {

enum class ArchKind { simple_cnn, mlp };

const char* arch_name(ArchKind kind) noexcept;
ArchKind parse_arch(const std::string& name);

/// Architecture of one ensemble member.
///
/// simple_cnn: conv3x3(widths[i]) + relu + maxpool2x2 per entry of `widths`,
/// then one fully-connected layer. The tap point is the first conv output,
/// right before the first pooling layer.
///
/// mlp: dense + relu per entry of `widths`, then the output layer. The tap
/// point is the first hidden activation.
struct ArchitectureSpec {
  ArchKind kind = ArchKind::mlp;
  Shape input_shape;                 // per example: {C, H, W} or {d}
  std::vector<std::size_t> widths;   // conv filters or hidden sizes
  std::size_t num_classes = 2;
  bool auxiliary_head = true;        // adds one trailing "not mine" logit

  std::size_t output_dim() const noexcept { return num_classes + (auxiliary_head ? 1 : 0); }
  /// Tap feature shape for a single example.
  Shape tap_shape() const;
  void validate() const;

  static ArchitectureSpec simple_cnn(Shape input_shape, std::size_t num_classes, bool auxiliary_head = true);
  static ArchitectureSpec mlp(std::size_t input_dim, std::size_t num_classes, std::vector<std::size_t> hidden = {32, 32},
                              bool auxiliary_head = true);
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class MemberModel {
 public:
  struct Forward {
    Var logits;
    Var tap;
  };

  MemberModel(ArchitectureSpec spec, std::size_t index, std::uint64_t seed);

  const ArchitectureSpec& spec() const noexcept { return spec_; }
  std::size_t index() const noexcept { return index_; }

  /// Input -> tap-point features. With `trainable` the parameters are bound
  /// as gradient-accumulating leaves, otherwise as constants.
  Var stem(Graph& g, Var input, bool trainable = true);
  /// Tap-point features -> logits [B, output_dim].
  Var head(Graph& g, Var tap, bool trainable = true);
  /// Full pass. When `injected` is given it replaces the member's own tap
  /// output for the rest of the network; the own tap is still returned.
  Forward forward(Graph& g, Var input, std::optional<Var> injected = std::nullopt, bool trainable = true);

  /// Softmax over the full head (aux slot included) for a batch [B, ...].
  Tensor predict_proba(const Tensor& batch) const;

  std::vector<NamedTensor>& parameters() noexcept { return params_; }
  const std::vector<NamedTensor>& parameters() const noexcept { return params_; }
  std::vector<Tensor*> parameter_ptrs();
  std::uint64_t checksum() const noexcept;

 private:
  Var bind(Graph& g, std::size_t param, bool trainable);
  void check_input(const Tensor& batch) const;

  ArchitectureSpec spec_;
  std::size_t index_;
  std::vector<NamedTensor> params_;
};

/// Member m draws its parameters from derive_seed(seed, m).
MemberModel build_member(const ArchitectureSpec& spec, std::size_t member_index, std::uint64_t seed);

/// Fan-in scaled uniform initialisation: U(-gain * sqrt(3 / fan_in), +...).
void init_uniform_fan_in(Tensor& t, std::size_t fan_in, double gain, std::uint64_t seed);

}  // namespace amcl
