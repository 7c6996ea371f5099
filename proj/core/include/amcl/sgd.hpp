#pragma once

#include <span>
#include <vector>

#include "amcl/tensor.hpp"

namespace amcl {

struct SgdConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;

  void validate() const;
};

/// Heavy-ball SGD:
///   buf   <- momentum * buf + (grad + weight_decay * param)
///   param <- param - learning_rate * buf
/// Momentum buffers are bound to parameter position, so the same parameter
/// list must be passed on every step.
class Sgd {
 public:
  explicit Sgd(SgdConfig config);

  void step(std::span<Tensor* const> params);
  const SgdConfig& config() const noexcept { return config_; }
  void reset() { buffers_.clear(); }

 private:
  SgdConfig config_;
  std::vector<std::vector<double>> buffers_;
};

}  // namespace amcl
