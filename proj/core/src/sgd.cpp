#include "amcl/sgd.hpp"

#include <string>

#include "amcl/errors.hpp"

namespace amcl {

void SgdConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be non-negative");
}

Sgd::Sgd(SgdConfig config) : config_(config) { config_.validate(); }

void Sgd::step(std::span<Tensor* const> params) {
  if (buffers_.empty()) {
    buffers_.reserve(params.size());
    for (const Tensor* p : params) buffers_.emplace_back(p->size(), 0.0);
  }
  if (buffers_.size() != params.size()) throw StateError("parameter list changed between SGD steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (!p.has_grad()) throw StateError("SGD step on parameter " + std::to_string(i) + " without a gradient");
    if (buffers_[i].size() != p.size()) throw StateError("parameter size changed between SGD steps");
    auto data = p.data();
    auto grad = p.grad();
    auto& buf = buffers_[i];
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double d = grad[k] + config_.weight_decay * data[k];
      buf[k] = config_.momentum * buf[k] + d;
      data[k] -= config_.learning_rate * buf[k];
    }
  }
}

}  // namespace amcl
