#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace amcl {

/// Max-subtracted softmax of a single logit vector.
std::vector<double> softmax(std::span<const double> logits);

/// One-hot vector of length `size` with `hot` set.
std::vector<double> one_hot(std::size_t hot, std::size_t size);

/// -log p[t] with p clamped to [kProbabilityFloor, 1]; `target` must be one-hot.
double cross_entropy_onehot(std::span<const double> p, std::span<const double> target);

/// KL(target || p) for a one-hot target. Reduces to -log p[hot].
double kl_to_onehot(std::span<const double> target, std::span<const double> p);

/// KL(uniform || p) = sum_i (1/C) log((1/C) / p_i), p clamped at the floor.
double kl_uniform_to(std::span<const double> p);

/// -log(max(p, floor)).
double neg_log_clamped(double p);

std::size_t argmax(std::span<const double> values);

}  // namespace amcl
