#include "amcl/probability.hpp"

#include <algorithm>
#include <cmath>

#include "amcl/autodiff.hpp"
#include "amcl/errors.hpp"

namespace amcl {
namespace {

std::size_t hot_index(std::span<const double> target) {
  std::size_t hot = target.size();
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i] == 1.0) {
      if (hot != target.size()) throw InputError("target has more than one hot entry");
      hot = i;
    } else if (target[i] != 0.0) {
      throw InputError("target is not one-hot");
    }
  }
  if (hot == target.size()) throw InputError("target has no hot entry");
  return hot;
}

}  // namespace

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ConfigError("softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

std::vector<double> one_hot(std::size_t hot, std::size_t size) {
  if (hot >= size) throw InputError("one-hot index " + std::to_string(hot) + " out of range " + std::to_string(size));
  std::vector<double> v(size, 0.0);
  v[hot] = 1.0;
  return v;
}

double neg_log_clamped(double p) { return -std::log(std::max(p, kProbabilityFloor)); }

double cross_entropy_onehot(std::span<const double> p, std::span<const double> target) {
  if (p.size() != target.size())
    throw ConfigError("cross entropy: length mismatch " + std::to_string(p.size()) + " vs " +
                      std::to_string(target.size()));
  return neg_log_clamped(p[hot_index(target)]);
}

double kl_to_onehot(std::span<const double> target, std::span<const double> p) {
  // sum_i t_i log(t_i / p_i) with 0 log 0 = 0 leaves only the hot term.
  return cross_entropy_onehot(p, target);
}

double kl_uniform_to(std::span<const double> p) {
  if (p.empty()) throw ConfigError("KL to uniform of an empty vector");
  const double u = 1.0 / static_cast<double>(p.size());
  const double log_u = std::log(u);
  double kl = 0.0;
  for (double pi : p) kl += u * (log_u + neg_log_clamped(pi));
  return std::max(kl, 0.0);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ConfigError("argmax of an empty vector");
  return static_cast<std::size_t>(std::max_element(values.begin(), values.end()) - values.begin());
}

}  // namespace amcl
