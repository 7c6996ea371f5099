#include "amcl/model_zoo.hpp"

#include <algorithm>
#include <cmath>

#include "amcl/errors.hpp"
#include "amcl/rng.hpp"

namespace amcl {
namespace {

// He-style gain for relu layers; the output layer uses a reduced gain so
// fresh members start close to uniform.
constexpr double kReluGain = 1.4142135623730951;
constexpr double kHeadGain = 0.25;

}  // namespace

const char* arch_name(ArchKind kind) noexcept { return kind == ArchKind::simple_cnn ? "simple_cnn" : "mlp"; }

ArchKind parse_arch(const std::string& name) {
  if (name == "simple_cnn" || name == "cnn") return ArchKind::simple_cnn;
  if (name == "mlp") return ArchKind::mlp;
  throw ConfigError("unsupported architecture '" + name + "' (expected simple_cnn or mlp)");
}

Shape ArchitectureSpec::tap_shape() const {
  if (kind == ArchKind::simple_cnn) return {widths.at(0), input_shape.at(1), input_shape.at(2)};
  return {widths.at(0)};
}

void ArchitectureSpec::validate() const {
  if (num_classes < 2) throw ConfigError("need at least 2 classes");
  if (widths.empty()) throw ConfigError("architecture needs at least one hidden width");
  for (std::size_t w : widths)
    if (w == 0) throw ConfigError("layer widths must be positive");
  if (kind == ArchKind::simple_cnn) {
    if (input_shape.size() != 3) throw ConfigError("simple_cnn input shape must be {C, H, W}");
    const std::size_t div = std::size_t{1} << widths.size();
    if (input_shape[1] % div != 0 || input_shape[2] % div != 0)
      throw ConfigError("simple_cnn input " + shape_string(input_shape) + " must be divisible by " +
                        std::to_string(div) + " for " + std::to_string(widths.size()) + " pooling stages");
  } else {
    if (input_shape.size() != 1) throw ConfigError("mlp input shape must be {d}");
  }
  for (std::size_t e : input_shape)
    if (e == 0) throw ConfigError("input extents must be positive");
}

ArchitectureSpec ArchitectureSpec::simple_cnn(Shape input_shape, std::size_t num_classes, bool auxiliary_head) {
  return {ArchKind::simple_cnn, std::move(input_shape), {32, 64, 128}, num_classes, auxiliary_head};
}

ArchitectureSpec ArchitectureSpec::mlp(std::size_t input_dim, std::size_t num_classes, std::vector<std::size_t> hidden,
                                       bool auxiliary_head) {
  return {ArchKind::mlp, {input_dim}, std::move(hidden), num_classes, auxiliary_head};
}

void init_uniform_fan_in(Tensor& t, std::size_t fan_in, double gain, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = gain * std::sqrt(3.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data()) v = dist(rng);
}

MemberModel::MemberModel(ArchitectureSpec spec, std::size_t index, std::uint64_t seed)
    : spec_(std::move(spec)), index_(index) {
  spec_.validate();
  std::uint64_t layer_seed = seed;
  auto add = [&](std::string name, Shape shape, std::size_t fan_in, double gain) {
    Tensor w(std::move(shape));
    layer_seed = splitmix64(layer_seed);
    if (fan_in > 0) init_uniform_fan_in(w, fan_in, gain, layer_seed);
    w.enable_grad();
    params_.push_back({std::move(name), std::move(w)});
  };

  if (spec_.kind == ArchKind::simple_cnn) {
    std::size_t channels = spec_.input_shape[0];
    std::size_t h = spec_.input_shape[1], w = spec_.input_shape[2];
    for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
      const std::size_t filters = spec_.widths[i];
      const std::string prefix = "conv" + std::to_string(i + 1);
      add(prefix + ".weight", {filters, channels, 3, 3}, channels * 9, kReluGain);
      add(prefix + ".bias", {filters}, 0, 0.0);
      channels = filters;
      h /= 2;
      w /= 2;
    }
    const std::size_t flat = channels * h * w;
    add("fc.weight", {spec_.output_dim(), flat}, flat, kHeadGain);
    add("fc.bias", {spec_.output_dim()}, 0, 0.0);
  } else {
    std::size_t in = spec_.input_shape[0];
    for (std::size_t i = 0; i < spec_.widths.size(); ++i) {
      const std::string prefix = "hidden" + std::to_string(i + 1);
      add(prefix + ".weight", {spec_.widths[i], in}, in, kReluGain);
      add(prefix + ".bias", {spec_.widths[i]}, 0, 0.0);
      in = spec_.widths[i];
    }
    add("out.weight", {spec_.output_dim(), in}, in, kHeadGain);
    add("out.bias", {spec_.output_dim()}, 0, 0.0);
  }
}

Var MemberModel::bind(Graph& g, std::size_t param, bool trainable) {
  Tensor& t = params_[param].tensor;
  if (trainable) return g.parameter(t);
  return g.input(Tensor(t.shape(), std::vector<double>(t.data().begin(), t.data().end())));
}

void MemberModel::check_input(const Tensor& batch) const {
  if (batch.rank() != spec_.input_shape.size() + 1 ||
      !std::equal(spec_.input_shape.begin(), spec_.input_shape.end(), batch.shape().begin() + 1))
    throw ConfigError("member input " + shape_string(batch.shape()) + " does not match [B] + " +
                      shape_string(spec_.input_shape));
}

Var MemberModel::stem(Graph& g, Var input, bool trainable) {
  check_input(g.value(input));
  if (spec_.kind == ArchKind::simple_cnn)
    return ops::relu(g, ops::conv2d(g, input, bind(g, 0, trainable), bind(g, 1, trainable)));
  return ops::relu(g, ops::dense(g, input, bind(g, 0, trainable), bind(g, 1, trainable)));
}

Var MemberModel::head(Graph& g, Var tap, bool trainable) {
  const Tensor& t = g.value(tap);
  const Shape expected = spec_.tap_shape();
  if (t.rank() != expected.size() + 1 || !std::equal(expected.begin(), expected.end(), t.shape().begin() + 1))
    throw ConfigError("tap features " + shape_string(t.shape()) + " do not match [B] + " + shape_string(expected));

  std::size_t p = 2;
  Var x = tap;
  if (spec_.kind == ArchKind::simple_cnn) {
    x = ops::maxpool2x2(g, x);
    for (std::size_t i = 1; i < spec_.widths.size(); ++i) {
      x = ops::relu(g, ops::conv2d(g, x, bind(g, p, trainable), bind(g, p + 1, trainable)));
      x = ops::maxpool2x2(g, x);
      p += 2;
    }
    x = ops::flatten(g, x);
  } else {
    for (std::size_t i = 1; i < spec_.widths.size(); ++i) {
      x = ops::relu(g, ops::dense(g, x, bind(g, p, trainable), bind(g, p + 1, trainable)));
      p += 2;
    }
  }
  return ops::dense(g, x, bind(g, p, trainable), bind(g, p + 1, trainable));
}

MemberModel::Forward MemberModel::forward(Graph& g, Var input, std::optional<Var> injected, bool trainable) {
  Var tap = stem(g, input, trainable);
  if (injected && g.value(*injected).shape() != g.value(tap).shape())
    throw ConfigError("injected features " + shape_string(g.value(*injected).shape()) + " do not match tap " +
                      shape_string(g.value(tap).shape()));
  Var logits = head(g, injected ? *injected : tap, trainable);
  return {logits, tap};
}

Tensor MemberModel::predict_proba(const Tensor& batch) const {
  Graph g;
  // Non-trainable binding copies parameters and never mutates the model.
  auto& self = const_cast<MemberModel&>(*this);
  Var in = g.input(batch);
  Var logits = self.forward(g, in, std::nullopt, false).logits;
  return g.value(ops::softmax(g, logits, 1));
}

std::vector<Tensor*> MemberModel::parameter_ptrs() {
  std::vector<Tensor*> out;
  for (auto& p : params_) out.push_back(&p.tensor);
  return out;
}

std::uint64_t MemberModel::checksum() const noexcept {
  std::uint64_t h = 0;
  for (const auto& p : params_) h = splitmix64(h ^ p.tensor.checksum());
  return h;
}

MemberModel build_member(const ArchitectureSpec& spec, std::size_t member_index, std::uint64_t seed) {
  return MemberModel(spec, member_index, derive_seed(seed, member_index));
}

}  // namespace amcl
