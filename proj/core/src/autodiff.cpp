#include "amcl/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <memory>

#include <Eigen/Core>

#include "amcl/errors.hpp"

namespace amcl {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

std::atomic<std::uint64_t> next_generation{1};

void check_finite(const Tensor& t, const char* op) {
  t.require_finite(std::string("input to ") + op);
}

void expect_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw ConfigError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                      shape_string(t.shape()));
}

void add_into(std::vector<double>& dst, std::span<const double> src) {
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

}  // namespace

const char* op_name(OpKind kind) noexcept {
  switch (kind) {
    case OpKind::input: return "input";
    case OpKind::parameter: return "parameter";
    case OpKind::dense: return "dense";
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::maxpool2x2: return "maxpool2x2";
    case OpKind::softmax: return "softmax";
    case OpKind::softmax_cross_entropy: return "softmax_cross_entropy";
    case OpKind::neg_log_clamped: return "neg_log_clamped";
    case OpKind::sum: return "sum";
    case OpKind::weighted_sum: return "weighted_sum";
    case OpKind::add: return "add";
    case OpKind::scale: return "scale";
    case OpKind::mul: return "mul";
    case OpKind::sigmoid: return "sigmoid";
    case OpKind::concat: return "concat";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::channel_scale: return "channel_scale";
    case OpKind::flatten: return "flatten";
    case OpKind::select_rows: return "select_rows";
  }
  return "unknown";
}

Graph::Graph() : generation_(next_generation.fetch_add(1)) {}

Var Graph::input(Tensor value, bool requires_grad) {
  Node node{OpKind::input, {}, std::move(value), {}, nullptr, nullptr, requires_grad};
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1, generation_};
}

Var Graph::parameter(Tensor& param) {
  param.enable_grad();
  Tensor value(param.shape(), std::vector<double>(param.data().begin(), param.data().end()));
  Node node{OpKind::parameter, {}, std::move(value), {}, nullptr, &param, true};
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1, generation_};
}

std::size_t Graph::resolve(Var v) const {
  if (v.generation != generation_ || v.id >= nodes_.size())
    throw StateError("variable does not belong to this graph (cleared or foreign graph)");
  return v.id;
}

const Tensor& Graph::value(Var v) const { return nodes_[resolve(v)].value; }

std::span<const double> Graph::grad(Var v) const { return nodes_[resolve(v)].grad; }

bool Graph::requires_grad(Var v) const { return nodes_[resolve(v)].requires_grad; }

OpKind Graph::kind(Var v) const { return nodes_[resolve(v)].kind; }

std::span<const std::size_t> Graph::inputs(Var v) const { return nodes_[resolve(v)].inputs; }

std::vector<double>& Graph::node_grad(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty()) node.grad.assign(node.value.size(), 0.0);
  return node.grad;
}

Var Graph::record(OpKind kind, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
  bool rg = std::any_of(inputs.begin(), inputs.end(), [this](std::size_t i) { return nodes_[i].requires_grad; });
  Node node{kind, std::move(inputs), std::move(value), {}, rg ? std::move(backward) : nullptr, nullptr, rg};
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1, generation_};
}

void Graph::backward(Var loss) {
  const std::size_t root = resolve(loss);
  if (nodes_[root].value.size() != 1)
    throw ConfigError("backward requires a scalar loss, got " + shape_string(nodes_[root].value.shape()));
  for (auto& node : nodes_) node.grad.clear();
  if (!nodes_[root].requires_grad) return;
  node_grad(root)[0] = 1.0;
  for (std::size_t i = root + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backward) node.backward(*this, i);
    if (node.param) {
      auto pg = node.param->grad();
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += node.grad[k];
    }
  }
}

void Graph::clear() {
  nodes_.clear();
  generation_ = next_generation.fetch_add(1);
}

namespace ops {

Var dense(Graph& g, Var x, Var w, Var b) {
  const std::size_t xi = g.resolve(x), wi = g.resolve(w), bi = g.resolve(b);
  const Tensor& X = g.node_value(xi);
  const Tensor& W = g.node_value(wi);
  const Tensor& Bv = g.node_value(bi);
  expect_rank(X, 2, "dense", "input");
  expect_rank(W, 2, "dense", "weight");
  expect_rank(Bv, 1, "dense", "bias");
  const std::size_t batch = X.dim(0), in = X.dim(1), out = W.dim(0);
  if (W.dim(1) != in || Bv.dim(0) != out)
    throw ConfigError("dense: shapes do not conform: x " + shape_string(X.shape()) + ", W " +
                      shape_string(W.shape()) + ", b " + shape_string(Bv.shape()));
  check_finite(X, "dense");

  Tensor Y({batch, out});
  ConstMatrixMap xm(X.data().data(), batch, in);
  ConstMatrixMap wm(W.data().data(), out, in);
  MatrixMap ym(Y.data().data(), batch, out);
  ym.noalias() = xm * wm.transpose();
  for (std::size_t r = 0; r < batch; ++r)
    for (std::size_t c = 0; c < out; ++c) ym(r, c) += Bv[c];

  return g.record(OpKind::dense, {xi, wi, bi}, std::move(Y), [=](Graph& gr, std::size_t self) {
    ConstMatrixMap gy(gr.node_grad(self).data(), batch, out);
    if (gr.node_requires_grad(xi)) {
      MatrixMap gx(gr.node_grad(xi).data(), batch, in);
      gx.noalias() += gy * ConstMatrixMap(gr.node_value(wi).data().data(), out, in);
    }
    if (gr.node_requires_grad(wi)) {
      MatrixMap gw(gr.node_grad(wi).data(), out, in);
      gw.noalias() += gy.transpose() * ConstMatrixMap(gr.node_value(xi).data().data(), batch, in);
    }
    if (gr.node_requires_grad(bi)) {
      auto& gb = gr.node_grad(bi);
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t c = 0; c < out; ++c) gb[c] += gy(r, c);
    }
  });
}

Var conv2d(Graph& g, Var x, Var w, Var b, std::size_t stride, std::optional<std::size_t> pad) {
  const std::size_t xi = g.resolve(x), wi = g.resolve(w), bi = g.resolve(b);
  const Tensor& X = g.node_value(xi);
  const Tensor& W = g.node_value(wi);
  const Tensor& Bv = g.node_value(bi);
  expect_rank(X, 4, "conv2d", "input");
  expect_rank(W, 4, "conv2d", "kernel");
  expect_rank(Bv, 1, "conv2d", "bias");
  const std::size_t batch = X.dim(0), channels = X.dim(1), height = X.dim(2), width = X.dim(3);
  const std::size_t filters = W.dim(0), k = W.dim(2);
  if (W.dim(1) != channels)
    throw ConfigError("conv2d: kernel expects " + std::to_string(W.dim(1)) + " input channels, got " +
                      std::to_string(channels));
  if (W.dim(3) != k || k % 2 == 0) throw ConfigError("conv2d: kernel must be square with odd extent");
  if (Bv.dim(0) != filters) throw ConfigError("conv2d: bias length must equal filter count");
  const std::size_t same = (k - 1) / 2;
  if (stride != 1) throw ConfigError("conv2d: only stride 1 is supported");
  if (pad && *pad != same) throw ConfigError("conv2d: only 'same' zero padding is supported");
  check_finite(X, "conv2d");

  const std::size_t hw = height * width;
  const std::size_t patch = channels * k * k;
  const std::size_t cols = batch * hw;
  auto col = std::make_shared<std::vector<double>>(patch * cols, 0.0);
  const double* xd = X.data().data();
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        double* row = col->data() + ((c * k + ky) * k + kx) * cols;
        for (std::size_t n = 0; n < batch; ++n) {
          const double* plane = xd + (n * channels + c) * hw;
          for (std::size_t y = 0; y < height; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(same);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
            for (std::size_t xx = 0; xx < width; ++xx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - static_cast<std::ptrdiff_t>(same);
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
              row[n * hw + y * width + xx] = plane[sy * width + sx];
            }
          }
        }
      }

  RowMatrix om = ConstMatrixMap(W.data().data(), filters, patch) * ConstMatrixMap(col->data(), patch, cols);
  Tensor Y({batch, filters, height, width});
  double* yd = Y.data().data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < filters; ++o) {
      const double bias = Bv[o];
      const double* src = om.data() + o * cols + n * hw;
      double* dst = yd + (n * filters + o) * hw;
      for (std::size_t p = 0; p < hw; ++p) dst[p] = src[p] + bias;
    }

  return g.record(OpKind::conv2d, {xi, wi, bi}, std::move(Y), [=](Graph& gr, std::size_t self) {
    const auto& gyv = gr.node_grad(self);
    RowMatrix dy(filters, cols);
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < filters; ++o) {
        const double* src = gyv.data() + (n * filters + o) * hw;
        std::copy(src, src + hw, dy.data() + o * cols + n * hw);
      }
    if (gr.node_requires_grad(wi)) {
      MatrixMap gw(gr.node_grad(wi).data(), filters, patch);
      gw.noalias() += dy * ConstMatrixMap(col->data(), patch, cols).transpose();
    }
    if (gr.node_requires_grad(bi)) {
      auto& gb = gr.node_grad(bi);
      for (std::size_t o = 0; o < filters; ++o) gb[o] += dy.row(o).sum();
    }
    if (gr.node_requires_grad(xi)) {
      RowMatrix dcol = ConstMatrixMap(gr.node_value(wi).data().data(), filters, patch).transpose() * dy;
      double* gx = gr.node_grad(xi).data();
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double* row = dcol.data() + ((c * k + ky) * k + kx) * cols;
            for (std::size_t n = 0; n < batch; ++n) {
              double* plane = gx + (n * channels + c) * hw;
              for (std::size_t y = 0; y < height; ++y) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - static_cast<std::ptrdiff_t>(same);
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(height)) continue;
                for (std::size_t xx = 0; xx < width; ++xx) {
                  const std::ptrdiff_t sx =
                      static_cast<std::ptrdiff_t>(xx + kx) - static_cast<std::ptrdiff_t>(same);
                  if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(width)) continue;
                  plane[sy * width + sx] += row[n * hw + y * width + xx];
                }
              }
            }
          }
    }
  });
}

Var relu(Graph& g, Var x) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  check_finite(X, "relu");
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) Y[i] = X[i] > 0.0 ? X[i] : 0.0;
  return g.record(OpKind::relu, {xi}, std::move(Y), [xi](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    const Tensor& Xv = gr.node_value(xi);
    auto& gx = gr.node_grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (Xv[i] > 0.0) gx[i] += gy[i];
  });
}

Var sigmoid(Graph& g, Var x) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  check_finite(X, "sigmoid");
  Tensor Y(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) {
    const double v = X[i];
    Y[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return g.record(OpKind::sigmoid, {xi}, std::move(Y), [xi](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    const Tensor& Yv = gr.node_value(self);
    auto& gx = gr.node_grad(xi);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * Yv[i] * (1.0 - Yv[i]);
  });
}

Var maxpool2x2(Graph& g, Var x) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  expect_rank(X, 4, "maxpool2x2", "input");
  check_finite(X, "maxpool2x2");
  const std::size_t planes = X.dim(0) * X.dim(1), height = X.dim(2), width = X.dim(3);
  const std::size_t oh = height / 2, ow = width / 2;
  if (oh == 0 || ow == 0) throw ConfigError("maxpool2x2: spatial extent too small " + shape_string(X.shape()));
  Tensor Y({X.dim(0), X.dim(1), oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(Y.size());
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = p * height * width + (2 * y) * width + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = p * height * width + (2 * y + dy) * width + 2 * xx + dx;
            if (X[idx] > X[best]) best = idx;
          }
        const std::size_t o = (p * oh + y) * ow + xx;
        Y[o] = X[best];
        (*argmax)[o] = best;
      }
  return g.record(OpKind::maxpool2x2, {xi}, std::move(Y), [xi, argmax](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    auto& gx = gr.node_grad(xi);
    for (std::size_t o = 0; o < gy.size(); ++o) gx[(*argmax)[o]] += gy[o];
  });
}

Var softmax(Graph& g, Var x, std::size_t axis) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  if (axis >= X.rank()) throw ConfigError("softmax: axis out of range for " + shape_string(X.shape()));
  check_finite(X, "softmax");
  std::size_t outer = 1, inner = 1;
  for (std::size_t a = 0; a < axis; ++a) outer *= X.dim(a);
  for (std::size_t a = axis + 1; a < X.rank(); ++a) inner *= X.dim(a);
  const std::size_t n = X.dim(axis);
  Tensor Y(X.shape());
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, X[base + j * inner]);
      double total = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double e = std::exp(X[base + j * inner] - mx);
        Y[base + j * inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < n; ++j) Y[base + j * inner] /= total;
    }
  return g.record(OpKind::softmax, {xi}, std::move(Y), [=](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    const Tensor& Yv = gr.node_value(self);
    auto& gx = gr.node_grad(xi);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t i = 0; i < inner; ++i) {
        const std::size_t base = o * n * inner + i;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += gy[base + j * inner] * Yv[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t idx = base + j * inner;
          gx[idx] += Yv[idx] * (gy[idx] - dot);
        }
      }
  });
}

Var softmax_cross_entropy(Graph& g, Var logits, const Tensor& weights) {
  const std::size_t zi = g.resolve(logits);
  const Tensor& Z = g.node_value(zi);
  expect_rank(Z, 2, "softmax_cross_entropy", "logits");
  if (weights.shape() != Z.shape())
    throw ConfigError("softmax_cross_entropy: weights " + shape_string(weights.shape()) + " do not match logits " +
                      shape_string(Z.shape()));
  check_finite(Z, "softmax_cross_entropy");
  const std::size_t batch = Z.dim(0), classes = Z.dim(1);
  const double cap = -std::log(kProbabilityFloor);
  auto probs = std::make_shared<std::vector<double>>(Z.size());
  auto active_weight = std::make_shared<std::vector<double>>(Z.size());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* z = Z.data().data() + b * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, z[c]);
    double s = 0.0;
    for (std::size_t c = 0; c < classes; ++c) s += std::exp(z[c] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t c = 0; c < classes; ++c) {
      const std::size_t idx = b * classes + c;
      const double nll = lse - z[c];
      (*probs)[idx] = std::exp(-nll);
      const double w = weights[idx];
      if (w == 0.0) continue;
      if (nll < cap) {
        total += w * nll;
        (*active_weight)[idx] = w;
      } else {
        total += w * cap;
      }
    }
  }
  Tensor Y({1}, std::vector<double>{total});
  return g.record(OpKind::softmax_cross_entropy, {zi}, std::move(Y), [=](Graph& gr, std::size_t self) {
    const double gy = gr.node_grad(self)[0];
    auto& gz = gr.node_grad(zi);
    for (std::size_t b = 0; b < batch; ++b) {
      double wsum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) wsum += (*active_weight)[b * classes + c];
      if (wsum == 0.0) continue;
      for (std::size_t c = 0; c < classes; ++c) {
        const std::size_t idx = b * classes + c;
        gz[idx] += gy * ((*probs)[idx] * wsum - (*active_weight)[idx]);
      }
    }
  });
}

Var neg_log_clamped(Graph& g, Var p) {
  const std::size_t pi = g.resolve(p);
  const Tensor& P = g.node_value(pi);
  check_finite(P, "neg_log_clamped");
  Tensor Y(P.shape());
  for (std::size_t i = 0; i < P.size(); ++i) Y[i] = -std::log(std::max(P[i], kProbabilityFloor));
  return g.record(OpKind::neg_log_clamped, {pi}, std::move(Y), [pi](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    const Tensor& Pv = gr.node_value(pi);
    auto& gp = gr.node_grad(pi);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (Pv[i] > kProbabilityFloor) gp[i] -= gy[i] / Pv[i];
  });
}

Var sum(Graph& g, Var x) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  double total = 0.0;
  for (double v : X.data()) total += v;
  return g.record(OpKind::sum, {xi}, Tensor({1}, std::vector<double>{total}), [xi](Graph& gr, std::size_t self) {
    const double gy = gr.node_grad(self)[0];
    for (double& v : gr.node_grad(xi)) v += gy;
  });
}

Var weighted_sum(Graph& g, Var x, const Tensor& weights) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  if (weights.shape() != X.shape())
    throw ConfigError("weighted_sum: weights " + shape_string(weights.shape()) + " do not match " +
                      shape_string(X.shape()));
  double total = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i)
    if (weights[i] != 0.0) total += weights[i] * X[i];
  auto w = std::make_shared<Tensor>(weights);
  return g.record(OpKind::weighted_sum, {xi}, Tensor({1}, std::vector<double>{total}),
                  [xi, w](Graph& gr, std::size_t self) {
                    const double gy = gr.node_grad(self)[0];
                    auto& gx = gr.node_grad(xi);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gy * (*w)[i];
                  });
}

Var add(Graph& g, Var a, Var b) {
  const std::size_t ai = g.resolve(a), bi = g.resolve(b);
  const Tensor& A = g.node_value(ai);
  const Tensor& B = g.node_value(bi);
  if (A.shape() != B.shape())
    throw ConfigError("add: shapes differ " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] + B[i];
  return g.record(OpKind::add, {ai, bi}, std::move(Y), [ai, bi](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    if (gr.node_requires_grad(ai)) add_into(gr.node_grad(ai), gy);
    if (gr.node_requires_grad(bi)) add_into(gr.node_grad(bi), gy);
  });
}

Var scale(Graph& g, Var a, double factor) {
  const std::size_t ai = g.resolve(a);
  const Tensor& A = g.node_value(ai);
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] * factor;
  return g.record(OpKind::scale, {ai}, std::move(Y), [ai, factor](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    auto& ga = gr.node_grad(ai);
    for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * factor;
  });
}

Var mul(Graph& g, Var a, Var b) {
  const std::size_t ai = g.resolve(a), bi = g.resolve(b);
  const Tensor& A = g.node_value(ai);
  const Tensor& B = g.node_value(bi);
  if (A.shape() != B.shape())
    throw ConfigError("mul: shapes differ " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  Tensor Y(A.shape());
  for (std::size_t i = 0; i < A.size(); ++i) Y[i] = A[i] * B[i];
  return g.record(OpKind::mul, {ai, bi}, std::move(Y), [ai, bi](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    const Tensor& Av = gr.node_value(ai);
    const Tensor& Bv = gr.node_value(bi);
    if (gr.node_requires_grad(ai)) {
      auto& ga = gr.node_grad(ai);
      for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * Bv[i];
    }
    if (gr.node_requires_grad(bi)) {
      auto& gb = gr.node_grad(bi);
      for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * Av[i];
    }
  });
}

Var concat(Graph& g, std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ConfigError("concat: no inputs");
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (Var v : parts) ids.push_back(g.resolve(v));
  const Tensor& first = g.node_value(ids[0]);
  if (axis >= first.rank()) throw ConfigError("concat: axis out of range");
  std::size_t outer = 1, inner = 1, total_axis = 0;
  for (std::size_t a = 0; a < axis; ++a) outer *= first.dim(a);
  for (std::size_t a = axis + 1; a < first.rank(); ++a) inner *= first.dim(a);
  std::vector<std::size_t> extents;
  for (std::size_t id : ids) {
    const Tensor& t = g.node_value(id);
    if (t.rank() != first.rank()) throw ConfigError("concat: rank mismatch");
    for (std::size_t a = 0; a < t.rank(); ++a)
      if (a != axis && t.dim(a) != first.dim(a))
        throw ConfigError("concat: shape mismatch " + shape_string(t.shape()) + " vs " + shape_string(first.shape()));
    extents.push_back(t.dim(axis));
    total_axis += t.dim(axis);
  }
  Shape shape = first.shape();
  shape[axis] = total_axis;
  Tensor Y(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t offset = o * total_axis * inner;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      const std::size_t chunk = extents[p] * inner;
      const double* src = g.node_value(ids[p]).data().data() + o * chunk;
      std::copy(src, src + chunk, Y.data().data() + offset);
      offset += chunk;
    }
  }
  return g.record(OpKind::concat, ids, std::move(Y), [=](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    for (std::size_t o = 0; o < outer; ++o) {
      std::size_t offset = o * total_axis * inner;
      for (std::size_t p = 0; p < ids.size(); ++p) {
        const std::size_t chunk = extents[p] * inner;
        if (gr.node_requires_grad(ids[p])) {
          auto& gp = gr.node_grad(ids[p]);
          for (std::size_t i = 0; i < chunk; ++i) gp[o * chunk + i] += gy[offset + i];
        }
        offset += chunk;
      }
    }
  });
}

Var global_avg_pool(Graph& g, Var x) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  if (X.rank() != 2 && X.rank() != 4)
    throw ConfigError("global_avg_pool: expected rank 2 or 4, got " + shape_string(X.shape()));
  const std::size_t batch = X.dim(0), channels = X.dim(1);
  const std::size_t spatial = X.rank() == 4 ? X.dim(2) * X.dim(3) : 1;
  Tensor Y({batch, channels});
  for (std::size_t p = 0; p < batch * channels; ++p) {
    double s = 0.0;
    for (std::size_t i = 0; i < spatial; ++i) s += X[p * spatial + i];
    Y[p] = s / static_cast<double>(spatial);
  }
  return g.record(OpKind::global_avg_pool, {xi}, std::move(Y), [=](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    auto& gx = gr.node_grad(xi);
    const double inv = 1.0 / static_cast<double>(spatial);
    for (std::size_t p = 0; p < batch * channels; ++p)
      for (std::size_t i = 0; i < spatial; ++i) gx[p * spatial + i] += gy[p] * inv;
  });
}

Var channel_scale(Graph& g, Var x, Var gate) {
  const std::size_t xi = g.resolve(x), gi = g.resolve(gate);
  const Tensor& X = g.node_value(xi);
  const Tensor& G = g.node_value(gi);
  if (X.rank() < 2 || G.rank() != 2 || G.dim(0) != X.dim(0) || G.dim(1) != X.dim(1))
    throw ConfigError("channel_scale: gate " + shape_string(G.shape()) + " does not match " +
                      shape_string(X.shape()));
  const std::size_t pairs = G.size();
  const std::size_t spatial = X.size() / pairs;
  Tensor Y(X.shape());
  for (std::size_t p = 0; p < pairs; ++p)
    for (std::size_t i = 0; i < spatial; ++i) Y[p * spatial + i] = X[p * spatial + i] * G[p];
  return g.record(OpKind::channel_scale, {xi, gi}, std::move(Y), [=](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    const Tensor& Xv = gr.node_value(xi);
    const Tensor& Gv = gr.node_value(gi);
    if (gr.node_requires_grad(xi)) {
      auto& gx = gr.node_grad(xi);
      for (std::size_t p = 0; p < pairs; ++p)
        for (std::size_t i = 0; i < spatial; ++i) gx[p * spatial + i] += gy[p * spatial + i] * Gv[p];
    }
    if (gr.node_requires_grad(gi)) {
      auto& gg = gr.node_grad(gi);
      for (std::size_t p = 0; p < pairs; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < spatial; ++i) s += gy[p * spatial + i] * Xv[p * spatial + i];
        gg[p] += s;
      }
    }
  });
}

Var flatten(Graph& g, Var x) {
  const std::size_t xi = g.resolve(x);
  const Tensor& X = g.node_value(xi);
  if (X.rank() < 1) throw ConfigError("flatten: scalar input");
  Tensor Y = X.reshaped({X.dim(0), X.size() / X.dim(0)});
  return g.record(OpKind::flatten, {xi}, std::move(Y), [xi](Graph& gr, std::size_t self) {
    add_into(gr.node_grad(xi), gr.node_grad(self));
  });
}

Var select_rows(Graph& g, std::span<const Var> sources, std::span<const std::size_t> source_of_row) {
  if (sources.empty()) throw ConfigError("select_rows: no sources");
  std::vector<std::size_t> ids;
  for (Var v : sources) ids.push_back(g.resolve(v));
  const Tensor& first = g.node_value(ids[0]);
  for (std::size_t id : ids)
    if (g.node_value(id).shape() != first.shape())
      throw ConfigError("select_rows: sources must share one shape");
  const std::size_t rows = first.dim(0);
  if (source_of_row.size() != rows) throw ConfigError("select_rows: need one source index per row");
  const std::size_t row = first.size() / rows;
  std::vector<std::size_t> plan(source_of_row.begin(), source_of_row.end());
  Tensor Y(first.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    if (plan[r] >= ids.size()) throw ConfigError("select_rows: source index out of range");
    const double* src = g.node_value(ids[plan[r]]).data().data() + r * row;
    std::copy(src, src + row, Y.data().data() + r * row);
  }
  return g.record(OpKind::select_rows, ids, std::move(Y), [=](Graph& gr, std::size_t self) {
    const auto& gy = gr.node_grad(self);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t id = ids[plan[r]];
      if (!gr.node_requires_grad(id)) continue;
      auto& gs = gr.node_grad(id);
      for (std::size_t i = 0; i < row; ++i) gs[r * row + i] += gy[r * row + i];
    }
  });
}

}  // namespace ops
}  // namespace amcl
