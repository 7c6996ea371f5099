#include "amcl/mcl_losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "amcl/errors.hpp"
#include "amcl/log.hpp"
#include "amcl/probability.hpp"

namespace amcl {
namespace {

struct ProbShape {
  std::size_t batch, members, slots;
};

ProbShape prob_shape(const Tensor& probs, std::span<const int> labels) {
  if (probs.rank() != 3) throw ConfigError("probabilities must be [B, M, C], got " + shape_string(probs.shape()));
  ProbShape s{probs.dim(0), probs.dim(1), probs.dim(2)};
  if (labels.size() != s.batch)
    throw ConfigError("got " + std::to_string(labels.size()) + " labels for a batch of " + std::to_string(s.batch));
  return s;
}

void check_labels(std::span<const int> labels, std::size_t num_classes, bool auxiliary) {
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const int y = labels[j];
    if (auxiliary && y == static_cast<int>(num_classes))
      throw InputError("label of example " + std::to_string(j) + " is hot at the auxiliary slot");
    if (y < 0 || y >= static_cast<int>(num_classes))
      throw InputError("label " + std::to_string(y) + " of example " + std::to_string(j) + " outside [0, " +
                       std::to_string(num_classes) + ")");
  }
}

double prob_at(const Tensor& probs, const ProbShape& s, std::size_t j, std::size_t m, std::size_t c) {
  return probs[(j * s.members + m) * s.slots + c];
}

double& weight_at(Tensor& w, const ProbShape& s, std::size_t j, std::size_t m, std::size_t c) {
  return w[(j * s.members + m) * s.slots + c];
}

// Shared body of the auxiliary-class objectives: assigned members get the
// ground-truth term, the rest get penalty * KL(A(y~) || p) = -log p_aux.
ObjectiveTerms auxiliary_objective(const Tensor& probs, std::span<const int> labels, const ProbShape& s,
                                   const LossMatrix& losses, Assignment v, double penalty, Phase phase) {
  ObjectiveTerms out;
  out.weights = Tensor(probs.shape());
  out.phase = phase;
  const std::size_t aux = s.slots - 1;
  for (std::size_t j = 0; j < s.batch; ++j)
    for (std::size_t m = 0; m < s.members; ++m) {
      if (v(j, m)) {
        out.value += losses(j, m);
        weight_at(out.weights, s, j, m, static_cast<std::size_t>(labels[j])) += 1.0;
      } else if (penalty != 0.0) {
        out.value += penalty * neg_log_clamped(prob_at(probs, s, j, m, aux));
        weight_at(out.weights, s, j, m, aux) += penalty;
      }
    }
  out.assignment = std::move(v);
  return out;
}

}  // namespace

void PenaltyConfig::validate(std::size_t members) const {
  if (overlap < 1 || overlap > members)
    throw ConfigError("K must satisfy 1 <= K <= M (got K=" + std::to_string(overlap) + ", M=" +
                      std::to_string(members) + ")");
  if (!(beta >= 0.0) || !(gamma >= 0.0)) throw ConfigError("penalty weights must be non-negative");
}

const char* phase_name(Phase phase) noexcept { return phase == Phase::loss_based ? "LBA" : "MBA"; }

AssignmentCounter::AssignmentCounter(std::size_t num_classes, std::size_t members)
    : counts_(num_classes, members, 0) {}

bool AssignmentCounter::empty() const noexcept {
  return std::all_of(counts_.data().begin(), counts_.data().end(), [](std::int64_t c) { return c == 0; });
}

AssignmentCounter AssignmentCounter::restore(Matrix<std::int64_t> counts, std::size_t epochs, bool frozen) {
  AssignmentCounter c;
  c.counts_ = std::move(counts);
  c.epochs_ = epochs;
  c.frozen_ = frozen;
  return c;
}

std::vector<double> append_auxiliary(int label, std::size_t num_classes) {
  if (label < 0 || label >= static_cast<int>(num_classes))
    throw InputError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  return one_hot(static_cast<std::size_t>(label), num_classes + 1);
}

std::vector<double> auxiliary_target(std::size_t num_classes) { return one_hot(num_classes, num_classes + 1); }

double ie_loss(const LossMatrix& losses) {
  double total = 0.0;
  for (double l : losses.data()) total += l;
  return total;
}

double oracle_loss(const LossMatrix& losses) {
  double total = 0.0;
  for (std::size_t j = 0; j < losses.rows(); ++j) {
    auto row = losses.row(j);
    if (!row.empty()) total += *std::min_element(row.begin(), row.end());
  }
  return total;
}

Assignment assign_top_k(const LossMatrix& losses, std::size_t k) {
  const std::size_t members = losses.cols();
  if (k < 1 || k > members)
    throw ConfigError("K must satisfy 1 <= K <= M (got K=" + std::to_string(k) + ", M=" + std::to_string(members) +
                      ")");
  Assignment v(losses.rows(), members, 0);
  std::vector<std::size_t> order(members);
  for (std::size_t j = 0; j < losses.rows(); ++j) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto row = losses.row(j);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) { return row[a] < row[b] || (row[a] == row[b] && a < b); });
    for (std::size_t i = 0; i < k; ++i) v(j, order[i]) = 1;
  }
  return v;
}

double assigned_loss(const LossMatrix& losses, const Assignment& v) {
  if (v.rows() != losses.rows() || v.cols() != losses.cols()) throw ConfigError("assignment shape mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < losses.data().size(); ++i)
    if (v.data()[i]) total += losses.data()[i];
  return total;
}

LossMatrix per_model_cross_entropy(const Tensor& probs, std::span<const int> labels) {
  const ProbShape s = prob_shape(probs, labels);
  check_labels(labels, s.slots, false);
  LossMatrix l(s.batch, s.members);
  for (std::size_t j = 0; j < s.batch; ++j)
    for (std::size_t m = 0; m < s.members; ++m)
      l(j, m) = neg_log_clamped(prob_at(probs, s, j, m, static_cast<std::size_t>(labels[j])));
  return l;
}

ObjectiveTerms ie_objective(const Tensor& probs, std::span<const int> labels) {
  const ProbShape s = prob_shape(probs, labels);
  LossMatrix l = per_model_cross_entropy(probs, labels);
  return auxiliary_objective(probs, labels, s, l, Assignment(s.batch, s.members, 1), 0.0, Phase::loss_based);
}

ObjectiveTerms smcl_loss(const Tensor& probs, std::span<const int> labels, std::size_t k) {
  const ProbShape s = prob_shape(probs, labels);
  LossMatrix l = per_model_cross_entropy(probs, labels);
  Assignment v = assign_top_k(l, k);
  return auxiliary_objective(probs, labels, s, l, std::move(v), 0.0, Phase::loss_based);
}

ObjectiveTerms cmcl_loss(const Tensor& probs, std::span<const int> labels, const PenaltyConfig& cfg) {
  const ProbShape s = prob_shape(probs, labels);
  LossMatrix l = per_model_cross_entropy(probs, labels);
  Assignment v = assign_top_k(l, cfg.overlap);

  ObjectiveTerms out;
  out.weights = Tensor(probs.shape());
  const double u = 1.0 / static_cast<double>(s.slots);
  std::vector<double> row(s.slots);
  for (std::size_t j = 0; j < s.batch; ++j)
    for (std::size_t m = 0; m < s.members; ++m) {
      if (v(j, m)) {
        out.value += l(j, m);
        weight_at(out.weights, s, j, m, static_cast<std::size_t>(labels[j])) += 1.0;
      } else if (cfg.beta != 0.0) {
        for (std::size_t c = 0; c < s.slots; ++c) {
          row[c] = prob_at(probs, s, j, m, c);
          weight_at(out.weights, s, j, m, c) += cfg.beta * u;
        }
        out.value += cfg.beta * kl_uniform_to(row);
        out.constant += cfg.beta * std::log(u);
      }
    }
  out.assignment = std::move(v);
  return out;
}

ObjectiveTerms lba_loss(const Tensor& probs, std::span<const int> labels, const PenaltyConfig& cfg) {
  const ProbShape s = prob_shape(probs, labels);
  if (s.slots < 3) throw ConfigError("auxiliary heads need at least 2 classes + 1 auxiliary slot");
  check_labels(labels, s.slots - 1, true);
  LossMatrix l = per_model_cross_entropy(probs, labels);
  Assignment v = assign_top_k(l, cfg.overlap);
  return auxiliary_objective(probs, labels, s, l, std::move(v), cfg.beta, Phase::loss_based);
}

ObjectiveTerms mba_loss(const Tensor& probs, std::span<const int> labels, const SpecializationMatrix& w,
                        const PenaltyConfig& cfg) {
  if (!w.frozen) throw StateError("memory-based assignment requires a frozen specialization matrix");
  const ProbShape s = prob_shape(probs, labels);
  if (s.slots < 3) throw ConfigError("auxiliary heads need at least 2 classes + 1 auxiliary slot");
  if (w.num_classes() != s.slots - 1 || w.members() != s.members)
    throw ConfigError("specialization matrix is " + std::to_string(w.num_classes()) + "x" +
                      std::to_string(w.members()) + ", probabilities imply " + std::to_string(s.slots - 1) + "x" +
                      std::to_string(s.members));
  check_labels(labels, s.slots - 1, true);
  LossMatrix l = per_model_cross_entropy(probs, labels);
  return auxiliary_objective(probs, labels, s, l, assignment_from_specialization(w, labels), cfg.gamma,
                             Phase::memory_based);
}

ObjectiveTerms amcl_objective(std::size_t epoch, const Tensor& probs, std::span<const int> labels,
                              const SpecializationMatrix& w, const PenaltyConfig& cfg) {
  if (epoch == 0) throw ConfigError("epochs are numbered from 1");
  if (epoch <= cfg.threshold_epochs) return lba_loss(probs, labels, cfg);
  if (!w.frozen)
    throw StateError("epoch " + std::to_string(epoch) + " is past the assignment threshold " +
                     std::to_string(cfg.threshold_epochs) + " but specialization is not frozen");
  return mba_loss(probs, labels, w, cfg);
}

void accumulate_counts(AssignmentCounter& counter, const Assignment& v, std::span<const int> class_indices) {
  if (counter.frozen_) throw StateError("assignment counts are frozen");
  auto& counts = counter.counts_;
  if (v.cols() != counts.cols() || v.rows() != class_indices.size())
    throw ConfigError("assignment shape does not match counter / class list");
  for (std::size_t j = 0; j < v.rows(); ++j) {
    const int c = class_indices[j];
    if (c < 0 || static_cast<std::size_t>(c) >= counts.rows())
      throw InputError("class index " + std::to_string(c) + " out of range");
    for (std::size_t m = 0; m < v.cols(); ++m) counts(static_cast<std::size_t>(c), m) += v(j, m);
  }
}

SpecializationMatrix fix_specialization(const AssignmentCounter& counter, std::size_t k) {
  const auto& counts = counter.counts();
  if (counts.rows() == 0 || counts.cols() == 0) throw StateError("assignment counter is empty");
  const std::size_t members = counts.cols();
  if (k < 1 || k > members) throw ConfigError("K must satisfy 1 <= K <= M");

  SpecializationMatrix w;
  w.flags = Matrix<int>(counts.rows(), members, 0);
  std::vector<std::size_t> order(members);
  for (std::size_t c = 0; c < counts.rows(); ++c) {
    auto row = counts.row(c);
    if (std::all_of(row.begin(), row.end(), [](std::int64_t n) { return n == 0; })) {
      w.empty_classes.push_back(c);
      log_warning("class " + std::to_string(c) + " has no recorded assignments; specializing members 0.." +
                  std::to_string(k - 1));
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
    for (std::size_t i = 0; i < k; ++i) w.flags(c, order[i]) = 1;
  }
  for (std::size_t m = 0; m < members; ++m)
    if (w.flags.col_sum(m) == 0) {
      w.idle_members.push_back(m);
      log_warning("member " + std::to_string(m) + " is not specialized to any class; it will only see auxiliary targets");
    }
  w.frozen = true;
  return w;
}

Assignment assignment_from_specialization(const SpecializationMatrix& w, std::span<const int> labels) {
  Assignment v(labels.size(), w.members(), 0);
  for (std::size_t j = 0; j < labels.size(); ++j) {
    const int c = labels[j];
    if (c < 0 || static_cast<std::size_t>(c) >= w.num_classes())
      throw InputError("label " + std::to_string(c) + " outside the specialization matrix");
    auto src = w.flags.row(static_cast<std::size_t>(c));
    std::copy(src.begin(), src.end(), v.row(j).begin());
  }
  return v;
}

}  // namespace amcl
