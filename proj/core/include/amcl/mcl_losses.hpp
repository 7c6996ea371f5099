#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "amcl/matrix.hpp"
#include "amcl/tensor.hpp"

namespace amcl {

using LossMatrix = Matrix<double>;
/// Binary [B x M] indicator; row j marks the members that receive example j's
/// ground-truth term. Every row sums to K.
using Assignment = Matrix<int>;

struct PenaltyConfig {
  double beta = 0.75;            // weight of the aux/uniform penalty during loss-based assignment
  double gamma = 0.75;           // weight of the aux penalty during memory-based assignment
  std::size_t overlap = 1;       // K: members per example
  std::size_t threshold_epochs = 10;  // last epoch (1-based) that uses loss-based assignment

  void validate(std::size_t members) const;
};

enum class Phase { loss_based, memory_based };
const char* phase_name(Phase phase) noexcept;

/// Cumulative class x member assignment counts, frozen once specialization
/// is fixed.
class AssignmentCounter {
 public:
  AssignmentCounter() = default;
  AssignmentCounter(std::size_t num_classes, std::size_t members);

  const Matrix<std::int64_t>& counts() const noexcept { return counts_; }
  std::size_t epochs_accumulated() const noexcept { return epochs_; }
  bool frozen() const noexcept { return frozen_; }
  bool empty() const noexcept;

  void mark_epoch() { ++epochs_; }
  void freeze() { frozen_ = true; }

  // Restores persisted state.
  static AssignmentCounter restore(Matrix<std::int64_t> counts, std::size_t epochs, bool frozen);

 private:
  friend void accumulate_counts(AssignmentCounter&, const Assignment&, std::span<const int>);
  Matrix<std::int64_t> counts_;
  std::size_t epochs_ = 0;
  bool frozen_ = false;
};

/// Binary class x member flag matrix with exactly K ones per row.
struct SpecializationMatrix {
  Matrix<int> flags;
  bool frozen = false;
  std::vector<std::size_t> empty_classes;   // rows chosen by index fallback
  std::vector<std::size_t> idle_members;    // members without any class

  std::size_t num_classes() const noexcept { return flags.rows(); }
  std::size_t members() const noexcept { return flags.cols(); }
  bool operator==(const SpecializationMatrix& o) const { return flags == o.flags && frozen == o.frozen; }
};

/// Objective value plus what the trainer needs to differentiate it.
///
/// `weights` has the shape of the probability tensor [B, M, C]; the
/// differentiable part of the objective is sum(weights * -log(clamp(p))).
/// `constant` collects the p-independent remainder (non-zero only for the
/// uniform-KL penalty), so value == constant + sum(weights * -log(clamp(p))).
struct ObjectiveTerms {
  double value = 0.0;
  double constant = 0.0;
  Assignment assignment;
  Tensor weights;
  Phase phase = Phase::loss_based;
};

std::vector<double> append_auxiliary(int label, std::size_t num_classes);
/// A(y~): one-hot on the auxiliary slot (index num_classes).
std::vector<double> auxiliary_target(std::size_t num_classes);

double ie_loss(const LossMatrix& losses);
double oracle_loss(const LossMatrix& losses);

/// Per row, ones at the K smallest losses; ties go to the smaller member
/// index. Attains min sum(v * l) subject to sum_m v = K.
Assignment assign_top_k(const LossMatrix& losses, std::size_t k);
double assigned_loss(const LossMatrix& losses, const Assignment& v);

/// l[j][m] = -log(clamp(p[j, m, y_j])) for a probability tensor [B, M, C].
LossMatrix per_model_cross_entropy(const Tensor& probs, std::span<const int> labels);

/// Independent ensemble: every member gets every example.
ObjectiveTerms ie_objective(const Tensor& probs, std::span<const int> labels);
/// Stochastic MCL: top-K assignment, no penalty on unassigned members.
ObjectiveTerms smcl_loss(const Tensor& probs, std::span<const int> labels, std::size_t k);
/// Confident MCL: top-K assignment plus beta * KL(uniform || p) on the rest.
/// Heads carry no auxiliary slot.
ObjectiveTerms cmcl_loss(const Tensor& probs, std::span<const int> labels, const PenaltyConfig& cfg);
/// Loss-based assignment with auxiliary targets for unassigned members.
ObjectiveTerms lba_loss(const Tensor& probs, std::span<const int> labels, const PenaltyConfig& cfg);
/// Memory-based assignment read from a frozen specialization matrix.
ObjectiveTerms mba_loss(const Tensor& probs, std::span<const int> labels, const SpecializationMatrix& w,
                        const PenaltyConfig& cfg);

/// Epoch-threshold dispatch: epoch <= threshold -> LBA, otherwise MBA.
ObjectiveTerms amcl_objective(std::size_t epoch, const Tensor& probs, std::span<const int> labels,
                              const SpecializationMatrix& w, const PenaltyConfig& cfg);

/// counts[label_j][m] += v[j][m]. Throws StateError once frozen.
void accumulate_counts(AssignmentCounter& counter, const Assignment& v, std::span<const int> class_indices);

/// Row-wise top-K counts (ties to the smaller member index). All-zero rows
/// fall back to members 0..K-1 and are reported in `empty_classes`.
SpecializationMatrix fix_specialization(const AssignmentCounter& counter, std::size_t k);

/// Assignment implied by a specialization matrix for a batch of labels.
Assignment assignment_from_specialization(const SpecializationMatrix& w, std::span<const int> labels);

}  // namespace amcl
