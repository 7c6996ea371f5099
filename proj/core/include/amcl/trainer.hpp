#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "amcl/dataset.hpp"
#include "amcl/ensemble.hpp"
#include "amcl/sgd.hpp"

namespace amcl {

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  Phase phase = Phase::loss_based;
  double train_loss = 0.0;     // objective per example, averaged over the epoch
  double oracle_error = 0.0;   // percent, on the training set after the epoch
  double top1_error = 0.0;     // percent, on the training set after the epoch
  /// Ground-truth assignments made during this epoch, [N_c x M]:
  /// counts(c, m) = examples of class c whose label term went to member m.
  Matrix<std::int64_t> class_counts;
  bool froze = false;          // specialization was fixed at the end of this epoch
};

struct TrainLog {
  double initial_oracle_error = 0.0;
  double initial_top1_error = 0.0;
  std::vector<EpochRecord> epochs;

  std::vector<Matrix<std::int64_t>> count_snapshots() const;
};

struct TrainConfig {
  Method method = Method::amcl;
  std::size_t members = 2;
  PenaltyConfig penalty;  // K = penalty.overlap, T_tau = penalty.threshold_epochs
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  SgdConfig sgd;
  FusionKind fusion = FusionKind::none;
  double share_probability = 0.5;
  std::optional<ArchKind> arch;       // default: simple_cnn for [C, H, W] examples, mlp otherwise
  std::vector<std::size_t> widths;    // empty: the architecture's default widths
  std::size_t num_classes = 0;        // 0: taken from the dataset
  std::size_t threads = 0;            // 0: AMCL_THREADS, else one per member
  bool track_train_metrics = true;    // per-epoch oracle/top-1 on the training set
  std::function<void(const EpochRecord&, const EnsembleState&)> on_epoch_end;

  void validate() const;
};

/// Member-parallel worker count: cfg.threads, else AMCL_THREADS, else M;
/// capped at M.
std::size_t resolve_threads(const TrainConfig& cfg);

ArchitectureSpec architecture_for(const LabeledDataset& data, const TrainConfig& cfg);
EnsembleConfig ensemble_config_for(const LabeledDataset& data, const TrainConfig& cfg);

/// Drives SGD over an ensemble it does not own.
///
/// Without fusion every member runs on its own graph, so forward and backward
/// passes can run member-parallel; results do not depend on the thread count.
/// Fusion modes use one shared graph.
class Trainer {
 public:
  struct StepResult {
    double loss = 0.0;  // objective summed over the batch
    Assignment assignment;
    Phase phase = Phase::loss_based;
    Tensor probs;       // [B, M, output_dim] before the update
  };

  Trainer(EnsembleState& state, TrainConfig cfg);
  ~Trainer();
  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  /// Zeroes and refills every parameter gradient with d(objective / B).
  StepResult compute_gradients(const Tensor& batch, std::span<const int> labels, std::size_t epoch);
  void apply_update();
  /// One shuffled pass; epoch is 1-based. Accumulates counts and freezes
  /// specialization at the end of epoch T_tau for amcl.
  EpochRecord run_epoch(const LabeledDataset& data, std::size_t epoch);
  /// Fixes w from the accumulated counts. Throws StateError when already fixed.
  void freeze_specialization();

  EnsembleState& state() noexcept { return state_; }
  const TrainConfig& config() const noexcept { return cfg_; }

 private:
  struct Impl;
  EnsembleState& state_;
  TrainConfig cfg_;
  Sgd sgd_;
  std::unique_ptr<Impl> impl_;
};

/// Builds a fresh ensemble from cfg and trains it for cfg.epochs.
std::pair<EnsembleState, TrainLog> train(const LabeledDataset& data, const TrainConfig& cfg);

/// Oracle and top-1 error (percent) of the current ensemble on `data`.
std::pair<double, double> ensemble_errors(const EnsembleState& state, const LabeledDataset& data);

void write_train_log_csv(std::ostream& os, const TrainLog& log);

}  // namespace amcl
