#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <sstream>

#include "amcl/errors.hpp"
#include "amcl/trainer.hpp"
#include "common/oracles.hpp"

namespace amcl {
namespace {

LabeledDataset blobs(const char* text = "blobs:classes=2,dim=4,train=40,test=40,sep=6,seed=3") {
  return make_dataset(DatasetSpec::parse(text), Split::train);
}

TrainConfig small_config(Method method, std::size_t members = 2, std::size_t overlap = 1) {
  TrainConfig cfg;
  cfg.method = method;
  cfg.members = members;
  cfg.penalty.overlap = overlap;
  cfg.penalty.threshold_epochs = 2;
  cfg.epochs = 4;
  cfg.batch_size = 16;
  cfg.widths = {8};
  cfg.seed = 5;
  return cfg;
}

double grad_mass(MemberModel& m) {
  double s = 0.0;
  for (Tensor* p : m.parameter_ptrs())
    for (double g : p->grad()) s += std::abs(g);
  return s;
}

std::vector<std::size_t> first(std::size_t n) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

TEST(Trainer, SmclOnlyUpdatesTheAssignedMember) {
  const auto data = blobs();
  const auto cfg = small_config(Method::smcl);
  EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
  Trainer trainer(state, cfg);
  const std::vector<std::size_t> one{0};
  const auto step = trainer.compute_gradients(data.batch(one), data.batch_labels(one), 1);
  const std::size_t winner = step.assignment(0, 0) ? 0 : 1;
  EXPECT_EQ(step.assignment.row_sum(0), 1);
  EXPECT_GT(grad_mass(state.members[winner]), 0.0);
  EXPECT_EQ(grad_mass(state.members[1 - winner]), 0.0);
}

TEST(Trainer, IndependentEnsembleUpdatesEveryMember) {
  const auto data = blobs();
  const auto cfg = small_config(Method::ie, 3);
  EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
  Trainer trainer(state, cfg);
  const auto idx = first(4);
  const auto step = trainer.compute_gradients(data.batch(idx), data.batch_labels(idx), 1);
  for (std::size_t m = 0; m < 3; ++m) {
    EXPECT_GT(grad_mass(state.members[m]), 0.0);
    EXPECT_EQ(step.assignment.col_sum(m), 4);
  }
}

TEST(Trainer, UnassignedMembersStillLearnUnderPenalties) {
  const auto data = blobs();
  for (Method method : {Method::cmcl, Method::amcl}) {
    const auto cfg = small_config(method);
    EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
    Trainer trainer(state, cfg);
    const std::vector<std::size_t> one{0};
    trainer.compute_gradients(data.batch(one), data.batch_labels(one), 1);
    EXPECT_GT(grad_mass(state.members[0]), 0.0) << method_name(method);
    EXPECT_GT(grad_mass(state.members[1]), 0.0) << method_name(method);
  }
}

// The trainer's gradient is d(objective / B) with the assignment held fixed.
TEST(Trainer, GradientsMatchFiniteDifferencesOfTheObjective) {
  const auto data = blobs("blobs:classes=3,dim=3,train=4,test=1,sep=4,seed=8");
  for (Method method : {Method::ie, Method::smcl, Method::cmcl, Method::amcl}) {
    for (FusionKind fusion : {FusionKind::none, FusionKind::module}) {
      auto cfg = small_config(method, 3, 2);
      cfg.fusion = fusion;
      cfg.widths = {4, 3};
      EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
      // Lift every bias off zero so no relu input sits on its kink.
      for (Tensor* p : state.parameter_ptrs())
        for (double& v : p->data()) v += 0.05;
      Trainer trainer(state, cfg);
      const auto idx = first(data.size());
      const Tensor x = data.batch(idx);
      const auto labels = data.batch_labels(idx);
      const std::size_t epoch = method == Method::amcl ? 1 : 3;
      const double b = static_cast<double>(idx.size());
      trainer.compute_gradients(x, labels, epoch);
      double worst = 0.0;
      for (Tensor* p : state.parameter_ptrs()) {
        std::vector<double> analytic(p->grad().begin(), p->grad().end());
        std::vector<double> numeric(p->size());
        for (std::size_t i = 0; i < p->size(); ++i) {
          const double keep = (*p)[i];
          (*p)[i] = keep + 1e-6;
          const double up = trainer.compute_gradients(x, labels, epoch).loss / b;
          (*p)[i] = keep - 1e-6;
          const double down = trainer.compute_gradients(x, labels, epoch).loss / b;
          (*p)[i] = keep;
          numeric[i] = (up - down) / 2e-6;
        }
        worst = std::max(worst, testing::relative_error(analytic, numeric));
      }
      EXPECT_LE(worst, 1e-4) << method_name(method) << " / " << fusion_name(fusion);
    }
  }
}

TEST(Trainer, AmclFreezesAtThresholdAndFollowsW) {
  const auto data = blobs();
  auto cfg = small_config(Method::amcl);
  EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
  Trainer trainer(state, cfg);
  for (std::size_t e = 1; e <= 2; ++e) {
    const auto rec = trainer.run_epoch(data, e);
    EXPECT_EQ(rec.phase, Phase::loss_based);
    EXPECT_EQ(rec.froze, e == 2);
    // Each example sends its label term to exactly K members.
    std::int64_t total = 0;
    for (auto v : rec.class_counts.data()) total += v;
    EXPECT_EQ(total, static_cast<std::int64_t>(data.size()));
  }
  ASSERT_TRUE(state.specialization.frozen);
  EXPECT_EQ(state.counter.epochs_accumulated(), 2u);
  for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(state.specialization.flags.row_sum(c), 1);
  const auto counts_at_freeze = state.counter.counts();
  const auto idx = first(8);
  const auto labels = data.batch_labels(idx);
  const auto step = trainer.compute_gradients(data.batch(idx), labels, 3);
  EXPECT_EQ(step.phase, Phase::memory_based);
  EXPECT_EQ(step.assignment, assignment_from_specialization(state.specialization, labels));
  trainer.run_epoch(data, 3);
  EXPECT_EQ(state.counter.counts(), counts_at_freeze);
  EXPECT_THROW(trainer.freeze_specialization(), StateError);
}

TEST(Trainer, PinnedSeedSpecializesAsPermutation) {
  const auto data = blobs("blobs:classes=2,dim=4,train=60,test=10,sep=6,seed=1");
  auto cfg = small_config(Method::amcl);
  cfg.seed = 4;
  cfg.epochs = 3;
  auto [state, log] = train(data, cfg);
  ASSERT_TRUE(state.specialization.frozen);
  EXPECT_EQ(state.specialization.flags.col_sum(0), 1);
  EXPECT_EQ(state.specialization.flags.col_sum(1), 1);
  const auto snaps = log.count_snapshots();
  EXPECT_EQ(snaps.size(), 3u);
}

TEST(Trainer, ThreadCountDoesNotChangeResults) {
  const auto data = blobs();
  auto cfg = small_config(Method::amcl, 3);
  cfg.epochs = 3;
  cfg.threads = 1;
  const auto one = train(data, cfg).first.checksum();
  cfg.threads = 3;
  EXPECT_EQ(train(data, cfg).first.checksum(), one);
  EXPECT_EQ(train(data, cfg).first.checksum(), one);
}

TEST(Trainer, TrainingReducesOracleError) {
  const auto data = blobs("blobs:classes=3,dim=4,train=60,test=10,sep=4,seed=2");
  for (Method method : {Method::ie, Method::smcl, Method::cmcl, Method::amcl}) {
    auto cfg = small_config(method, 2);
    cfg.epochs = 6;
    const auto [state, log] = train(data, cfg);
    EXPECT_LT(log.epochs.back().oracle_error, log.initial_oracle_error) << method_name(method);
    EXPECT_EQ(state.epochs_completed, 6u);
    const auto [oracle, top1] = ensemble_errors(state, data);
    EXPECT_EQ(oracle, log.epochs.back().oracle_error);
    EXPECT_EQ(top1, log.epochs.back().top1_error);
  }
}

TEST(Trainer, FusionModesTrain) {
  const auto data = make_dataset(DatasetSpec::parse("images:classes=2,size=8,train=12,test=4,seed=1"), Split::train);
  for (FusionKind fusion : {FusionKind::module, FusionKind::share}) {
    auto cfg = small_config(Method::amcl);
    cfg.fusion = fusion;
    cfg.widths = {4, 4};
    cfg.epochs = 3;
    const auto [state, log] = train(data, cfg);
    EXPECT_EQ(state.fusion.has_value(), fusion == FusionKind::module);
    for (const auto& r : log.epochs) EXPECT_TRUE(std::isfinite(r.train_loss));
  }
}

TEST(Trainer, RejectsInconsistentConfiguration) {
  const auto data = blobs();
  auto cfg = small_config(Method::amcl);
  cfg.penalty.threshold_epochs = 0;
  EXPECT_THROW(cfg.validate(), StateError);
  cfg = small_config(Method::smcl, 2, 3);
  EXPECT_THROW(train(data, cfg), ConfigError);
  cfg = small_config(Method::amcl);
  cfg.num_classes = 5;
  EXPECT_THROW(train(data, cfg), ConfigError);
  cfg = small_config(Method::amcl);
  EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
  auto other = cfg;
  other.members = 3;
  EXPECT_THROW(Trainer(state, other), ConfigError);
  other = cfg;
  other.method = Method::ie;
  EXPECT_THROW(Trainer(state, other), ConfigError);
  Trainer trainer(state, cfg);
  EXPECT_THROW(trainer.run_epoch(data, 0), ConfigError);
}

TEST(Trainer, NonFiniteParametersRaiseNumericError) {
  const auto data = blobs();
  const auto cfg = small_config(Method::amcl);
  EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
  (*state.members[1].parameter_ptrs().front())[0] = std::nan("");
  Trainer trainer(state, cfg);
  const auto idx = first(4);
  EXPECT_THROW(trainer.compute_gradients(data.batch(idx), data.batch_labels(idx), 1), NumericError);
}

TEST(Trainer, LogCsvHasOneRowPerEpochPlusInit) {
  const auto data = blobs();
  auto cfg = small_config(Method::cmcl);
  cfg.epochs = 2;
  const auto log = train(data, cfg).second;
  std::ostringstream os;
  write_train_log_csv(os, log);
  const std::string text = os.str();
  EXPECT_EQ(text.rfind("epoch,phase,train_loss,oracle_error,top1_error,froze\n0,init,", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
}

TEST(Trainer, ThreadResolution) {
  TrainConfig cfg;
  cfg.members = 4;
  cfg.threads = 9;
  EXPECT_EQ(resolve_threads(cfg), 4u);
  cfg.threads = 2;
  EXPECT_EQ(resolve_threads(cfg), 2u);
}

}  // namespace
}  // namespace amcl
