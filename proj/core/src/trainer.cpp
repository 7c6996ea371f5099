#include "amcl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <numeric>
#include <sstream>
#include <thread>

#include "amcl/errors.hpp"
#include "amcl/log.hpp"
#include "amcl/metrics.hpp"
#include "amcl/probability.hpp"

namespace amcl {
namespace {

// Runs fn(0..n-1) on up to `threads` workers; the first exception wins.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(threads, n);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

Tensor member_weights(const Tensor& weights, std::size_t m, double scale) {
  const std::size_t b_count = weights.dim(0), m_count = weights.dim(1), slots = weights.dim(2);
  Tensor out({b_count, slots});
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t c = 0; c < slots; ++c) out[b * slots + c] = scale * weights[(b * m_count + m) * slots + c];
  return out;
}

std::string step_diagnostic(const Tensor& probs, std::size_t epoch, std::size_t step) {
  std::ostringstream os;
  os << "non-finite objective at epoch " << epoch << ", step " << step << ";";
  const std::size_t b_count = probs.dim(0), m_count = probs.dim(1), slots = probs.dim(2);
  for (std::size_t m = 0; m < m_count; ++m) {
    double lo = 1.0;
    std::size_t bad = 0;
    for (std::size_t b = 0; b < b_count; ++b)
      for (std::size_t c = 0; c < slots; ++c) {
        const double p = probs[(b * m_count + m) * slots + c];
        if (!std::isfinite(p)) ++bad;
        else lo = std::min(lo, p);
      }
    os << " member " << m << ": min p " << lo << ", non-finite " << bad;
  }
  return os.str();
}

}  // namespace

std::vector<Matrix<std::int64_t>> TrainLog::count_snapshots() const {
  std::vector<Matrix<std::int64_t>> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.class_counts);
  return out;
}

void TrainConfig::validate() const {
  if (members < 1) throw ConfigError("ensemble needs at least one member");
  penalty.validate(members);
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("batch size must be at least 1");
  sgd.validate();
  if (!(share_probability >= 0.0 && share_probability <= 1.0))
    throw ConfigError("share probability must lie in [0, 1]");
  if (method == Method::amcl && penalty.threshold_epochs == 0)
    throw StateError("amcl needs T_tau >= 1: specialization is fixed from loss-based counts");
  if (fusion != FusionKind::none && members < 2) throw ConfigError("feature fusion needs at least 2 members");
}

std::size_t resolve_threads(const TrainConfig& cfg) {
  std::size_t n = cfg.threads;
  if (n == 0) {
    if (const char* env = std::getenv("AMCL_THREADS")) {
      char* end = nullptr;
      const long v = std::strtol(env, &end, 10);
      if (end != env && *end == '\0' && v > 0) n = static_cast<std::size_t>(v);
      else log_warning(std::string("ignoring AMCL_THREADS='") + env + "'");
    }
  }
  if (n == 0) n = cfg.members;
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(1, cfg.members));
}

ArchitectureSpec architecture_for(const LabeledDataset& data, const TrainConfig& cfg) {
  const std::size_t classes = data.num_classes;
  if (cfg.num_classes != 0 && cfg.num_classes != classes)
    throw ConfigError("configured for " + std::to_string(cfg.num_classes) + " classes but the dataset has " +
                      std::to_string(classes));
  const bool aux = uses_auxiliary_head(cfg.method);
  const ArchKind kind = cfg.arch.value_or(data.example_shape.size() == 3 ? ArchKind::simple_cnn : ArchKind::mlp);
  ArchitectureSpec spec;
  if (kind == ArchKind::simple_cnn) {
    if (data.example_shape.size() != 3)
      throw ConfigError("simple_cnn needs [C, H, W] examples, dataset has " + shape_string(data.example_shape));
    spec = ArchitectureSpec::simple_cnn(data.example_shape, classes, aux);
  } else {
    spec = ArchitectureSpec::mlp(data.example_size(), classes, {32, 32}, aux);
    // Image data is flattened for the mlp.
    spec.input_shape = {data.example_size()};
  }
  if (!cfg.widths.empty()) spec.widths = cfg.widths;
  spec.validate();
  return spec;
}

EnsembleConfig ensemble_config_for(const LabeledDataset& data, const TrainConfig& cfg) {
  cfg.validate();
  EnsembleConfig ec;
  ec.method = cfg.method;
  ec.members = cfg.members;
  ec.arch = architecture_for(data, cfg);
  ec.penalty = cfg.penalty;
  ec.fusion = cfg.fusion;
  ec.share_probability = cfg.share_probability;
  ec.seed = cfg.seed;
  ec.validate();
  return ec;
}

struct Trainer::Impl {
  std::vector<Graph> graphs;  // one per member without fusion, else one shared
  std::vector<Tensor*> params;
  std::size_t threads = 1;
  Rng share_rng;
  std::size_t step = 0;
};

Trainer::Trainer(EnsembleState& state, TrainConfig cfg)
    : state_(state), cfg_(std::move(cfg)), sgd_(cfg_.sgd), impl_(std::make_unique<Impl>()) {
  cfg_.validate();
  if (state_.members.size() != cfg_.members) throw ConfigError("trainer member count does not match the ensemble");
  if (state_.config.method != cfg_.method || state_.config.fusion != cfg_.fusion)
    throw ConfigError("trainer method/fusion does not match the ensemble");
  impl_->graphs.resize(cfg_.fusion == FusionKind::none ? cfg_.members : 1);
  impl_->params = state_.parameter_ptrs();
  impl_->threads = cfg_.fusion == FusionKind::none ? resolve_threads(cfg_) : 1;
  impl_->share_rng.seed(derive_seed(cfg_.seed, kShareStream));
}

Trainer::~Trainer() = default;

Trainer::StepResult Trainer::compute_gradients(const Tensor& batch, std::span<const int> labels, std::size_t epoch) {
  const std::size_t m_count = state_.members.size();
  const std::size_t slots = state_.config.arch.output_dim();
  const std::size_t b_count = batch.dim(0);
  if (labels.size() != b_count) throw ConfigError("label count does not match the batch");
  for (Tensor* p : impl_->params) {
    p->enable_grad();
    p->zero_grad();
  }
  Tensor input = batch;
  if (input.shape().size() != state_.config.arch.input_shape.size() + 1) {
    Shape flat{b_count};
    flat.insert(flat.end(), state_.config.arch.input_shape.begin(), state_.config.arch.input_shape.end());
    input = input.reshaped(flat);
  }

  std::vector<Var> logits(m_count);
  if (cfg_.fusion == FusionKind::none) {
    parallel_for(m_count, impl_->threads, [&](std::size_t m) {
      Graph& g = impl_->graphs[m];
      g.clear();
      logits[m] = state_.members[m].forward(g, g.input(input)).logits;
    });
  } else {
    Graph& g = impl_->graphs[0];
    g.clear();
    Var in = g.input(input);
    std::vector<Var> taps;
    for (auto& member : state_.members) taps.push_back(member.stem(g, in));
    if (cfg_.fusion == FusionKind::module) {
      Var fused = state_.fusion->fuse(g, taps);
      for (std::size_t m = 0; m < m_count; ++m)
        logits[m] = state_.members[m].head(g, state_.fusion->member_input(g, fused, taps[m]));
    } else {
      const SharePlan plan = plan_feature_share(m_count, b_count, cfg_.share_probability, impl_->share_rng);
      const std::vector<Var> shared = feature_share(g, taps, plan);
      for (std::size_t m = 0; m < m_count; ++m) logits[m] = state_.members[m].head(g, shared[m]);
    }
  }

  StepResult result;
  result.probs = Tensor({b_count, m_count, slots});
  for (std::size_t m = 0; m < m_count; ++m) {
    const Graph& g = impl_->graphs[cfg_.fusion == FusionKind::none ? m : 0];
    const Tensor& z = g.value(logits[m]);
    for (std::size_t b = 0; b < b_count; ++b) {
      const auto p = softmax(z.data().subspan(b * slots, slots));
      std::copy(p.begin(), p.end(), result.probs.data().begin() + static_cast<std::ptrdiff_t>((b * m_count + m) * slots));
    }
  }

  ObjectiveTerms terms;
  switch (cfg_.method) {
    case Method::ie: terms = ie_objective(result.probs, labels); break;
    case Method::smcl: terms = smcl_loss(result.probs, labels, cfg_.penalty.overlap); break;
    case Method::cmcl: terms = cmcl_loss(result.probs, labels, cfg_.penalty); break;
    case Method::amcl:
      terms = amcl_objective(epoch, result.probs, labels, state_.specialization, cfg_.penalty);
      break;
  }
  if (!std::isfinite(terms.value)) throw NumericError(step_diagnostic(result.probs, epoch, impl_->step));

  // Mean over the batch; v is a constant of the step.
  const double scale = 1.0 / static_cast<double>(b_count);
  if (cfg_.fusion == FusionKind::none) {
    parallel_for(m_count, impl_->threads, [&](std::size_t m) {
      Graph& g = impl_->graphs[m];
      g.backward(ops::softmax_cross_entropy(g, logits[m], member_weights(terms.weights, m, scale)));
    });
  } else {
    Graph& g = impl_->graphs[0];
    Var total = ops::softmax_cross_entropy(g, logits[0], member_weights(terms.weights, 0, scale));
    for (std::size_t m = 1; m < m_count; ++m)
      total = ops::add(g, total, ops::softmax_cross_entropy(g, logits[m], member_weights(terms.weights, m, scale)));
    g.backward(total);
  }

  result.loss = terms.value;
  result.assignment = std::move(terms.assignment);
  result.phase = terms.phase;
  return result;
}

void Trainer::apply_update() {
  sgd_.step(impl_->params);
  ++impl_->step;
  for (const Tensor* p : impl_->params) p->require_finite("parameters after SGD step " + std::to_string(impl_->step));
}

EpochRecord Trainer::run_epoch(const LabeledDataset& data, std::size_t epoch) {
  if (epoch == 0) throw ConfigError("epochs are numbered from 1");
  if (data.num_classes != state_.config.num_classes())
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, ensemble expects " +
                      std::to_string(state_.config.num_classes()));
  const std::size_t n = data.size();
  if (n == 0) throw InputError("cannot train on an empty dataset");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffle_rng(derive_seed(derive_seed(cfg_.seed, kShuffleStream), epoch));
  std::shuffle(order.begin(), order.end(), shuffle_rng);

  EpochRecord record;
  record.epoch = epoch;
  record.class_counts = Matrix<std::int64_t>(data.num_classes, state_.members.size());
  const bool amcl = cfg_.method == Method::amcl;
  const bool lba = !amcl || epoch <= cfg_.penalty.threshold_epochs;
  record.phase = lba ? Phase::loss_based : Phase::memory_based;

  double total = 0.0;
  for (std::size_t start = 0; start < n; start += cfg_.batch_size) {
    const std::size_t len = std::min(cfg_.batch_size, n - start);
    const std::span<const std::size_t> idx(order.data() + start, len);
    const Tensor batch = data.batch(idx);
    const std::vector<int> labels = data.batch_labels(idx);
    StepResult step = compute_gradients(batch, labels, epoch);
    apply_update();
    total += step.loss;
    for (std::size_t j = 0; j < len; ++j)
      for (std::size_t m = 0; m < state_.members.size(); ++m)
        record.class_counts(static_cast<std::size_t>(labels[j]), m) += step.assignment(j, m);
    if (amcl && step.phase == Phase::loss_based) accumulate_counts(state_.counter, step.assignment, labels);
  }
  record.train_loss = total / static_cast<double>(n);
  state_.epochs_completed = epoch;

  if (amcl && lba) {
    state_.counter.mark_epoch();
    if (epoch == cfg_.penalty.threshold_epochs) {
      freeze_specialization();
      record.froze = true;
    }
  }
  if (cfg_.track_train_metrics) std::tie(record.oracle_error, record.top1_error) = ensemble_errors(state_, data);
  return record;
}

void Trainer::freeze_specialization() {
  if (state_.specialization.frozen || state_.counter.frozen())
    throw StateError("specialization is already fixed");
  state_.specialization = fix_specialization(state_.counter, cfg_.penalty.overlap);
  state_.counter.freeze();
}

std::pair<double, double> ensemble_errors(const EnsembleState& state, const LabeledDataset& data) {
  const EnsemblePrediction pred = summarize(state.predict(data), state.config.num_classes());
  return {oracle_error(per_model_argmax(pred.per_model), data.labels), top1_error(pred.averaged, data.labels)};
}

std::pair<EnsembleState, TrainLog> train(const LabeledDataset& data, const TrainConfig& cfg) {
  data.validate();
  EnsembleState state = EnsembleState::create(ensemble_config_for(data, cfg));
  TrainLog log;
  std::tie(log.initial_oracle_error, log.initial_top1_error) = ensemble_errors(state, data);
  if (cfg.method == Method::amcl && cfg.penalty.threshold_epochs >= cfg.epochs)
    log_warning("T_tau (" + std::to_string(cfg.penalty.threshold_epochs) + ") >= epochs (" +
                std::to_string(cfg.epochs) + "); memory-based assignment will not start");
  Trainer trainer(state, cfg);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    log.epochs.push_back(trainer.run_epoch(data, epoch));
    if (cfg.on_epoch_end) cfg.on_epoch_end(log.epochs.back(), state);
  }
  return {std::move(state), std::move(log)};
}

void write_train_log_csv(std::ostream& os, const TrainLog& log) {
  os << "epoch,phase,train_loss,oracle_error,top1_error,froze\n";
  os << "0,init,," << format_metric(log.initial_oracle_error) << ',' << format_metric(log.initial_top1_error)
     << ",0\n";
  for (const auto& e : log.epochs)
    os << e.epoch << ',' << phase_name(e.phase) << ',' << format_metric(e.train_loss) << ','
       << format_metric(e.oracle_error) << ',' << format_metric(e.top1_error) << ',' << (e.froze ? 1 : 0) << '\n';
}

}  // namespace amcl
