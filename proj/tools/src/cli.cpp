#include "amcl/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "amcl/checkpoint.hpp"
#include "amcl/errors.hpp"
#include "amcl/log.hpp"
#include "amcl/metrics.hpp"

namespace amcl::cli {
namespace fs = std::filesystem;
namespace {

const std::vector<std::string> kReports = {"errors", "histograms", "ce_split", "purity", "ood"};

std::string normalize_key(std::string_view key) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view s, std::string_view seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (seps.find(ch) != std::string_view::npos) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

std::size_t to_size(std::string_view key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(std::string_view key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size())
    throw ConfigError("'" + std::string(key) + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double to_double(std::string_view key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double out = std::stod(v, &used);
    if (used == v.size()) return out;
  } catch (const std::exception&) {
  }
  throw ConfigError("'" + std::string(key) + "' expects a number, got '" + v + "'");
}

std::string exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

template <typename T>
std::string join(const std::vector<T>& items, char sep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < items.size(); ++i) os << (i ? std::string(1, sep) : "") << items[i];
  return os.str();
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw InputError("cannot write '" + path.string() + "'");
  return f;
}

std::string w_string(const SpecializationMatrix& w) {
  std::string s;
  for (std::size_t c = 0; c < w.num_classes(); ++c) {
    if (c) s += ';';
    for (std::size_t m = 0; m < w.members(); ++m) s += w.flags(c, m) ? '1' : '0';
  }
  return s;
}

void write_matrix_csv(std::ostream& os, const char* value_name, std::size_t rows, std::size_t cols, auto&& at) {
  os << "class,model," << value_name << '\n';
  for (std::size_t c = 0; c < rows; ++c)
    for (std::size_t m = 0; m < cols; ++m) os << c << ',' << m << ',' << at(c, m) << '\n';
}

struct Evaluation {
  double oracle = 0.0, top1 = 0.0, top1_normalized = 0.0;
  std::vector<double> member;
  std::size_t rejected = 0;
  EnsemblePrediction pred;
  Tensor probs;
};

Evaluation evaluate(const EnsembleState& state, const LabeledDataset& data) {
  Evaluation e;
  e.probs = state.predict(data);
  e.pred = summarize(e.probs, state.config.num_classes());
  const Matrix<int> argmaxes = per_model_argmax(e.pred.per_model);
  e.oracle = oracle_error(argmaxes, data.labels);
  e.top1 = top1_error(e.pred.averaged, data.labels);
  e.top1_normalized = top1_error(e.pred.normalized, data.labels);
  for (std::size_t m = 0; m < state.members.size(); ++m) e.member.push_back(member_error(argmaxes, m, data.labels));
  e.rejected = static_cast<std::size_t>(std::count(e.pred.rejected.begin(), e.pred.rejected.end(), true));
  return e;
}

LabeledDataset test_split(const DatasetSpec& spec) { return make_dataset(spec, Split::test); }

fs::path checkpoint_path(const ExperimentConfig& cfg) {
  return cfg.checkpoint.empty() ? fs::path(cfg.out_dir) / "checkpoint.amc" : fs::path(cfg.checkpoint);
}

}  // namespace

void ExperimentConfig::set(std::string_view raw_key, const std::string& raw_value) {
  const std::string key = normalize_key(raw_key);
  const std::string value = trim(raw_value);
  TrainConfig& t = train;
  if (key == "method") t.method = parse_method(value);
  else if (key == "dataset") dataset = DatasetSpec::parse(value);
  else if (key == "ood_dataset") {
    if (value.empty()) ood_dataset.reset();
    else ood_dataset = DatasetSpec::parse(value);
  } else if (key == "members") t.members = to_size(key, value);
  else if (key == "overlap") t.penalty.overlap = to_size(key, value);
  else if (key == "beta") t.penalty.beta = to_double(key, value);
  else if (key == "gamma") t.penalty.gamma = to_double(key, value);
  else if (key == "t_tau") t.penalty.threshold_epochs = to_size(key, value);
  else if (key == "epochs") t.epochs = to_size(key, value);
  else if (key == "batch_size") t.batch_size = to_size(key, value);
  else if (key == "seed") t.seed = to_u64(key, value);
  else if (key == "fusion") t.fusion = parse_fusion(value);
  else if (key == "share_probability") t.share_probability = to_double(key, value);
  else if (key == "lr" || key == "learning_rate") t.sgd.learning_rate = to_double(key, value);
  else if (key == "momentum") t.sgd.momentum = to_double(key, value);
  else if (key == "weight_decay") t.sgd.weight_decay = to_double(key, value);
  else if (key == "arch") {
    if (value.empty() || value == "auto") t.arch.reset();
    else t.arch = parse_arch(value);
  } else if (key == "widths") {
    t.widths.clear();
    if (value != "default")
      for (const auto& w : split(value, ",+")) t.widths.push_back(to_size(key, w));
  } else if (key == "threads") t.threads = to_size(key, value);
  else if (key == "out") out_dir = value;
  else if (key == "checkpoint") checkpoint = value;
  else if (key == "checkpoint_every") checkpoint_every = to_size(key, value);
  else if (key == "methods") {
    methods.clear();
    for (const auto& m : split(value, ",+")) methods.push_back(parse_method(m));
  } else if (key == "reports") {
    reports.clear();
    for (const auto& r : split(value, ",+")) {
      if (std::find(kReports.begin(), kReports.end(), r) == kReports.end())
        throw ConfigError("unknown report '" + r + "' (expected " + join(kReports, ',') + ")");
      reports.push_back(r);
    }
  } else {
    throw ConfigError("unknown configuration key '" + std::string(raw_key) + "'");
  }
}

std::string ExperimentConfig::to_text() const {
  const TrainConfig& t = train;
  std::ostringstream os;
  os << "method = " << method_name(t.method) << '\n'
     << "dataset = " << dataset.to_string() << '\n'
     << "ood_dataset = " << (ood_dataset ? ood_dataset->to_string() : "") << '\n'
     << "members = " << t.members << '\n'
     << "overlap = " << t.penalty.overlap << '\n'
     << "beta = " << exact(t.penalty.beta) << '\n'
     << "gamma = " << exact(t.penalty.gamma) << '\n'
     << "t_tau = " << t.penalty.threshold_epochs << '\n'
     << "epochs = " << t.epochs << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "seed = " << t.seed << '\n'
     << "fusion = " << fusion_name(t.fusion) << '\n'
     << "share_probability = " << exact(t.share_probability) << '\n'
     << "lr = " << exact(t.sgd.learning_rate) << '\n'
     << "momentum = " << exact(t.sgd.momentum) << '\n'
     << "weight_decay = " << exact(t.sgd.weight_decay) << '\n'
     << "arch = " << (t.arch ? arch_name(*t.arch) : "auto") << '\n'
     << "widths = " << (t.widths.empty() ? std::string("default") : join(t.widths, ',')) << '\n'
     << "threads = " << t.threads << '\n'
     << "out = " << out_dir << '\n'
     << "checkpoint = " << checkpoint << '\n'
     << "checkpoint_every = " << checkpoint_every << '\n';
  std::vector<std::string> names;
  for (Method m : methods) names.emplace_back(method_name(m));
  os << "methods = " << join(names, ',') << '\n' << "reports = " << join(reports, ',') << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::from_text(std::string_view text) {
  ExperimentConfig cfg;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value': " + trim(line));
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void ExperimentConfig::validate() const {
  train.validate();
  dataset.validate();
  if (ood_dataset) ood_dataset->validate();
  if (out_dir.empty()) throw ConfigError("output directory must not be empty");
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream&) {
  cfg.validate();
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  const LabeledDataset train_data = make_dataset(cfg.dataset, Split::train);
  const LabeledDataset test_data = test_split(cfg.dataset);

  TrainConfig tc = cfg.train;
  tc.on_epoch_end = [&](const EpochRecord& r, const EnsembleState& s) {
    if (cfg.checkpoint_every > 0 && r.epoch % cfg.checkpoint_every == 0 && r.epoch < tc.epochs)
      save_checkpoint(s, (dir / ("checkpoint_epoch" + std::to_string(r.epoch) + ".amc")).string());
    out << "epoch " << r.epoch << '/' << tc.epochs << ' ' << phase_name(r.phase) << " loss "
        << format_metric(r.train_loss) << " oracle " << format_metric(r.oracle_error) << "% top1 "
        << format_metric(r.top1_error) << '%' << (r.froze ? " [specialization fixed]" : "") << '\n';
  };
  out << "training " << method_name(tc.method) << " M=" << tc.members << " K=" << tc.penalty.overlap << " on "
      << train_data.size() << " examples (" << cfg.dataset.to_string() << ")\n";
  auto [state, log] = train(train_data, tc);

  save_checkpoint(state, (dir / "checkpoint.amc").string());
  {
    auto f = open_out(dir / "train_log.csv");
    write_train_log_csv(f, log);
  }
  {
    auto f = open_out(dir / "purity_flow.csv");
    const auto snaps = log.count_snapshots();
    write_purity_csv(f, snaps, &state.specialization);
  }
  {
    auto f = open_out(dir / "counts.csv");
    const auto& counts = state.counter.counts();
    write_matrix_csv(f, "count", counts.rows(), counts.cols(), [&](std::size_t c, std::size_t m) { return counts(c, m); });
  }
  if (state.specialization.frozen) {
    auto f = open_out(dir / "specialization.csv");
    const auto& w = state.specialization.flags;
    write_matrix_csv(f, "flag", w.rows(), w.cols(), [&](std::size_t c, std::size_t m) { return w(c, m); });
  }
  {
    auto f = open_out(dir / "config.txt");
    f << cfg.to_text();
  }

  const Evaluation train_eval = evaluate(state, train_data);
  const Evaluation test_eval = evaluate(state, test_data);
  {
    auto f = open_out(dir / "summary.csv");
    f << "key,value\n"
      << "method," << method_name(tc.method) << '\n'
      << "members," << tc.members << '\n'
      << "overlap," << tc.penalty.overlap << '\n'
      << "fusion," << fusion_name(tc.fusion) << '\n'
      << "t_tau," << tc.penalty.threshold_epochs << '\n'
      << "epochs," << tc.epochs << '\n'
      << "seed," << tc.seed << '\n'
      << "train_examples," << train_data.size() << '\n'
      << "test_examples," << test_data.size() << '\n'
      << "dataset_checksum," << hex(train_data.checksum()) << '\n'
      << "parameter_checksum," << hex(state.checksum()) << '\n'
      << "final_train_loss," << format_metric(log.epochs.back().train_loss) << '\n'
      << "initial_train_oracle_error," << format_metric(log.initial_oracle_error) << '\n'
      << "train_oracle_error," << format_metric(train_eval.oracle) << '\n'
      << "train_top1_error," << format_metric(train_eval.top1) << '\n'
      << "test_oracle_error," << format_metric(test_eval.oracle) << '\n'
      << "test_top1_error," << format_metric(test_eval.top1) << '\n';
    for (std::size_t m = 0; m < test_eval.member.size(); ++m)
      f << "test_member" << m << "_error," << format_metric(test_eval.member[m]) << '\n';
    f << "specialization_frozen," << (state.specialization.frozen ? 1 : 0) << '\n'
      << "specialization," << (state.specialization.frozen ? w_string(state.specialization) : "") << '\n';
  }
  out << "test oracle error " << format_metric(test_eval.oracle) << "%, top-1 error " << format_metric(test_eval.top1)
      << "%\n"
      << "wrote " << dir.string() << '\n';
  return kSuccess;
}

int cmd_eval(const ExperimentConfig& cfg, std::ostream& out, std::ostream&) {
  const EnsembleState state = load_checkpoint(checkpoint_path(cfg).string());
  const std::size_t classes = state.config.num_classes();
  const bool aux = state.config.arch.auxiliary_head;
  const bool frozen = state.specialization.frozen;

  std::vector<std::string> reports = cfg.reports;
  const bool explicit_reports = !reports.empty();
  if (!explicit_reports) {
    reports = {"errors", "histograms"};
    if (frozen) reports.push_back("ce_split");
    if (state.config.method == Method::amcl) reports.push_back("purity");
    if (cfg.ood_dataset) reports.push_back("ood");
  }
  auto wants = [&](const char* r) { return std::find(reports.begin(), reports.end(), r) != reports.end(); };
  // Validate report/method compatibility before doing any work.
  if (wants("ood")) {
    if (!cfg.ood_dataset) throw ConfigError("the ood report needs --ood-dataset");
    if (!aux) throw UnsupportedError(std::string("OOD scores need an auxiliary-class head; checkpoint was trained with ") +
                                     method_name(state.config.method));
  }
  if (wants("ce_split") && !frozen) throw StateError("the ce_split report needs a fixed specialization matrix");

  const LabeledDataset data = test_split(cfg.dataset);
  if (data.num_classes != classes)
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, checkpoint expects " +
                      std::to_string(classes));
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  const Evaluation e = evaluate(state, data);

  std::ostringstream text;
  text << "method " << method_name(state.config.method) << ", M=" << state.members.size()
       << ", K=" << state.config.penalty.overlap << ", " << data.size() << " test examples\n";

  if (wants("errors")) {
    auto f = open_out(dir / "metrics.csv");
    f << "metric,value\n"
      << "examples," << data.size() << '\n'
      << "oracle_error," << format_metric(e.oracle) << '\n'
      << "top1_error," << format_metric(e.top1) << '\n'
      << "top1_error_normalized," << format_metric(e.top1_normalized) << '\n'
      << "rejected_examples," << e.rejected << '\n';
    for (std::size_t m = 0; m < e.member.size(); ++m)
      f << "member" << m << "_error," << format_metric(e.member[m]) << '\n';
    text << "oracle error " << format_metric(e.oracle) << "%\ntop-1 error " << format_metric(e.top1) << "%\n";
  }
  if (wants("histograms")) {
    auto summary = open_out(dir / "confidence_summary.csv");
    summary << "scope,class,median,mean\n";
    for (std::size_t c = 0; c < classes; ++c) {
      if (std::find(data.labels.begin(), data.labels.end(), static_cast<int>(c)) == data.labels.end()) continue;
      const Histogram h = confidence_histogram(e.pred.normalized, data.labels, c);
      auto f = open_out(dir / ("hist_ensemble_class" + std::to_string(c) + ".csv"));
      write_histogram_csv(f, h);
      summary << "ensemble," << c << ',' << format_metric(h.median) << ',' << format_metric(h.mean) << '\n';
      text << "class " << c << " ensemble confidence median " << format_metric(h.median) << '\n';
      for (std::size_t m = 0; m < state.members.size(); ++m) {
        Tensor member_scores({data.size(), classes});
        for (std::size_t b = 0; b < data.size(); ++b)
          for (std::size_t k = 0; k < classes; ++k)
            member_scores[b * classes + k] = e.pred.per_model[(b * state.members.size() + m) * classes + k];
        const Histogram hm = confidence_histogram(member_scores, data.labels, c);
        auto fm = open_out(dir / ("hist_model" + std::to_string(m) + "_class" + std::to_string(c) + ".csv"));
        write_histogram_csv(fm, hm);
        summary << "model" << m << ',' << c << ',' << format_metric(hm.median) << ',' << format_metric(hm.mean) << '\n';
      }
    }
  }
  if (wants("ce_split")) {
    const SplitSamples ce = cross_entropy_split(e.pred.per_model, data.labels, state.specialization);
    auto f = open_out(dir / "ce_split.csv");
    f << "bucket,cross_entropy\n";
    for (double v : ce.specialized) f << "specialized," << format_metric(v) << '\n';
    for (double v : ce.non_specialized) f << "non_specialized," << format_metric(v) << '\n';
    text << "cross-entropy mean specialized " << format_metric(mean(ce.specialized)) << ", non-specialized "
         << format_metric(mean(ce.non_specialized)) << '\n';
    if (aux) {
      const SplitSamples ap = aux_probability_split(e.probs, data.labels, state.specialization);
      auto fa = open_out(dir / "aux_split.csv");
      fa << "bucket,aux_probability\n";
      for (double v : ap.specialized) fa << "specialized," << format_metric(v) << '\n';
      for (double v : ap.non_specialized) fa << "non_specialized," << format_metric(v) << '\n';
    }
  }
  if (wants("purity")) {
    auto f = open_out(dir / "purity.csv");
    const std::vector<Matrix<std::int64_t>> snaps{state.counter.counts()};
    write_purity_csv(f, snaps, &state.specialization);
  }
  if (wants("ood")) {
    const LabeledDataset ood = test_split(*cfg.ood_dataset);
    const std::vector<double> in_scores = ood_score(e.probs, classes);
    const std::vector<double> ood_scores = ood_score(state.predict(ood), classes);
    auto f = open_out(dir / "ood_scores.csv");
    f << "index,ood_score\n";
    for (std::size_t b = 0; b < ood_scores.size(); ++b) f << b << ',' << format_metric(ood_scores[b]) << '\n';
    auto fs_ = open_out(dir / "ood_summary.csv");
    fs_ << "split,examples,mean_ood_score\n"
        << "in_distribution," << in_scores.size() << ',' << format_metric(mean(in_scores)) << '\n'
        << "ood," << ood_scores.size() << ',' << format_metric(mean(ood_scores)) << '\n';
    text << "mean OOD score in-distribution " << format_metric(mean(in_scores)) << ", unseen "
         << format_metric(mean(ood_scores)) << '\n';
  }
  {
    auto f = open_out(dir / "summary.txt");
    f << text.str();
  }
  out << text.str();
  return kSuccess;
}

int cmd_compare(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err) {
  cfg.dataset.validate();
  if (cfg.methods.empty()) throw ConfigError("compare needs --methods");
  const LabeledDataset train_data = make_dataset(cfg.dataset, Split::train);
  const LabeledDataset test_data = test_split(cfg.dataset);
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);

  std::ostringstream table;
  table << "method,oracle_error,top1_error,harmonic_mean,status\n";
  bool failed = false;
  for (Method method : cfg.methods) {
    TrainConfig tc = cfg.train;
    tc.method = method;
    out << "compare: training " << method_name(method) << '\n';
    try {
      auto [state, log] = train(train_data, tc);
      const Evaluation e = evaluate(state, test_data);
      const double hm = e.oracle + e.top1 > 0.0 ? 2.0 * e.oracle * e.top1 / (e.oracle + e.top1) : 0.0;
      table << method_name(method) << ',' << format_metric(e.oracle) << ',' << format_metric(e.top1) << ','
            << format_metric(hm) << ",ok\n";
    } catch (const Error& ex) {
      failed = true;
      err << "amcl: compare: " << method_name(method) << " failed: " << ex.what() << '\n';
      table << method_name(method) << ",,,,failed\n";
    }
  }
  {
    auto f = open_out(dir / "comparison.csv");
    f << table.str();
  }
  out << table.str();
  return failed ? kPartialFailure : kSuccess;
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Ensembles of specialists: IE, sMCL, CMCL and AMCL training and analysis", "amcl"};
  app.require_subcommand(1);

  struct FlagSpec {
    const char* flag;
    const char* help;
  };
  const std::vector<FlagSpec> train_flags = {
      {"method", "ie | smcl | cmcl | amcl"},
      {"dataset", "dataset spec, e.g. blobs:classes=4,dim=8 or images:classes=2"},
      {"members", "ensemble size M"},
      {"overlap", "members per example K (1 <= K <= M)"},
      {"beta", "penalty weight during loss-based assignment"},
      {"gamma", "penalty weight during memory-based assignment"},
      {"t-tau", "last loss-based epoch before specialization is fixed"},
      {"epochs", "training epochs"},
      {"batch-size", "minibatch size"},
      {"seed", "master seed"},
      {"fusion", "none | module | share"},
      {"share-probability", "per-row permutation probability for --fusion share"},
      {"lr", "SGD learning rate"},
      {"momentum", "SGD momentum"},
      {"weight-decay", "L2 weight decay"},
      {"arch", "auto | simple_cnn | mlp"},
      {"widths", "comma-separated conv filters / hidden sizes"},
      {"threads", "member-parallel workers (default: AMCL_THREADS or M)"},
      {"checkpoint-every", "also checkpoint every N epochs (0: final only)"},
      {"out", "output directory"},
  };
  const std::vector<FlagSpec> eval_flags = {
      {"checkpoint", "checkpoint file (default: <out>/checkpoint.amc)"},
      {"dataset", "dataset spec; its test split is evaluated"},
      {"ood-dataset", "unseen-distribution dataset spec for OOD scores"},
      {"reports", "comma list of errors,histograms,ce_split,purity,ood"},
      {"out", "output directory"},
  };

  struct Sub {
    CLI::App* app;
    std::map<std::string, std::string> values;
    std::vector<std::string> flags;
    std::string config;
  };
  std::map<std::string, Sub> subs;
  auto add_sub = [&](const std::string& name, const std::string& desc, std::vector<FlagSpec> flags) {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, desc);
    s.app->add_option("--config", s.config, "key = value config file; flags override it");
    for (const auto& f : flags) {
      s.flags.push_back(f.flag);
      s.app->add_option(std::string("--") + f.flag, s.values[f.flag], f.help);
    }
  };
  add_sub("train", "train one ensemble and write checkpoint, logs and reports", train_flags);
  add_sub("eval", "evaluate a checkpoint and write metric reports", eval_flags);
  auto compare_flags = train_flags;
  compare_flags.push_back({"methods", "comma list of methods to train under identical settings"});
  add_sub("compare", "train several methods under identical settings and tabulate errors", compare_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kSuccess : kUsageError;
  }

  try {
    for (auto& [name, s] : subs) {
      if (!s.app->parsed()) continue;
      ExperimentConfig cfg = s.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(s.config);
      for (const auto& flag : s.flags)
        if (s.app->count(std::string("--") + flag) > 0) cfg.set(flag, s.values[flag]);
      if (name == "train") return cmd_train(cfg, out, err);
      if (name == "eval") return cmd_eval(cfg, out, err);
      return cmd_compare(cfg, out, err);
    }
  } catch (const NumericError& e) {
    err << "amcl: numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const Error& e) {
    err << "amcl: error: " << e.what() << '\n';
    return kUsageError;
  } catch (const fs::filesystem_error& e) {
    err << "amcl: error: " << e.what() << '\n';
    return kUsageError;
  }
  return kUsageError;
}

}  // namespace amcl::cli
