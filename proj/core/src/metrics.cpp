#include "amcl/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "amcl/autodiff.hpp"
#include "amcl/errors.hpp"
#include "amcl/probability.hpp"

namespace amcl {
namespace {

void check_batch(std::size_t batch, std::span<const int> labels) {
  if (labels.size() != batch)
    throw ConfigError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) + " predictions");
  if (batch == 0) throw InputError("empty evaluation split");
}

void check_w(const SpecializationMatrix& w, std::size_t members, std::size_t classes) {
  if (!w.frozen) throw StateError("specialization matrix has not been fixed");
  if (w.members() != members || w.num_classes() != classes)
    throw ConfigError("specialization matrix does not match the prediction shape");
}

}  // namespace

std::vector<double> strip_auxiliary(std::span<const double> p, std::size_t num_classes) {
  if (p.size() < num_classes) throw ConfigError("row shorter than the class count");
  return {p.begin(), p.begin() + static_cast<std::ptrdiff_t>(num_classes)};
}

Tensor strip_auxiliary(const Tensor& probs, std::size_t num_classes) {
  if (probs.rank() != 3) throw ConfigError("probabilities must be [B, M, C], got " + shape_string(probs.shape()));
  const std::size_t slots = probs.dim(2);
  if (slots != num_classes && slots != num_classes + 1)
    throw ConfigError("head width " + std::to_string(slots) + " does not fit " + std::to_string(num_classes) +
                      " classes");
  const std::size_t rows = probs.dim(0) * probs.dim(1);
  Tensor out({probs.dim(0), probs.dim(1), num_classes});
  for (std::size_t r = 0; r < rows; ++r)
    std::copy_n(probs.data().begin() + static_cast<std::ptrdiff_t>(r * slots), num_classes,
                out.data().begin() + static_cast<std::ptrdiff_t>(r * num_classes));
  return out;
}

AverageResult ensemble_average(const Matrix<double>& stripped, bool normalize) {
  if (stripped.rows() == 0) throw ConfigError("ensemble average needs at least one member");
  AverageResult out;
  out.values.assign(stripped.cols(), 0.0);
  for (std::size_t m = 0; m < stripped.rows(); ++m)
    for (std::size_t c = 0; c < stripped.cols(); ++c) out.values[c] += stripped(m, c);
  const double inv = 1.0 / static_cast<double>(stripped.rows());
  for (double& v : out.values) v *= inv;
  if (normalize) {
    const double total = std::accumulate(out.values.begin(), out.values.end(), 0.0);
    if (total > 0.0) {
      for (double& v : out.values) v /= total;
    } else {
      std::fill(out.values.begin(), out.values.end(), 0.0);
      out.rejected = true;
    }
  }
  return out;
}

EnsemblePrediction summarize(const Tensor& probs, std::size_t num_classes) {
  EnsemblePrediction out;
  out.per_model = strip_auxiliary(probs, num_classes);
  const std::size_t b_count = probs.dim(0), m_count = probs.dim(1);
  out.averaged = Tensor({b_count, num_classes});
  out.normalized = Tensor({b_count, num_classes});
  out.rejected.assign(b_count, false);
  Matrix<double> rows(m_count, num_classes);
  for (std::size_t b = 0; b < b_count; ++b) {
    std::copy_n(out.per_model.data().begin() + static_cast<std::ptrdiff_t>(b * m_count * num_classes),
                m_count * num_classes, rows.data().begin());
    const AverageResult avg = ensemble_average(rows, false);
    const AverageResult norm = ensemble_average(rows, true);
    std::copy(avg.values.begin(), avg.values.end(),
              out.averaged.data().begin() + static_cast<std::ptrdiff_t>(b * num_classes));
    std::copy(norm.values.begin(), norm.values.end(),
              out.normalized.data().begin() + static_cast<std::ptrdiff_t>(b * num_classes));
    out.rejected[b] = norm.rejected;
  }
  return out;
}

Matrix<int> per_model_argmax(const Tensor& stripped) {
  if (stripped.rank() != 3) throw ConfigError("expected [B, M, N_c] probabilities");
  const std::size_t b_count = stripped.dim(0), m_count = stripped.dim(1), c_count = stripped.dim(2);
  Matrix<int> out(b_count, m_count);
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t m = 0; m < m_count; ++m)
      out(b, m) = static_cast<int>(argmax(stripped.data().subspan((b * m_count + m) * c_count, c_count)));
  return out;
}

double oracle_error(const Matrix<int>& per_model_argmax, std::span<const int> labels) {
  check_batch(per_model_argmax.rows(), labels);
  std::size_t wrong = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const auto row = per_model_argmax.row(b);
    if (std::find(row.begin(), row.end(), labels[b]) == row.end()) ++wrong;
  }
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double top1_error(const Tensor& scores, std::span<const int> labels) {
  if (scores.rank() != 2) throw ConfigError("expected [B, N_c] ensemble scores");
  check_batch(scores.dim(0), labels);
  const std::size_t c_count = scores.dim(1);
  std::size_t wrong = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    if (static_cast<int>(argmax(scores.data().subspan(b * c_count, c_count))) != labels[b]) ++wrong;
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

double member_error(const Matrix<int>& per_model_argmax, std::size_t m, std::span<const int> labels) {
  check_batch(per_model_argmax.rows(), labels);
  if (m >= per_model_argmax.cols()) throw ConfigError("member index out of range");
  std::size_t wrong = 0;
  for (std::size_t b = 0; b < labels.size(); ++b)
    if (per_model_argmax(b, m) != labels[b]) ++wrong;
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

std::size_t Histogram::total() const noexcept { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Histogram confidence_histogram(const Tensor& scores, std::span<const int> labels, std::size_t c, std::size_t bins) {
  if (scores.rank() != 2) throw ConfigError("expected [B, N_c] ensemble scores");
  if (scores.dim(0) != labels.size()) throw ConfigError("score and label counts differ");
  if (c >= scores.dim(1)) throw ConfigError("class index out of range");
  if (bins == 0) throw ConfigError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t i = 0; i < bins; ++i) h.centers.push_back((static_cast<double>(i) + 0.5) / static_cast<double>(bins));
  std::vector<double> values;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] != static_cast<int>(c)) continue;
    const double v = std::clamp(scores[b * scores.dim(1) + c], 0.0, 1.0);
    values.push_back(v);
    // v == 1 lands in the top bin.
    ++h.counts[std::min(bins - 1, static_cast<std::size_t>(v * static_cast<double>(bins)))];
  }
  if (values.empty()) throw InputError("no test examples of class " + std::to_string(c));
  h.mean = mean(values);
  h.median = median(std::move(values));
  return h;
}

SplitSamples cross_entropy_split(const Tensor& stripped, std::span<const int> labels, const SpecializationMatrix& w) {
  if (stripped.rank() != 3) throw ConfigError("expected [B, M, N_c] stripped probabilities");
  const std::size_t b_count = stripped.dim(0), m_count = stripped.dim(1), c_count = stripped.dim(2);
  check_w(w, m_count, c_count);
  check_batch(b_count, labels);
  SplitSamples out;
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t m = 0; m < m_count; ++m) {
      const auto row = stripped.data().subspan((b * m_count + m) * c_count, c_count);
      const double total = std::accumulate(row.begin(), row.end(), 0.0);
      const double p = total > 0.0 ? row[static_cast<std::size_t>(labels[b])] / total : 0.0;
      const double ce = neg_log_clamped(p);
      (w.flags(static_cast<std::size_t>(labels[b]), m) ? out.specialized : out.non_specialized).push_back(ce);
    }
  return out;
}

SplitSamples aux_probability_split(const Tensor& probs, std::span<const int> labels, const SpecializationMatrix& w) {
  if (probs.rank() != 3) throw ConfigError("expected [B, M, C] probabilities");
  const std::size_t b_count = probs.dim(0), m_count = probs.dim(1), slots = probs.dim(2);
  if (slots < 3) throw UnsupportedError("auxiliary probabilities need an auxiliary head");
  check_w(w, m_count, slots - 1);
  check_batch(b_count, labels);
  SplitSamples out;
  for (std::size_t b = 0; b < b_count; ++b)
    for (std::size_t m = 0; m < m_count; ++m) {
      const double aux = probs[(b * m_count + m) * slots + slots - 1];
      (w.flags(static_cast<std::size_t>(labels[b]), m) ? out.specialized : out.non_specialized).push_back(aux);
    }
  return out;
}

std::vector<double> ood_score(const Tensor& probs, std::size_t num_classes) {
  if (probs.rank() != 3) throw ConfigError("expected [B, M, C] probabilities");
  if (probs.dim(2) != num_classes + 1)
    throw UnsupportedError("OOD score needs an auxiliary-class head (method amcl)");
  const std::size_t b_count = probs.dim(0), m_count = probs.dim(1), slots = probs.dim(2);
  std::vector<double> out(b_count, 0.0);
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t m = 0; m < m_count; ++m) out[b] += probs[(b * m_count + m) * slots + num_classes];
    out[b] /= static_cast<double>(m_count);
  }
  return out;
}

std::vector<Matrix<double>> purity_flow(std::span<const Matrix<std::int64_t>> snapshots) {
  std::vector<Matrix<double>> out;
  out.reserve(snapshots.size());
  for (const auto& counts : snapshots) {
    Matrix<double> ratios(counts.rows(), counts.cols());
    for (std::size_t c = 0; c < counts.rows(); ++c) {
      const std::int64_t total = counts.row_sum(c);
      if (total == 0) continue;
      for (std::size_t m = 0; m < counts.cols(); ++m)
        ratios(c, m) = static_cast<double>(counts(c, m)) / static_cast<double>(total);
    }
    out.push_back(std::move(ratios));
  }
  return out;
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::string format_metric(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", value);
  return buf;
}

void write_histogram_csv(std::ostream& os, const Histogram& h) {
  os << "bin_center,count\n";
  for (std::size_t i = 0; i < h.counts.size(); ++i) os << format_metric(h.centers[i]) << ',' << h.counts[i] << '\n';
}

void write_purity_csv(std::ostream& os, std::span<const Matrix<std::int64_t>> snapshots, const SpecializationMatrix* w) {
  os << "epoch,class,model,count,ratio,specialized\n";
  const auto flow = purity_flow(snapshots);
  for (std::size_t e = 0; e < snapshots.size(); ++e)
    for (std::size_t c = 0; c < snapshots[e].rows(); ++c)
      for (std::size_t m = 0; m < snapshots[e].cols(); ++m) {
        const bool flagged = w && w->frozen && w->flags(c, m);
        os << e + 1 << ',' << c << ',' << m << ',' << snapshots[e](c, m) << ',' << format_metric(flow[e](c, m)) << ','
           << (flagged ? 1 : 0) << '\n';
      }
}

}  // namespace amcl
