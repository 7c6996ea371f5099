#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "amcl/matrix.hpp"
#include "amcl/mcl_losses.hpp"
#include "amcl/tensor.hpp"

namespace amcl {

/// First `num_classes` entries of each row; no renormalisation.
std::vector<double> strip_auxiliary(std::span<const double> p, std::size_t num_classes);
/// [B, M, C'] -> [B, M, num_classes], C' in {num_classes, num_classes + 1}.
Tensor strip_auxiliary(const Tensor& probs, std::size_t num_classes);

struct AverageResult {
  std::vector<double> values;
  bool rejected = false;  // normalisation requested but every member put zero mass on the classes
};

/// Element-wise mean of M stripped rows [M x N_c]; with `normalize` the mean
/// is divided by its sum when that sum is positive.
AverageResult ensemble_average(const Matrix<double>& stripped, bool normalize);

/// Ensemble view of one batch of predictions.
struct EnsemblePrediction {
  Tensor per_model;   // [B, M, N_c] stripped
  Tensor averaged;    // [B, N_c]
  Tensor normalized;  // [B, N_c]; rejected rows are all zero
  std::vector<bool> rejected;
};

EnsemblePrediction summarize(const Tensor& probs, std::size_t num_classes);

/// argmax over stripped rows, [B x M].
Matrix<int> per_model_argmax(const Tensor& stripped);

/// Percent of examples that every member misclassifies.
double oracle_error(const Matrix<int>& per_model_argmax, std::span<const int> labels);
/// Percent of examples whose argmax over `scores` [B, N_c] is wrong.
double top1_error(const Tensor& scores, std::span<const int> labels);
/// Percent error of member m alone.
double member_error(const Matrix<int>& per_model_argmax, std::size_t m, std::span<const int> labels);

struct Histogram {
  std::vector<double> centers;
  std::vector<std::size_t> counts;
  double median = 0.0;
  double mean = 0.0;
  std::size_t total() const noexcept;
};

/// Histogram of `scores[:, c]` over examples labelled c, uniform bins on [0, 1].
Histogram confidence_histogram(const Tensor& scores, std::span<const int> labels, std::size_t c,
                               std::size_t bins = 20);

struct SplitSamples {
  std::vector<double> specialized;
  std::vector<double> non_specialized;
};

/// Per (example, member): cross-entropy of the member's stripped,
/// renormalised row against the label, bucketed by w[label][member].
SplitSamples cross_entropy_split(const Tensor& stripped, std::span<const int> labels, const SpecializationMatrix& w);

/// Per (example, member): auxiliary-slot probability, bucketed like
/// cross_entropy_split.
SplitSamples aux_probability_split(const Tensor& probs, std::span<const int> labels, const SpecializationMatrix& w);

/// Per input: mean auxiliary probability over members. Needs aux heads.
std::vector<double> ood_score(const Tensor& probs, std::size_t num_classes);

/// Each count snapshot [N_c x M] with its class rows normalised to sum to 1.
/// All-zero rows stay zero.
std::vector<Matrix<double>> purity_flow(std::span<const Matrix<std::int64_t>> snapshots);

double mean(std::span<const double> values);
double median(std::vector<double> values);

/// Fixed "%.10g" formatting shared by every CSV writer.
std::string format_metric(double value);

void write_histogram_csv(std::ostream& os, const Histogram& h);
void write_purity_csv(std::ostream& os, std::span<const Matrix<std::int64_t>> snapshots,
                      const SpecializationMatrix* w = nullptr);

}  // namespace amcl
