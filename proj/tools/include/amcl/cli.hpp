#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "amcl/dataset.hpp"
#include "amcl/trainer.hpp"

namespace amcl::cli {

enum ExitCode : int { kSuccess = 0, kPartialFailure = 1, kUsageError = 2, kNumericFailure = 3 };

/// Everything one experiment needs. The file form is flat `key = value`
/// lines; '#' starts a comment.
struct ExperimentConfig {
  TrainConfig train;
  DatasetSpec dataset = DatasetSpec::parse("blobs:classes=4,dim=8");
  std::optional<DatasetSpec> ood_dataset;
  std::string out_dir = "amcl_out";
  std::string checkpoint;           // eval input; default <out>/checkpoint.amc
  std::size_t checkpoint_every = 0; // train: extra checkpoint_epoch<N>.amc every N epochs
  std::vector<Method> methods;      // compare
  std::vector<std::string> reports; // eval; empty selects every applicable report

  /// Applies one key (flag name with '-' or '_') to the config.
  void set(std::string_view key, const std::string& value);
  std::string to_text() const;
  static ExperimentConfig from_text(std::string_view text);
  static ExperimentConfig load(const std::string& path);
  void validate() const;
};

int cmd_train(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_eval(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);
int cmd_compare(const ExperimentConfig& cfg, std::ostream& out, std::ostream& err);

/// Entry point behind the `amcl` executable.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace amcl::cli
