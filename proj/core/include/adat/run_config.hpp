#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "adat/data.hpp"
#include "adat/model.hpp"
#include "adat/train.hpp"

namespace adat {

// Raised for malformed configuration input; carries the offending line when
// parsing a file.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& msg, int line = 0)
      : std::invalid_argument(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

// Fully resolved run configuration: every key is validated against the
// schema below, unknown keys are rejected, and echo() emits the complete
// key=value listing so a run can be reproduced from its own output.
struct RunConfig {
  Precision precision = Precision::f64;
  std::uint64_t seed = 0;

  ModelConfig model;

  // schedule (initial rate comes from model.learning_rate)
  double plateau_factor = 0.5;
  double min_lr = 2e-6;
  int plateau_patience = 9;
  int early_stop_patience = 15;
  double label_smoothing = 0.1;
  int max_epochs = 50;
  int batch_size = 16;

  SynthSpec synth;

  double test_fraction = 0.2;
  int folds = 5;
  int val_fold = 0;

  std::string data_path;
  std::string checkpoint_path;
  std::string gloss_file;
  std::string text_file;
  std::string eval_split = "test";  // test | val | train | all

  long long flops_enc_len = 371;
  long long flops_mem_len = 27;
  long long flops_tgt_len = 52;

  void set(const std::string& key, const std::string& value);  // typed, throws ConfigError
  void apply_preset(const std::string& name);
  void merge_file(const std::string& path);
  std::string echo() const;  // parseable key=value lines in schema order

  TrainSchedule schedule() const;
  void validate() const;
};

// Known preset names: table3-s2g2t, table3-s2t, table5, desk-small.
std::vector<std::string> preset_names();

}  // namespace adat
