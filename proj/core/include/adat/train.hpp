#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adat/bleu.hpp"
#include "adat/data.hpp"
#include "adat/model.hpp"
#include "adat/tensor.hpp"

namespace adat {

struct TrainSchedule {
  double initial_lr = 1e-3;
  double plateau_factor = 0.5;
  double min_lr = 2e-6;
  int plateau_patience = 9;     // epochs without improvement before halving
  int early_stop_patience = 15; // epochs without improvement before stopping
  double label_smoothing = 0.1;
  int max_epochs = 50;
  int batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochStat {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // wall clock, excluded from the deterministic table
};

struct TrainHistory {
  std::vector<EpochStat> epochs;
  std::string stop_reason;  // max_epochs | early_stop | diverged
  int best_epoch = 0;       // 1-based epoch with the lowest validation loss

  std::string to_csv() const;      // epoch,train_loss,val_loss,learning_rate
  std::string timing_csv() const;  // epoch,seconds
};

// Validation-loss driven schedule: multiply the rate by `factor` after
// `plateau_patience` consecutive epochs without a strict improvement
// (bounded below by min_lr), stop after `stop_patience` epochs without
// improvement. Reductions reset the plateau counter but not the stop
// counter.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, double min_lr, int plateau_patience,
                   int stop_patience);

  void observe(double val_loss);  // call once per epoch after validation
  double lr() const { return lr_; }
  bool should_stop() const { return since_best_ >= stop_patience_; }
  int best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }
  int epochs_seen() const { return epochs_seen_; }

 private:
  double lr_;
  double factor_;
  double min_lr_;
  int plateau_patience_;
  int stop_patience_;
  double best_;
  int best_epoch_ = 0;
  int epochs_seen_ = 0;
  int bad_streak_ = 0;
  int since_best_ = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  long long step = 0;

  static AdamState init_like(const ParamStore& params);
};

// Mean label-smoothed cross-entropy over non-pad positions. The target
// distribution puts (1-s) on the true class plus s/V on every class.
Tensor smoothed_ce(Graph& g, const Tensor& logits, const std::vector<int>& targets,
                   double smoothing, int pad_id);

// Adam with bias correction and decoupled weight decay applied as
// p *= (1 - lr*wd) before the moment update. grads must align with the
// parameter store entry order.
void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr, double weight_decay, const AdamHyper& hyper = {});

// Frame-level targets for the encoder_only variant: tokens stretched evenly
// over the frames, with a blank inserted at boundaries between equal
// neighbouring tokens so that collapse recovers the sequence.
std::vector<int> stretch_targets(std::size_t frames, const std::vector<int>& tokens,
                                 int blank_id);

// Per-sample training loss for any model variant (teacher forcing;
// sign-to-gloss-to-text adds the frame-level gloss loss with equal weight).
Tensor sample_loss(const Model& model, Graph& g, const Model::Bound& p,
                   const SampleRecord& rec, double label_smoothing, bool training,
                   Rng* dropout_rng);

TrainHistory train(Model& model, const Dataset& dataset,
                   const std::vector<std::size_t>& train_indices,
                   const std::vector<std::size_t>& val_indices, const TrainSchedule& schedule);

struct EvalResult {
  BleuReport report;
  std::vector<std::string> translations;  // "candidate<TAB>reference" per sample
};

// Greedy decoding against reference text with specials excluded; pure.
EvalResult evaluate(const Model& model, const Dataset& dataset,
                    const std::vector<std::size_t>& indices);

// Unpadded view of a record's frames.
FrameStack clip_of(const SampleRecord& rec);

}  // namespace adat
