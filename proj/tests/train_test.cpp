#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "adat/data.hpp"
#include "adat/grad_check.hpp"
#include "adat/model.hpp"
#include "adat/train.hpp"

using namespace adat;

namespace {

SynthSpec tiny_spec() {
  SynthSpec spec;
  spec.n_samples = 20;
  spec.gloss_vocab_size = 6;
  spec.text_vocab_size = 14;
  spec.max_gloss_len = 3;
  spec.frames_per_gloss_min = 2;
  spec.frames_per_gloss_max = 3;
  spec.channels = 1;
  spec.height = 8;
  spec.width = 8;
  spec.noise = 0.02;
  spec.max_video_len = 9;
  return spec;
}

ModelConfig tiny_model(const Dataset& ds, Variant variant = Variant::adat,
                       Mode mode = Mode::s2t) {
  ModelConfig c;
  c.variant = variant;
  c.mode = mode;
  c.num_encoders = 1;
  c.num_decoders = 1;
  c.d_model = 16;
  c.heads = 2;
  c.ff_size = 32;
  c.stack_depth = 2;
  c.learning_rate = 3e-3;
  c.gloss_vocab = ds.gloss_vocab.size();
  c.text_vocab = ds.text_vocab.size();
  c.max_video_len = static_cast<int>(ds.max_video_len);
  c.max_gloss_len = static_cast<int>(ds.max_gloss_len);
  c.max_text_len = static_cast<int>(ds.max_text_len);
  c.frame_channels = static_cast<int>(ds.channels);
  c.frame_height = static_cast<int>(ds.height);
  c.frame_width = static_cast<int>(ds.width);
  c.conv_filters = 4;
  return c;
}

}  // namespace

TEST_CASE("smoothed cross-entropy matches closed forms") {
  // uniform logits: loss = ln V for any smoothing level
  for (double s : {0.0, 0.1, 0.3}) {
    Graph g;
    Tensor logits = g.constant({2, 5}, std::vector<double>(10, 0.0));
    Tensor loss = smoothed_ce(g, logits, {1, 4}, s, Vocab::kPad - 1);
    CHECK(loss.scalar() == doctest::Approx(std::log(5.0)).epsilon(1e-12));
  }

  // without smoothing, extreme correct logits drive the loss to zero
  {
    Graph g;
    Tensor logits = g.constant({1, 3}, {30.0, 0.0, 0.0});
    Tensor loss = smoothed_ce(g, logits, {0}, 0.0, -1);
    CHECK(loss.scalar() <= 1e-9);
  }

  // two classes, flat logits, smoothing 0.1: ln 2
  {
    Graph g;
    Tensor logits = g.constant({1, 2}, {0.0, 0.0});
    Tensor loss = smoothed_ce(g, logits, {0}, 0.1, -1);
    CHECK(loss.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
}

TEST_CASE("smoothed cross-entropy skips pad positions and rejects all-pad targets") {
  Graph g;
  Tensor logits = g.constant({3, 4}, std::vector<double>(12, 0.0));
  Tensor loss = smoothed_ce(g, logits, {2, Vocab::kPad, Vocab::kPad}, 0.1, Vocab::kPad);
  CHECK(loss.scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(
      smoothed_ce(g, logits, {Vocab::kPad, Vocab::kPad, Vocab::kPad}, 0.1, Vocab::kPad),
      std::invalid_argument);
  CHECK_THROWS_AS(smoothed_ce(g, logits, {9, 0, 0}, 0.1, Vocab::kPad), std::invalid_argument);
}

TEST_CASE("smoothed cross-entropy is invariant to per-position logit shifts") {
  Rng rng(55);
  for (int trial = 0; trial < 10; ++trial) {
    TensorData logits = TensorData::zeros({3, 6});
    for (double& v : logits.values) v = rng.uniform(-2.0, 2.0);
    TensorData shifted = logits;
    for (std::size_t t = 0; t < 3; ++t) {
      const double c = rng.uniform(-5.0, 5.0);
      for (std::size_t v = 0; v < 6; ++v) shifted.values[t * 6 + v] += c;
    }
    Graph g;
    const std::vector<int> targets = {1, 5, 3};
    const double a = smoothed_ce(g, g.leaf(logits), targets, 0.1, -1).scalar();
    const double b = smoothed_ce(g, g.leaf(shifted), targets, 0.1, -1).scalar();
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
  }
}

TEST_CASE("smoothed cross-entropy differentiates cleanly") {
  Rng rng(66);
  TensorData logits = TensorData::zeros({4, 5});
  for (double& v : logits.values) v = rng.uniform(-1.0, 1.0);
  GradReport report = grad_check(
      [](Graph& g, const std::vector<Tensor>& in) {
        return smoothed_ce(g, in[0], {1, 2, Vocab::kPad, 4}, 0.1, Vocab::kPad);
      },
      {logits}, 1e-4);
  CHECK(report.pass);
}

TEST_CASE("adam steps follow the update rules") {
  ParamStore params;
  params.add("w", TensorData({2}, {1.0, -2.0}));
  AdamState state = AdamState::init_like(params);

  // zero gradient, no decay: parameters unchanged
  adam_step(params, {{0.0, 0.0}}, state, 0.01, 0.0);
  CHECK(params.at("w").values[0] == 1.0);
  CHECK(params.at("w").values[1] == -2.0);

  // first step moves by -lr * sign(gradient) up to the epsilon correction
  ParamStore p2;
  p2.add("w", TensorData({2}, {0.5, 0.5}));
  AdamState s2 = AdamState::init_like(p2);
  adam_step(p2, {{0.25, -4.0}}, s2, 0.01, 0.0);
  CHECK(p2.at("w").values[0] == doctest::Approx(0.5 - 0.01).epsilon(1e-6));
  CHECK(p2.at("w").values[1] == doctest::Approx(0.5 + 0.01).epsilon(1e-6));

  // decoupled decay with zero gradient shrinks by (1 - lr*wd)
  ParamStore p3;
  p3.add("w", TensorData({1}, {2.0}));
  AdamState s3 = AdamState::init_like(p3);
  adam_step(p3, {{0.0}}, s3, 0.1, 1e-3);
  CHECK(p3.at("w").values[0] == doctest::Approx(2.0 * (1.0 - 0.1 * 1e-3)).epsilon(1e-15));

  // non-finite gradients abort with a diagnostic
  ParamStore p4;
  p4.add("w", TensorData({1}, {1.0}));
  AdamState s4 = AdamState::init_like(p4);
  CHECK_THROWS_WITH_AS(adam_step(p4, {{std::nan("")}}, s4, 0.1, 0.0), doctest::Contains("w"),
                       std::runtime_error);
}

TEST_CASE("plateau schedule halves after exactly nine bad epochs and floors") {
  PlateauScheduler sched(1e-3, 0.5, 2e-6, 9, 15);
  sched.observe(1.0);  // epoch 1: improvement over infinity
  CHECK(sched.lr() == 1e-3);
  for (int epoch = 2; epoch <= 9; ++epoch) {
    sched.observe(1.0);  // equal is not an improvement
    CHECK(sched.lr() == 1e-3);  // 8 bad epochs so far
  }
  sched.observe(1.0);  // ninth bad epoch triggers the reduction
  CHECK(sched.lr() == 5e-4);
  CHECK_FALSE(sched.should_stop());

  // an improvement resets both counters
  sched.observe(0.5);
  for (int i = 0; i < 8; ++i) sched.observe(0.6);
  CHECK(sched.lr() == 5e-4);
  sched.observe(0.6);
  CHECK(sched.lr() == 2.5e-4);

  // the floor holds under many reductions
  PlateauScheduler floor_sched(1e-5, 0.5, 2e-6, 1, 1000);
  floor_sched.observe(1.0);
  for (int i = 0; i < 50; ++i) floor_sched.observe(1.0);
  CHECK(floor_sched.lr() == 2e-6);
}

TEST_CASE("early stopping fires exactly at best epoch plus patience") {
  PlateauScheduler sched(1e-3, 0.5, 2e-6, 9, 15);
  sched.observe(1.0);  // best at epoch 1
  for (int epoch = 2; epoch <= 15; ++epoch) {
    sched.observe(2.0);
    CHECK_FALSE(sched.should_stop());
  }
  sched.observe(2.0);  // epoch 16 = best(1) + 15
  CHECK(sched.should_stop());
  CHECK(sched.best_epoch() == 1);

  // a late improvement pushes the stop boundary out
  PlateauScheduler sched2(1e-3, 0.5, 2e-6, 9, 15);
  sched2.observe(1.0);
  for (int epoch = 2; epoch <= 10; ++epoch) sched2.observe(2.0);
  sched2.observe(0.5);  // epoch 11 becomes the best
  for (int epoch = 12; epoch <= 25; ++epoch) {
    sched2.observe(2.0);
    CHECK_FALSE(sched2.should_stop());
  }
  sched2.observe(2.0);  // epoch 26 = 11 + 15
  CHECK(sched2.should_stop());
  CHECK(sched2.best_epoch() == 11);
}

TEST_CASE("frame-level stretch targets collapse back to the token sequence") {
  const int blank = 100;
  // tokens spread over frames, equal neighbours separated by a blank
  CHECK(stretch_targets(6, {1, 2, 3}, blank) == std::vector<int>{1, 1, 2, 2, 3, 3});
  CHECK(collapse_decode(stretch_targets(7, {4, 4, 5}, blank), blank) ==
        std::vector<int>{4, 4, 5});
  CHECK(stretch_targets(3, {}, blank) == std::vector<int>{blank, blank, blank});
  // too few frames for a repeated pair: the prefix survives
  CHECK(collapse_decode(stretch_targets(2, {2, 2}, blank), blank) == std::vector<int>{2});
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> tokens(1 + rng.index(6));
    for (int& t : tokens) t = static_cast<int>(rng.index(4));
    std::size_t needed = tokens.size();
    for (std::size_t i = 1; i < tokens.size(); ++i)
      if (tokens[i] == tokens[i - 1]) ++needed;
    const std::size_t frames = needed + rng.index(12);
    const std::vector<int> targets = stretch_targets(frames, tokens, blank);
    CHECK(collapse_decode(targets, blank) == tokens);
  }
}

TEST_CASE("training is deterministic and the rate sequence is non-increasing") {
  Dataset ds = synth_generate(tiny_spec(), 11);
  std::vector<std::size_t> train_idx, val_idx;
  for (std::size_t i = 0; i < 16; ++i) train_idx.push_back(i);
  for (std::size_t i = 16; i < 20; ++i) val_idx.push_back(i);

  TrainSchedule schedule;
  schedule.initial_lr = 3e-3;
  schedule.max_epochs = 4;
  schedule.batch_size = 8;
  schedule.seed = 21;

  auto run = [&] {
    Model model(tiny_model(ds), 21);
    return train(model, ds, train_idx, val_idx, schedule);
  };
  TrainHistory a = run();
  TrainHistory b = run();
  REQUIRE(a.epochs.size() == b.epochs.size());
  for (std::size_t i = 0; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].train_loss == b.epochs[i].train_loss);
    CHECK(a.epochs[i].val_loss == b.epochs[i].val_loss);
    CHECK(a.epochs[i].lr == b.epochs[i].lr);
  }
  for (std::size_t i = 1; i < a.epochs.size(); ++i) {
    CHECK(a.epochs[i].lr <= a.epochs[i - 1].lr);
    CHECK(a.epochs[i].lr >= 2e-6);
  }
  CHECK(a.to_csv() == b.to_csv());
}

TEST_CASE("every variant trains for an epoch and evaluates deterministically") {
  Dataset ds = synth_generate(tiny_spec(), 13);
  std::vector<std::size_t> train_idx, val_idx, test_idx;
  for (std::size_t i = 0; i < 14; ++i) train_idx.push_back(i);
  for (std::size_t i = 14; i < 17; ++i) val_idx.push_back(i);
  for (std::size_t i = 17; i < 20; ++i) test_idx.push_back(i);

  TrainSchedule schedule;
  schedule.initial_lr = 1e-3;
  schedule.max_epochs = 1;
  schedule.batch_size = 8;
  schedule.seed = 3;

  for (Variant variant : {Variant::adat, Variant::encoder_decoder, Variant::encoder_only,
                          Variant::decoder_only}) {
    CAPTURE(to_string(variant));
    Model model(tiny_model(ds, variant), 3);
    TrainHistory history = train(model, ds, train_idx, val_idx, schedule);
    CHECK(history.epochs.size() == 1);
    CHECK(std::isfinite(history.epochs[0].train_loss));
    EvalResult first = evaluate(model, ds, test_idx);
    EvalResult second = evaluate(model, ds, test_idx);
    CHECK(first.report.bleu == second.report.bleu);  // side-effect free
    CHECK(first.translations == second.translations);
  }

  // the gloss+text pipeline trains too
  Model joint(tiny_model(ds, Variant::adat, Mode::s2g2t), 3);
  TrainHistory history = train(joint, ds, train_idx, val_idx, schedule);
  CHECK(history.epochs.size() == 1);
  CHECK(std::isfinite(history.epochs[0].train_loss));
  EvalResult res = evaluate(joint, ds, test_idx);
  CHECK(res.report.bleu[0] >= 0.0);
}

TEST_CASE("a 20-sample set is overfit to a tenth of the initial loss") {
  Dataset ds = synth_generate(tiny_spec(), 17);
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < 20; ++i) train_idx.push_back(i);

  TrainSchedule schedule;
  schedule.initial_lr = 3e-3;
  schedule.max_epochs = 200;
  schedule.batch_size = 10;
  schedule.seed = 5;
  schedule.early_stop_patience = 200;  // validation equals train here; keep going
  schedule.label_smoothing = 0.0;      // smoothing puts a floor under the loss

  Model model(tiny_model(ds), 5);
  TrainHistory history = train(model, ds, train_idx, train_idx, schedule);
  REQUIRE(!history.epochs.empty());
  const double initial = history.epochs.front().train_loss;
  double best = initial;
  for (const EpochStat& e : history.epochs) best = std::min(best, e.train_loss);
  CAPTURE(initial);
  CAPTURE(best);
  CHECK(best < 0.1 * initial);
}
