#include "adat/train.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "adat/rng.hpp"

namespace adat {

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

void TrainSchedule::validate() const {
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
    throw std::invalid_argument("TrainSchedule: plateau factor must lie in (0, 1)");
  if (!(min_lr > 0.0)) throw std::invalid_argument("TrainSchedule: min_lr must be positive");
  if (plateau_patience < 1 || early_stop_patience < 1)
    throw std::invalid_argument("TrainSchedule: patiences must be at least 1");
  if (!(initial_lr > 0.0)) throw std::invalid_argument("TrainSchedule: learning rate must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    throw std::invalid_argument("TrainSchedule: label smoothing must lie in [0, 1)");
  if (max_epochs < 1 || batch_size < 1)
    throw std::invalid_argument("TrainSchedule: epochs and batch size must be at least 1");
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,learning_rate\n";
  for (const EpochStat& e : epochs)
    os << e.epoch << ',' << format_double(e.train_loss) << ',' << format_double(e.val_loss)
       << ',' << format_double(e.lr) << '\n';
  return os.str();
}

std::string TrainHistory::timing_csv() const {
  std::ostringstream os;
  os << "epoch,seconds\n";
  for (const EpochStat& e : epochs) os << e.epoch << ',' << format_double(e.seconds) << '\n';
  return os.str();
}

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, double min_lr,
                                   int plateau_patience, int stop_patience)
    : lr_(initial_lr),
      factor_(factor),
      min_lr_(min_lr),
      plateau_patience_(plateau_patience),
      stop_patience_(stop_patience),
      best_(std::numeric_limits<double>::infinity()) {}

void PlateauScheduler::observe(double val_loss) {
  ++epochs_seen_;
  if (val_loss < best_) {
    best_ = val_loss;
    best_epoch_ = epochs_seen_;
    bad_streak_ = 0;
    since_best_ = 0;
    return;
  }
  ++bad_streak_;
  ++since_best_;
  if (bad_streak_ >= plateau_patience_) {
    lr_ = std::max(lr_ * factor_, min_lr_);
    bad_streak_ = 0;
  }
}

AdamState AdamState::init_like(const ParamStore& params) {
  AdamState state;
  state.m.reserve(params.entries.size());
  state.v.reserve(params.entries.size());
  for (const auto& [name, t] : params.entries) {
    state.m.emplace_back(t.values.size(), 0.0);
    state.v.emplace_back(t.values.size(), 0.0);
  }
  return state;
}

Tensor smoothed_ce(Graph& g, const Tensor& logits, const std::vector<int>& targets,
                   double smoothing, int pad_id) {
  const Shape& shape = logits.shape();
  if (shape.size() != 2) throw std::invalid_argument("smoothed_ce: logits must be [T x V]");
  const std::size_t t_len = shape[0], vocab = shape[1];
  if (targets.size() != t_len)
    throw std::invalid_argument("smoothed_ce: " + std::to_string(targets.size()) +
                                " targets for " + std::to_string(t_len) + " rows");
  std::size_t active = 0;
  std::vector<double> weights(t_len * vocab, 0.0);
  for (std::size_t t = 0; t < t_len; ++t) {
    if (targets[t] == pad_id) continue;
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= vocab)
      throw std::invalid_argument("smoothed_ce: target " + std::to_string(targets[t]) +
                                  " outside vocabulary of " + std::to_string(vocab));
    ++active;
    const double uniform = smoothing / static_cast<double>(vocab);
    for (std::size_t v = 0; v < vocab; ++v) weights[t * vocab + v] = uniform;
    weights[t * vocab + static_cast<std::size_t>(targets[t])] += 1.0 - smoothing;
  }
  if (active == 0) throw std::invalid_argument("smoothed_ce: all targets are padding");
  Tensor w = g.constant({t_len, vocab}, std::move(weights));
  Tensor weighted = mul(log_softmax(logits, 1), w);
  return scale(sum(weighted), -1.0 / static_cast<double>(active));
}

void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads,
               AdamState& state, double lr, double weight_decay, const AdamHyper& hyper) {
  if (grads.size() != params.entries.size())
    throw std::invalid_argument("adam_step: gradient list does not match parameter store");
  ++state.step;
  const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    auto& [name, param] = params.entries[i];
    const std::vector<double>& grad = grads[i];
    if (grad.size() != param.values.size())
      throw std::invalid_argument("adam_step: gradient size mismatch for '" + name + "'");
    for (double gv : grad)
      if (!std::isfinite(gv))
        throw std::runtime_error("adam_step: non-finite gradient for '" + name + "'");
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    for (std::size_t j = 0; j < param.values.size(); ++j) {
      if (weight_decay != 0.0) param.values[j] *= 1.0 - lr * weight_decay;
      m[j] = hyper.beta1 * m[j] + (1.0 - hyper.beta1) * grad[j];
      v[j] = hyper.beta2 * v[j] + (1.0 - hyper.beta2) * grad[j] * grad[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      param.values[j] -= lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
  }
}

std::vector<int> stretch_targets(std::size_t frames, const std::vector<int>& tokens,
                                 int blank_id) {
  std::vector<int> targets(frames, blank_id);
  if (tokens.empty() || frames == 0) return targets;

  // Item list with an explicit blank between equal neighbours, truncated to
  // a prefix whose item count fits the frame budget.
  std::vector<int> items;
  for (int tok : tokens) {
    const std::size_t grows = (!items.empty() && items.back() == tok) ? 2 : 1;
    if (items.size() + grows > frames) break;
    if (grows == 2) items.push_back(blank_id);
    items.push_back(tok);
  }
  if (items.empty()) items.push_back(tokens.front());

  // Distribute frames evenly; every item spans at least one frame, so the
  // collapsed targets recover the (possibly truncated) token sequence.
  for (std::size_t f = 0; f < frames; ++f) targets[f] = items[f * items.size() / frames];
  return targets;
}

FrameStack clip_of(const SampleRecord& rec) {
  FrameStack clip = rec.frames;
  clip.frames = rec.frame_count;
  clip.values.resize(rec.frame_count * clip.frame_size());
  return clip;
}

Tensor sample_loss(const Model& model, Graph& g, const Model::Bound& p,
                   const SampleRecord& rec, double label_smoothing, bool training,
                   Rng* dropout_rng) {
  const ModelConfig& cfg = model.config();
  const FrameStack clip = clip_of(rec);
  const std::vector<int> text_content = strip_specials(rec.text_ids);

  switch (cfg.variant) {
    case Variant::adat:
    case Variant::encoder_decoder: {
      EncoderOutput enc = model.encode(g, p, clip, training, dropout_rng);
      // teacher forcing: inputs [<sos>, w1..wn], targets [w1..wn, <eos>]
      std::vector<int> inputs = {Vocab::kSos};
      inputs.insert(inputs.end(), text_content.begin(), text_content.end());
      std::vector<int> targets = text_content;
      targets.push_back(Vocab::kEos);

      Tensor text_loss = [&] {
        if (cfg.mode == Mode::s2g2t) {
          const std::vector<int> gloss_content = strip_specials(rec.gloss_ids);
          Tensor gmem = model.gloss_memory(g, p, gloss_content);
          return smoothed_ce(g, model.decode_teacher_forced(g, p, gmem, inputs, training,
                                                            dropout_rng),
                             targets, label_smoothing, Vocab::kPad);
        }
        Tensor memory = model.memory_for_decode(g, enc.memory);
        return smoothed_ce(g, model.decode_teacher_forced(g, p, memory, inputs, training,
                                                          dropout_rng),
                           targets, label_smoothing, Vocab::kPad);
      }();
      if (cfg.mode == Mode::s2g2t) {
        std::vector<int> frame_targets(rec.alignment.begin(),
                                       rec.alignment.begin() +
                                           static_cast<std::ptrdiff_t>(rec.frame_count));
        Tensor gloss_loss =
            smoothed_ce(g, *enc.gloss_logits, frame_targets, label_smoothing, /*pad_id=*/-1);
        return add(text_loss, gloss_loss);  // equal weights
      }
      return text_loss;
    }
    case Variant::encoder_only: {
      Tensor logits = model.frame_text_logits(g, p, clip, training, dropout_rng);
      const std::vector<int> targets =
          stretch_targets(rec.frame_count, text_content, model.text_blank_id());
      return smoothed_ce(g, logits, targets, label_smoothing, /*pad_id=*/-1);
    }
    case Variant::decoder_only: {
      Tensor logits = model.stream_logits(g, p, clip, text_content, training, dropout_rng);
      std::vector<int> targets = text_content;
      targets.push_back(Vocab::kEos);
      return smoothed_ce(g, logits, targets, label_smoothing, Vocab::kPad);
    }
  }
  throw std::logic_error("sample_loss: unhandled variant");
}

namespace {

double dataset_loss(const Model& model, const Dataset& dataset,
                    const std::vector<std::size_t>& indices, double label_smoothing) {
  if (indices.empty()) throw std::invalid_argument("dataset_loss: no samples");
  double total = 0.0;
  for (std::size_t idx : indices) {
    Graph g;
    Model::Bound p = model.bind(g, /*requires_grad=*/false);
    Tensor loss = sample_loss(model, g, p, dataset.records.at(idx), label_smoothing,
                              /*training=*/false, nullptr);
    total += loss.scalar();
  }
  return total / static_cast<double>(indices.size());
}

}  // namespace

TrainHistory train(Model& model, const Dataset& dataset,
                   const std::vector<std::size_t>& train_indices,
                   const std::vector<std::size_t>& val_indices, const TrainSchedule& schedule) {
  schedule.validate();
  if (train_indices.empty() || val_indices.empty())
    throw std::invalid_argument("train: empty train or validation split");

  PlateauScheduler scheduler(schedule.initial_lr, schedule.plateau_factor, schedule.min_lr,
                             schedule.plateau_patience, schedule.early_stop_patience);
  AdamState adam = AdamState::init_like(model.params());
  Rng shuffle_rng(schedule.seed);
  Rng dropout_rng(schedule.seed ^ 0x9E3779B97F4A7C15ull);

  TrainHistory history;
  history.stop_reason = "max_epochs";
  std::vector<std::size_t> order(train_indices);

  for (int epoch = 1; epoch <= schedule.max_epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    const double lr = scheduler.lr();
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    bool diverged = false;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(schedule.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(schedule.batch_size));
      Graph g;
      Model::Bound p = model.bind(g, /*requires_grad=*/true);
      Tensor batch_loss;
      for (std::size_t i = start; i < stop; ++i) {
        Tensor loss = sample_loss(model, g, p, dataset.records.at(order[i]),
                                  schedule.label_smoothing, /*training=*/true, &dropout_rng);
        batch_loss = i == start ? loss : add(batch_loss, loss);
      }
      const double count = static_cast<double>(stop - start);
      batch_loss = scale(batch_loss, 1.0 / count);
      const double loss_value = batch_loss.scalar();
      if (!std::isfinite(loss_value)) {
        diverged = true;
        break;
      }
      loss_sum += loss_value * count;
      g.backward(batch_loss);
      std::vector<std::vector<double>> grads;
      grads.reserve(p.leaves.size());
      for (const Tensor& leaf : p.leaves) grads.push_back(g.grad_of(leaf));
      adam_step(model.params(), grads, adam, lr, model.config().weight_decay);
    }
    if (diverged) {
      history.stop_reason = "diverged";
      break;
    }

    const double train_loss = loss_sum / static_cast<double>(order.size());
    const double val_loss = dataset_loss(model, dataset, val_indices, schedule.label_smoothing);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    history.epochs.push_back({epoch, train_loss, val_loss, lr, seconds});

    if (!std::isfinite(val_loss)) {
      history.stop_reason = "diverged";
      break;
    }
    scheduler.observe(val_loss);
    if (scheduler.should_stop()) {
      history.stop_reason = "early_stop";
      break;
    }
  }
  history.best_epoch = scheduler.best_epoch();
  return history;
}

EvalResult evaluate(const Model& model, const Dataset& dataset,
                    const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalResult result;
  std::vector<std::vector<int>> candidates, references;
  candidates.reserve(indices.size());
  references.reserve(indices.size());
  for (std::size_t idx : indices) {
    const SampleRecord& rec = dataset.records.at(idx);
    Translation tr = model.translate(rec);
    const std::vector<int> ref = strip_specials(rec.text_ids);
    candidates.push_back(tr.text_ids);
    references.push_back(ref);
    std::string line;
    for (std::size_t i = 0; i < tr.text_ids.size(); ++i) {
      if (i) line += ' ';
      line += dataset.text_vocab.token_of(tr.text_ids[i]);
    }
    line += '\t';
    for (std::size_t i = 0; i < ref.size(); ++i) {
      if (i) line += ' ';
      line += dataset.text_vocab.token_of(ref[i]);
    }
    result.translations.push_back(std::move(line));
  }
  result.report = bleu(candidates, references, 4);
  return result;
}

}  // namespace adat
