#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "adat/attention.hpp"
#include "adat/data.hpp"
#include "adat/features.hpp"
#include "adat/rng.hpp"
#include "adat/tensor.hpp"

namespace adat {

enum class Mode { s2t, s2g2t };
enum class Variant { adat, encoder_decoder, encoder_only, decoder_only };

std::string to_string(Mode mode);
std::string to_string(Variant variant);
Mode mode_from_string(const std::string& s);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::adat;
  Mode mode = Mode::s2t;
  int num_encoders = 1;
  int num_decoders = 1;
  int d_model = 64;
  int heads = 4;
  int ff_size = 256;
  int stack_depth = 2;
  double dropout = 0.0;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  int gloss_vocab = 0;  // full vocabulary size, reserved ids included
  int text_vocab = 0;
  int max_video_len = 64;
  int max_gloss_len = 12;
  int max_text_len = 16;
  int frame_channels = 1;
  int frame_height = 16;
  int frame_width = 16;
  int conv_filters = 16;

  void validate() const;
  std::string serialize() const;  // single "key=value key=value ..." line
  static ModelConfig deserialize(const std::string& line);

  // Tuned settings for the two translation tasks.
  static ModelConfig table3_s2g2t();
  static ModelConfig table3_s2t();
};

struct ParamStore {
  std::vector<std::pair<std::string, TensorData>> entries;  // creation order
  std::unordered_map<std::string, std::size_t> index;

  void add(const std::string& name, TensorData value);
  TensorData& at(const std::string& name);
  const TensorData& at(const std::string& name) const;
  std::size_t total_elements() const;
};

struct EncoderOutput {
  Tensor memory;                       // [m x d_model]
  std::optional<Tensor> gloss_logits;  // [m x (gloss_vocab+1)] when mode is s2g2t
};

struct Translation {
  std::vector<int> text_ids;   // content ids, no specials
  std::vector<int> gloss_ids;  // predicted collapsed gloss (s2g2t only)
};

// Removes consecutive duplicates, then removes the blank class.
std::vector<int> collapse_decode(const std::vector<int>& classes, int blank_id);

// 1-D convolution along time: kernel width 3, zero same-padding, ReLU.
// w_prev/w_center/w_next are the [d x d] taps for rows t-1, t, t+1.
Tensor temporal_conv(const Tensor& x, const Tensor& w_prev, const Tensor& w_center,
                     const Tensor& w_next, const Tensor& bias);

TensorData sinusoidal_positional_encoding(std::size_t length, std::size_t d_model);

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.total_elements(); }

  // Materializes every parameter as a graph leaf in creation order.
  struct Bound {
    Graph* graph = nullptr;
    const Model* model = nullptr;
    std::vector<Tensor> leaves;
    Tensor at(const std::string& name) const;
  };
  Bound bind(Graph& g, bool requires_grad) const;

  // Encoder forward over the unpadded clip; requires at least 2 frames.
  EncoderOutput encode(Graph& g, const Bound& p, const FrameStack& clip, bool training,
                       Rng* dropout_rng) const;

  // Teacher-forced decoder logits [len(inputs) x text_vocab] via causal
  // self-attention and cross-attention over memory.
  Tensor decode_teacher_forced(Graph& g, const Bound& p, const Tensor& memory,
                               const std::vector<int>& input_ids, bool training,
                               Rng* dropout_rng) const;

  // Memory used by the decoder in sign-to-gloss-to-text: positionally
  // encoded gloss embeddings.
  Tensor gloss_memory(Graph& g, const Bound& p, const std::vector<int>& gloss_content_ids) const;

  // The decoder input stream is positionally encoded; for the position-free
  // encoder this is where order information enters the video memory. The
  // canonical encoder already carries positions, so its memory passes
  // through unchanged.
  Tensor memory_for_decode(Graph& g, const Tensor& encoder_memory) const;

  // Position-wise gloss logits [m x (gloss_vocab+1)]; sign-to-gloss-to-text only.
  Tensor gloss_head(Graph& g, const Bound& p, const Tensor& memory) const;

  // encoder_only: per-frame text logits [m x (text_vocab+1)].
  Tensor frame_text_logits(Graph& g, const Bound& p, const FrameStack& clip, bool training,
                           Rng* dropout_rng) const;

  // decoder_only: logits [len(input_ids)+1 x text_vocab] over the single
  // causal stream [features, separator, text tokens]; row j predicts text
  // token j.
  Tensor stream_logits(Graph& g, const Bound& p, const FrameStack& clip,
                       const std::vector<int>& input_ids, bool training, Rng* dropout_rng) const;

  // Greedy argmax decoding from <sos> until <eos> or the length limit.
  std::vector<int> greedy_from_memory(Graph& g, const Bound& p, const Tensor& memory) const;

  // Full per-variant translation of one record (no dropout).
  Translation translate(const SampleRecord& rec) const;

  int text_blank_id() const { return config_.text_vocab; }
  int gloss_blank_id() const { return config_.gloss_vocab; }

 private:
  Tensor features_projected(Graph& g, const Bound& p, const FrameStack& clip) const;
  Tensor adat_encoder_block(Graph& g, const Bound& p, const Tensor& x, int block, bool training,
                            Rng* dropout_rng) const;
  Tensor canonical_encoder_block(Graph& g, const Bound& p, const Tensor& x, int block,
                                 bool training, Rng* dropout_rng) const;
  Tensor feed_forward(Graph& g, const Bound& p, const Tensor& x, const std::string& prefix,
                      bool training, Rng* dropout_rng) const;
  Tensor maybe_dropout(const Tensor& x, bool training, Rng* dropout_rng) const;
  Tensor positional(Graph& g, const Tensor& x, std::size_t offset) const;

  ModelConfig config_;
  ParamStore params_;
  TensorData positional_table_;
};

Model build_model(const ModelConfig& config, std::uint64_t seed);

// Checkpoint: serialized config header line plus one named tensor per
// parameter.
void save_model(const std::string& path, const Model& model);
Model load_model(const std::string& path);

}  // namespace adat
