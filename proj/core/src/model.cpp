#include "adat/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "adat/tensor_io.hpp"

namespace adat {

namespace {

constexpr double kLayerNormEps = 1e-5;

std::string block_name(const char* group, int i, const char* leafname) {
  return std::string(group) + std::to_string(i) + "." + leafname;
}

}  // namespace

std::string to_string(Mode mode) { return mode == Mode::s2t ? "s2t" : "s2g2t"; }

std::string to_string(Variant variant) {
  switch (variant) {
    case Variant::adat: return "adat";
    case Variant::encoder_decoder: return "encoder_decoder";
    case Variant::encoder_only: return "encoder_only";
    case Variant::decoder_only: return "decoder_only";
  }
  return "adat";
}

Mode mode_from_string(const std::string& s) {
  if (s == "s2t") return Mode::s2t;
  if (s == "s2g2t") return Mode::s2g2t;
  throw std::invalid_argument("unknown mode '" + s + "' (expected s2t or s2g2t)");
}

Variant variant_from_string(const std::string& s) {
  if (s == "adat") return Variant::adat;
  if (s == "encoder_decoder") return Variant::encoder_decoder;
  if (s == "encoder_only") return Variant::encoder_only;
  if (s == "decoder_only") return Variant::decoder_only;
  throw std::invalid_argument("unknown model variant '" + s + "'");
}

void ModelConfig::validate() const {
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0)
    throw std::invalid_argument("ModelConfig: d_model " + std::to_string(d_model) +
                                " must be a positive multiple of heads " + std::to_string(heads));
  if (!(dropout >= 0.0 && dropout < 1.0))
    throw std::invalid_argument("ModelConfig: dropout must lie in [0, 1)");
  if (num_encoders < 1 || num_decoders < 1)
    throw std::invalid_argument("ModelConfig: layer counts must be at least 1");
  if (stack_depth < 1) throw std::invalid_argument("ModelConfig: stack_depth must be at least 1");
  if (ff_size < 1) throw std::invalid_argument("ModelConfig: ff_size must be at least 1");
  if (max_video_len < 1 || max_gloss_len < 1 || max_text_len < 1)
    throw std::invalid_argument("ModelConfig: max lengths must be at least 1");
  if (text_vocab < Vocab::kReserved)
    throw std::invalid_argument("ModelConfig: text vocabulary not set");
  if (mode == Mode::s2g2t && gloss_vocab < Vocab::kReserved)
    throw std::invalid_argument("ModelConfig: gloss vocabulary required for s2g2t");
  if (mode == Mode::s2g2t &&
      (variant == Variant::encoder_only || variant == Variant::decoder_only))
    throw std::invalid_argument("ModelConfig: " + to_string(variant) +
                                " supports only the s2t mode");
  if (frame_height < 3 || frame_width < 3 || frame_channels < 1)
    throw std::invalid_argument("ModelConfig: frame extents too small");
  if (conv_filters < 1) throw std::invalid_argument("ModelConfig: conv_filters must be positive");
}

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << " mode=" << to_string(mode)
     << " num_encoders=" << num_encoders << " num_decoders=" << num_decoders
     << " d_model=" << d_model << " heads=" << heads << " ff_size=" << ff_size
     << " stack_depth=" << stack_depth << " dropout=" << dropout
     << " learning_rate=" << learning_rate << " weight_decay=" << weight_decay
     << " gloss_vocab=" << gloss_vocab << " text_vocab=" << text_vocab
     << " max_video_len=" << max_video_len << " max_gloss_len=" << max_gloss_len
     << " max_text_len=" << max_text_len << " frame_channels=" << frame_channels
     << " frame_height=" << frame_height << " frame_width=" << frame_width
     << " conv_filters=" << conv_filters;
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& line) {
  ModelConfig c;
  std::istringstream is(line);
  std::string pair;
  while (is >> pair) {
    const auto eq = pair.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("ModelConfig: malformed entry '" + pair + "'");
    const std::string key = pair.substr(0, eq);
    const std::string value = pair.substr(eq + 1);
    if (key == "variant") c.variant = variant_from_string(value);
    else if (key == "mode") c.mode = mode_from_string(value);
    else if (key == "num_encoders") c.num_encoders = std::stoi(value);
    else if (key == "num_decoders") c.num_decoders = std::stoi(value);
    else if (key == "d_model") c.d_model = std::stoi(value);
    else if (key == "heads") c.heads = std::stoi(value);
    else if (key == "ff_size") c.ff_size = std::stoi(value);
    else if (key == "stack_depth") c.stack_depth = std::stoi(value);
    else if (key == "dropout") c.dropout = std::stod(value);
    else if (key == "learning_rate") c.learning_rate = std::stod(value);
    else if (key == "weight_decay") c.weight_decay = std::stod(value);
    else if (key == "gloss_vocab") c.gloss_vocab = std::stoi(value);
    else if (key == "text_vocab") c.text_vocab = std::stoi(value);
    else if (key == "max_video_len") c.max_video_len = std::stoi(value);
    else if (key == "max_gloss_len") c.max_gloss_len = std::stoi(value);
    else if (key == "max_text_len") c.max_text_len = std::stoi(value);
    else if (key == "frame_channels") c.frame_channels = std::stoi(value);
    else if (key == "frame_height") c.frame_height = std::stoi(value);
    else if (key == "frame_width") c.frame_width = std::stoi(value);
    else if (key == "conv_filters") c.conv_filters = std::stoi(value);
    else throw std::invalid_argument("ModelConfig: unknown key '" + key + "'");
  }
  return c;
}

ModelConfig ModelConfig::table3_s2g2t() {
  ModelConfig c;
  c.mode = Mode::s2g2t;
  c.num_encoders = 12;
  c.num_decoders = 12;
  c.d_model = 1024;
  c.heads = 16;
  c.ff_size = 1024;
  c.dropout = 0.0;
  c.learning_rate = 5e-5;
  c.weight_decay = 0.0;
  return c;
}

ModelConfig ModelConfig::table3_s2t() {
  ModelConfig c;
  c.mode = Mode::s2t;
  c.num_encoders = 1;
  c.num_decoders = 1;
  c.d_model = 512;
  c.heads = 8;
  c.ff_size = 1024;
  c.dropout = 0.1;
  c.learning_rate = 1e-3;
  c.weight_decay = 1e-3;
  return c;
}

void ParamStore::add(const std::string& name, TensorData value) {
  if (index.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
  index[name] = entries.size();
  entries.emplace_back(name, std::move(value));
}

TensorData& ParamStore::at(const std::string& name) {
  auto it = index.find(name);
  if (it == index.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return entries[it->second].second;
}

const TensorData& ParamStore::at(const std::string& name) const {
  auto it = index.find(name);
  if (it == index.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return entries[it->second].second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries) n += t.values.size();
  return n;
}

std::vector<int> collapse_decode(const std::vector<int>& classes, int blank_id) {
  std::vector<int> out;
  int prev = -1;
  for (int c : classes) {
    if (c != prev && c != blank_id) out.push_back(c);
    prev = c;
  }
  return out;
}

Tensor temporal_conv(const Tensor& x, const Tensor& w_prev, const Tensor& w_center,
                     const Tensor& w_next, const Tensor& bias) {
  Tensor acc = add(add(matmul(shift_rows(x, 1), w_prev), matmul(x, w_center)),
                   matmul(shift_rows(x, -1), w_next));
  return relu(add_rowwise(acc, bias));
}

TensorData sinusoidal_positional_encoding(std::size_t length, std::size_t d_model) {
  TensorData pe = TensorData::zeros({length, d_model});
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; 2 * i < d_model; ++i) {
      const double angle =
          static_cast<double>(pos) /
          std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      pe.values[pos * d_model + 2 * i] = std::sin(angle);
      if (2 * i + 1 < d_model) pe.values[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

namespace {

TensorData xavier(Rng& rng, std::size_t fan_in, std::size_t fan_out, Shape shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  TensorData t = TensorData::zeros(std::move(shape));
  for (double& v : t.values) v = rng.uniform(-limit, limit);
  return t;
}

TensorData embedding_init(Rng& rng, std::size_t vocab, std::size_t d) {
  const double limit = std::sqrt(3.0 / static_cast<double>(d));
  TensorData t = TensorData::zeros({vocab, d});
  for (double& v : t.values) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const std::size_t d = static_cast<std::size_t>(config_.d_model);
  const std::size_t ff = static_cast<std::size_t>(config_.ff_size);
  const std::size_t filters = static_cast<std::size_t>(config_.conv_filters);
  const std::size_t c = static_cast<std::size_t>(config_.frame_channels);
  const FeatureLayout layout =
      feature_layout(c, static_cast<std::size_t>(config_.frame_height),
                     static_cast<std::size_t>(config_.frame_width), filters);
  const std::size_t d_feat = layout.dim();

  auto add_linear = [&](const std::string& name, std::size_t in, std::size_t out) {
    params_.add(name, xavier(rng, in, out, {in, out}));
  };
  auto add_bias = [&](const std::string& name, std::size_t n) {
    params_.add(name, TensorData::zeros({n}));
  };
  auto add_ln = [&](const std::string& prefix) {
    params_.add(prefix + ".g", TensorData::full({d}, 1.0));
    params_.add(prefix + ".b", TensorData::zeros({d}));
  };
  auto add_attention = [&](const std::string& prefix) {
    add_linear(prefix + ".wq", d, d);
    add_linear(prefix + ".wk", d, d);
    add_linear(prefix + ".wv", d, d);
  };
  auto add_ff = [&](const std::string& prefix) {
    add_linear(prefix + ".w1", d, ff);
    add_bias(prefix + ".b1", ff);
    add_linear(prefix + ".w2", ff, d);
    add_bias(prefix + ".b2", d);
  };

  params_.add("features.conv.w", xavier(rng, c * 9, filters * 9, {filters, c, 3, 3}));
  add_bias("features.conv.b", filters);
  add_linear("features.proj.w", d_feat, d);

  const bool has_decoder =
      config_.variant == Variant::adat || config_.variant == Variant::encoder_decoder;
  const bool has_encoder_stack = config_.variant != Variant::decoder_only;

  if (has_encoder_stack) {
    for (int i = 0; i < config_.num_encoders; ++i) {
      if (config_.variant == Variant::adat) {
        add_linear(block_name("enc", i, "tconv.w0"), d, d);
        add_linear(block_name("enc", i, "tconv.w1"), d, d);
        add_linear(block_name("enc", i, "tconv.w2"), d, d);
        add_bias(block_name("enc", i, "tconv.b"), d);
        add_attention(block_name("enc", i, "attn"));
        add_linear(block_name("enc", i, "gate.w"), d, 2);
        add_bias(block_name("enc", i, "gate.b"), 2);
        add_ln(block_name("enc", i, "ln"));
      } else {
        add_attention(block_name("enc", i, "attn"));
        add_ff(block_name("enc", i, "ff"));
        add_ln(block_name("enc", i, "ln1"));
        add_ln(block_name("enc", i, "ln2"));
      }
    }
  }

  if (config_.mode == Mode::s2g2t) {
    const std::size_t vg = static_cast<std::size_t>(config_.gloss_vocab);
    add_linear("gloss_head.w", d, vg + 1);
    add_bias("gloss_head.b", vg + 1);
    params_.add("gloss_embed.w", embedding_init(rng, vg, d));
  }

  const std::size_t vt = static_cast<std::size_t>(config_.text_vocab);
  if (has_decoder) {
    params_.add("dec.embed.w", embedding_init(rng, vt, d));
    for (int i = 0; i < config_.num_decoders; ++i) {
      add_attention(block_name("dec", i, "self"));
      add_attention(block_name("dec", i, "cross"));
      add_ff(block_name("dec", i, "ff"));
      add_ln(block_name("dec", i, "ln1"));
      add_ln(block_name("dec", i, "ln2"));
      add_ln(block_name("dec", i, "ln3"));
    }
    add_linear("dec.out.w", d, vt);
    add_bias("dec.out.b", vt);
  } else if (config_.variant == Variant::encoder_only) {
    add_linear("text_head.w", d, vt + 1);
    add_bias("text_head.b", vt + 1);
  } else {  // decoder_only
    params_.add("dec.embed.w", embedding_init(rng, vt, d));
    params_.add("sep.w", embedding_init(rng, 1, d));
    for (int i = 0; i < config_.num_decoders; ++i) {
      add_attention(block_name("dec", i, "self"));
      add_ff(block_name("dec", i, "ff"));
      add_ln(block_name("dec", i, "ln1"));
      add_ln(block_name("dec", i, "ln2"));
    }
    add_linear("dec.out.w", d, vt);
    add_bias("dec.out.b", vt);
  }

  const std::size_t pe_len = static_cast<std::size_t>(config_.max_video_len) + 1 +
                             std::max(static_cast<std::size_t>(config_.max_text_len),
                                      static_cast<std::size_t>(config_.max_gloss_len));
  positional_table_ = sinusoidal_positional_encoding(pe_len, d);
}

Tensor Model::Bound::at(const std::string& name) const {
  auto it = model->params().index.find(name);
  if (it == model->params().index.end())
    throw std::invalid_argument("unknown parameter '" + name + "'");
  return leaves[it->second];
}

Model::Bound Model::bind(Graph& g, bool requires_grad) const {
  Bound bound;
  bound.graph = &g;
  bound.model = this;
  bound.leaves.reserve(params_.entries.size());
  for (const auto& [name, value] : params_.entries)
    bound.leaves.push_back(g.leaf(value, requires_grad));
  return bound;
}

Tensor Model::maybe_dropout(const Tensor& x, bool training, Rng* dropout_rng) const {
  if (!training || config_.dropout == 0.0) return x;
  if (dropout_rng == nullptr)
    throw std::invalid_argument("training with dropout requires a random source");
  return dropout(x, config_.dropout, *dropout_rng);
}

Tensor Model::positional(Graph& g, const Tensor& x, std::size_t offset) const {
  const std::size_t rows = x.shape().at(0);
  const std::size_t d = x.shape().at(1);
  if ((offset + rows) * d > positional_table_.values.size())
    throw std::invalid_argument("sequence longer than the positional table");
  std::vector<double> slice(positional_table_.values.begin() +
                                static_cast<std::ptrdiff_t>(offset * d),
                            positional_table_.values.begin() +
                                static_cast<std::ptrdiff_t>((offset + rows) * d));
  return add(x, g.constant({rows, d}, std::move(slice)));
}

Tensor Model::features_projected(Graph& g, const Bound& p, const FrameStack& clip) const {
  FeatureMatrix fm = extract_features(g, clip, p.at("features.conv.w"), p.at("features.conv.b"));
  return matmul(fm.x_e, p.at("features.proj.w"));
}

Tensor Model::adat_encoder_block(Graph& g, const Bound& p, const Tensor& x, int block,
                                 bool training, Rng* dropout_rng) const {
  (void)g;
  const std::size_t m = x.shape().at(0);
  const std::size_t m1 = (m + 1) / 2;  // odd lengths give the extra row to the conv path
  Tensor x1 = slice_rows(x, 0, m1);
  Tensor x2 = slice_rows(x, m1, m);

  Tensor conv_out = temporal_conv(x1, p.at(block_name("enc", block, "tconv.w0")),
                                  p.at(block_name("enc", block, "tconv.w1")),
                                  p.at(block_name("enc", block, "tconv.w2")),
                                  p.at(block_name("enc", block, "tconv.b")));

  AttentionParams attn;
  attn.w_q = p.at(block_name("enc", block, "attn.wq"));
  attn.w_k = p.at(block_name("enc", block, "attn.wk"));
  attn.w_v = p.at(block_name("enc", block, "attn.wv"));
  attn.heads = config_.heads;
  attn.stack_depth = config_.stack_depth;
  Tensor lssa_out = lssa_attend(x2, attn);

  Tensor values = matmul(x2, attn.w_v);
  Tensor pooled = broadcast_rows(gap(values), x2.shape().at(0));

  GateParams gate{p.at(block_name("enc", block, "gate.w")),
                  p.at(block_name("enc", block, "gate.b"))};
  Tensor gated = adaptive_gate(lssa_out, pooled, gate);

  conv_out = maybe_dropout(conv_out, training, dropout_rng);
  gated = maybe_dropout(gated, training, dropout_rng);
  Tensor merged = concat_rows({conv_out, gated});
  return layer_norm(merged, p.at(block_name("enc", block, "ln.g")),
                    p.at(block_name("enc", block, "ln.b")), kLayerNormEps);
}

Tensor Model::canonical_encoder_block(Graph& g, const Bound& p, const Tensor& x, int block,
                                      bool training, Rng* dropout_rng) const {
  AttentionParams attn;
  attn.w_q = p.at(block_name("enc", block, "attn.wq"));
  attn.w_k = p.at(block_name("enc", block, "attn.wk"));
  attn.w_v = p.at(block_name("enc", block, "attn.wv"));
  attn.heads = config_.heads;
  Tensor a = canonical_mha(x, x, x, attn, /*causal=*/false);
  Tensor h = layer_norm(add(x, maybe_dropout(a, training, dropout_rng)),
                        p.at(block_name("enc", block, "ln1.g")),
                        p.at(block_name("enc", block, "ln1.b")), kLayerNormEps);
  Tensor f = feed_forward(g, p, h, block_name("enc", block, "ff"), training, dropout_rng);
  return layer_norm(add(h, f), p.at(block_name("enc", block, "ln2.g")),
                    p.at(block_name("enc", block, "ln2.b")), kLayerNormEps);
}

Tensor Model::feed_forward(Graph& g, const Bound& p, const Tensor& x, const std::string& prefix,
                           bool training, Rng* dropout_rng) const {
  (void)g;
  Tensor h = relu(add_rowwise(matmul(x, p.at(prefix + ".w1")), p.at(prefix + ".b1")));
  Tensor out = add_rowwise(matmul(h, p.at(prefix + ".w2")), p.at(prefix + ".b2"));
  return maybe_dropout(out, training, dropout_rng);
}

EncoderOutput Model::encode(Graph& g, const Bound& p, const FrameStack& clip, bool training,
                            Rng* dropout_rng) const {
  if (config_.variant == Variant::decoder_only)
    throw std::invalid_argument("decoder_only has no encoder");
  if (clip.frames < 2)
    throw std::invalid_argument("encode: need at least 2 frames, got " +
                                std::to_string(clip.frames));
  Tensor x = features_projected(g, p, clip);
  if (config_.variant != Variant::adat) x = positional(g, x, 0);
  for (int i = 0; i < config_.num_encoders; ++i) {
    x = config_.variant == Variant::adat
            ? adat_encoder_block(g, p, x, i, training, dropout_rng)
            : canonical_encoder_block(g, p, x, i, training, dropout_rng);
  }
  EncoderOutput out;
  out.memory = x;
  if (config_.mode == Mode::s2g2t) out.gloss_logits = gloss_head(g, p, x);
  return out;
}

Tensor Model::gloss_head(Graph& g, const Bound& p, const Tensor& memory) const {
  (void)g;
  if (config_.mode != Mode::s2g2t)
    throw std::invalid_argument("gloss_head is only available in s2g2t mode");
  return add_rowwise(matmul(memory, p.at("gloss_head.w")), p.at("gloss_head.b"));
}

Tensor Model::gloss_memory(Graph& g, const Bound& p, const std::vector<int>& gloss_content_ids) const {
  if (gloss_content_ids.empty())
    throw std::invalid_argument("gloss_memory: empty gloss sequence");
  Tensor emb = gather_rows(p.at("gloss_embed.w"), gloss_content_ids);
  emb = scale(emb, std::sqrt(static_cast<double>(config_.d_model)));
  return positional(g, emb, 0);
}

Tensor Model::memory_for_decode(Graph& g, const Tensor& encoder_memory) const {
  if (config_.variant != Variant::adat) return encoder_memory;
  return positional(g, encoder_memory, 0);
}

Tensor Model::decode_teacher_forced(Graph& g, const Bound& p, const Tensor& memory,
                                    const std::vector<int>& input_ids, bool training,
                                    Rng* dropout_rng) const {
  if (memory.shape().at(0) == 0) throw std::invalid_argument("decode: empty memory");
  if (input_ids.empty()) throw std::invalid_argument("decode: empty input sequence");
  Tensor y = gather_rows(p.at("dec.embed.w"), input_ids);
  y = scale(y, std::sqrt(static_cast<double>(config_.d_model)));
  y = positional(g, y, 0);
  for (int i = 0; i < config_.num_decoders; ++i) {
    AttentionParams self_attn;
    self_attn.w_q = p.at(block_name("dec", i, "self.wq"));
    self_attn.w_k = p.at(block_name("dec", i, "self.wk"));
    self_attn.w_v = p.at(block_name("dec", i, "self.wv"));
    self_attn.heads = config_.heads;
    Tensor s = canonical_mha(y, y, y, self_attn, /*causal=*/true);
    y = layer_norm(add(y, maybe_dropout(s, training, dropout_rng)),
                   p.at(block_name("dec", i, "ln1.g")), p.at(block_name("dec", i, "ln1.b")),
                   kLayerNormEps);

    AttentionParams cross_attn;
    cross_attn.w_q = p.at(block_name("dec", i, "cross.wq"));
    cross_attn.w_k = p.at(block_name("dec", i, "cross.wk"));
    cross_attn.w_v = p.at(block_name("dec", i, "cross.wv"));
    cross_attn.heads = config_.heads;
    Tensor c = canonical_mha(y, memory, memory, cross_attn, /*causal=*/false);
    y = layer_norm(add(y, maybe_dropout(c, training, dropout_rng)),
                   p.at(block_name("dec", i, "ln2.g")), p.at(block_name("dec", i, "ln2.b")),
                   kLayerNormEps);

    Tensor f = feed_forward(g, p, y, block_name("dec", i, "ff"), training, dropout_rng);
    y = layer_norm(add(y, f), p.at(block_name("dec", i, "ln3.g")),
                   p.at(block_name("dec", i, "ln3.b")), kLayerNormEps);
  }
  return add_rowwise(matmul(y, p.at("dec.out.w")), p.at("dec.out.b"));
}

Tensor Model::frame_text_logits(Graph& g, const Bound& p, const FrameStack& clip, bool training,
                                Rng* dropout_rng) const {
  if (config_.variant != Variant::encoder_only)
    throw std::invalid_argument("frame_text_logits requires the encoder_only variant");
  EncoderOutput enc = encode(g, p, clip, training, dropout_rng);
  return add_rowwise(matmul(enc.memory, p.at("text_head.w")), p.at("text_head.b"));
}

Tensor Model::stream_logits(Graph& g, const Bound& p, const FrameStack& clip,
                            const std::vector<int>& input_ids, bool training,
                            Rng* dropout_rng) const {
  if (config_.variant != Variant::decoder_only)
    throw std::invalid_argument("stream_logits requires the decoder_only variant");
  Tensor feats = features_projected(g, p, clip);
  const std::size_t m = feats.shape().at(0);
  std::vector<Tensor> parts;
  parts.push_back(feats);
  Tensor sep = scale(p.at("sep.w"), std::sqrt(static_cast<double>(config_.d_model)));
  parts.push_back(sep);
  if (!input_ids.empty()) {
    Tensor emb = gather_rows(p.at("dec.embed.w"), input_ids);
    parts.push_back(scale(emb, std::sqrt(static_cast<double>(config_.d_model))));
  }
  Tensor stream = positional(g, concat_rows(parts), 0);
  for (int i = 0; i < config_.num_decoders; ++i) {
    AttentionParams self_attn;
    self_attn.w_q = p.at(block_name("dec", i, "self.wq"));
    self_attn.w_k = p.at(block_name("dec", i, "self.wk"));
    self_attn.w_v = p.at(block_name("dec", i, "self.wv"));
    self_attn.heads = config_.heads;
    Tensor s = canonical_mha(stream, stream, stream, self_attn, /*causal=*/true);
    stream = layer_norm(add(stream, maybe_dropout(s, training, dropout_rng)),
                        p.at(block_name("dec", i, "ln1.g")), p.at(block_name("dec", i, "ln1.b")),
                        kLayerNormEps);
    Tensor f = feed_forward(g, p, stream, block_name("dec", i, "ff"), training, dropout_rng);
    stream = layer_norm(add(stream, f), p.at(block_name("dec", i, "ln2.g")),
                        p.at(block_name("dec", i, "ln2.b")), kLayerNormEps);
  }
  // rows m .. m+len(input_ids) predict text tokens 0 .. len(input_ids)
  Tensor predict_rows = slice_rows(stream, m, m + 1 + input_ids.size());
  return add_rowwise(matmul(predict_rows, p.at("dec.out.w")), p.at("dec.out.b"));
}

std::vector<int> Model::greedy_from_memory(Graph& g, const Bound& p, const Tensor& memory) const {
  // Emit at most max_text_len - 2 tokens, the content capacity of a padded
  // [<sos> ... <eos>] sequence.
  const std::size_t limit = config_.max_text_len > 2
                                ? static_cast<std::size_t>(config_.max_text_len - 2)
                                : 0;
  std::vector<int> ids = {Vocab::kSos};
  std::vector<int> out;
  while (out.size() < limit) {
    Tensor logits = decode_teacher_forced(g, p, memory, ids, /*training=*/false, nullptr);
    const std::size_t last = logits.shape().at(0) - 1;
    const std::vector<int> arg = argmax_rows(logits);
    const int next = arg[last];
    if (next == Vocab::kEos) break;
    ids.push_back(next);
    out.push_back(next);
  }
  return out;
}

Translation Model::translate(const SampleRecord& rec) const {
  Graph g;
  Bound p = bind(g, /*requires_grad=*/false);
  FrameStack clip = rec.frames;
  clip.frames = rec.frame_count;
  clip.values.resize(rec.frame_count * clip.frame_size());
  Translation result;

  switch (config_.variant) {
    case Variant::adat:
    case Variant::encoder_decoder: {
      EncoderOutput enc = encode(g, p, clip, /*training=*/false, nullptr);
      if (config_.mode == Mode::s2g2t) {
        const std::vector<int> frame_classes = argmax_rows(*enc.gloss_logits);
        result.gloss_ids = collapse_decode(frame_classes, gloss_blank_id());
        if (result.gloss_ids.empty()) return result;  // nothing recognized
        Tensor memory = gloss_memory(g, p, result.gloss_ids);
        result.text_ids = greedy_from_memory(g, p, memory);
      } else {
        result.text_ids = greedy_from_memory(g, p, memory_for_decode(g, enc.memory));
      }
      return result;
    }
    case Variant::encoder_only: {
      Tensor logits = frame_text_logits(g, p, clip, /*training=*/false, nullptr);
      std::vector<int> classes = argmax_rows(logits);
      std::vector<int> collapsed = collapse_decode(classes, text_blank_id());
      for (int id : collapsed)
        if (id != Vocab::kPad && id != Vocab::kSos && id != Vocab::kEos)
          result.text_ids.push_back(id);
      return result;
    }
    case Variant::decoder_only: {
      const std::size_t limit = config_.max_text_len > 2
                                    ? static_cast<std::size_t>(config_.max_text_len - 2)
                                    : 0;
      std::vector<int> ids;
      while (ids.size() < limit) {
        Tensor logits = stream_logits(g, p, clip, ids, /*training=*/false, nullptr);
        const std::vector<int> arg = argmax_rows(logits);
        const int next = arg.back();
        if (next == Vocab::kEos) break;
        ids.push_back(next);
      }
      result.text_ids = ids;
      return result;
    }
  }
  return result;
}

Model build_model(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

void save_model(const std::string& path, const Model& model) {
  NamedTensors bundle;
  bundle.header = model.config().serialize();
  bundle.entries = model.params().entries;
  save_named_tensors(path, bundle);
}

Model load_model(const std::string& path) {
  NamedTensors bundle = load_named_tensors(path);
  ModelConfig config = ModelConfig::deserialize(bundle.header);
  Model model(config, /*seed=*/0);
  if (bundle.entries.size() != model.params().entries.size())
    throw std::runtime_error("checkpoint has " + std::to_string(bundle.entries.size()) +
                             " parameters, model expects " +
                             std::to_string(model.params().entries.size()));
  for (std::size_t i = 0; i < bundle.entries.size(); ++i) {
    auto& [name, value] = bundle.entries[i];
    auto& [expect_name, slot] = model.params().entries[i];
    if (name != expect_name)
      throw std::runtime_error("checkpoint parameter '" + name + "' does not match '" +
                               expect_name + "'");
    if (value.shape != slot.shape)
      throw std::runtime_error("checkpoint parameter '" + name + "' has shape " +
                               shape_str(value.shape) + ", expected " + shape_str(slot.shape));
    slot.values = std::move(value.values);
  }
  return model;
}

}  // namespace adat
