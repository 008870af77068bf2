#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <cstdio>

#include "adat/grad_check.hpp"
#include "adat/model.hpp"
#include "adat/train.hpp"

using namespace adat;

namespace {

ModelConfig toy_config(Variant variant = Variant::adat, Mode mode = Mode::s2t) {
  ModelConfig c;
  c.variant = variant;
  c.mode = mode;
  c.num_encoders = 1;
  c.num_decoders = 1;
  c.d_model = 8;
  c.heads = 2;
  c.ff_size = 16;
  c.stack_depth = 2;
  c.dropout = 0.0;
  c.gloss_vocab = 10;
  c.text_vocab = 12;
  c.max_video_len = 16;
  c.max_gloss_len = 8;
  c.max_text_len = 10;
  c.frame_channels = 1;
  c.frame_height = 6;
  c.frame_width = 6;
  c.conv_filters = 3;
  return c;
}

FrameStack random_clip(Rng& rng, std::size_t m, const ModelConfig& c) {
  FrameStack clip;
  clip.frames = m;
  clip.channels = static_cast<std::size_t>(c.frame_channels);
  clip.height = static_cast<std::size_t>(c.frame_height);
  clip.width = static_cast<std::size_t>(c.frame_width);
  clip.values.resize(m * clip.frame_size());
  for (double& v : clip.values) v = rng.uniform(0.0, 1.0);
  return clip;
}

}  // namespace

TEST_CASE("config validation enforces the documented invariants") {
  ModelConfig c = toy_config();
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);  // 8 % 5 != 0
  c = toy_config();
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = toy_config(Variant::encoder_only, Mode::s2g2t);
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);  // s2t-only baseline
  CHECK_NOTHROW(toy_config().validate());
}

TEST_CASE("config serialization round-trips") {
  ModelConfig c = ModelConfig::table3_s2t();
  c.gloss_vocab = 20;
  c.text_vocab = 30;
  ModelConfig back = ModelConfig::deserialize(c.serialize());
  CHECK(back.serialize() == c.serialize());
  CHECK(back.num_encoders == 1);
  CHECK(back.d_model == 512);
  CHECK(back.heads == 8);
  CHECK(back.dropout == 0.1);
}

TEST_CASE("tuned preset values match the published search results") {
  const ModelConfig g = ModelConfig::table3_s2g2t();
  CHECK(g.num_encoders == 12);
  CHECK(g.num_decoders == 12);
  CHECK(g.d_model == 1024);
  CHECK(g.heads == 16);
  CHECK(g.ff_size == 1024);
  CHECK(g.dropout == 0.0);
  CHECK(g.learning_rate == 5e-5);
  CHECK(g.weight_decay == 0.0);

  const ModelConfig t = ModelConfig::table3_s2t();
  CHECK(t.num_encoders == 1);
  CHECK(t.num_decoders == 1);
  CHECK(t.d_model == 512);
  CHECK(t.heads == 8);
  CHECK(t.ff_size == 1024);
  CHECK(t.dropout == 0.1);
  CHECK(t.learning_rate == 1e-3);
  CHECK(t.weight_decay == 1e-3);
}

TEST_CASE("temporal convolution handles identity and averaging kernels") {
  Graph g;
  const std::size_t d = 3;
  TensorData eye = TensorData::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) eye.values[i * d + i] = 1.0;
  TensorData zero = TensorData::zeros({d, d});
  Tensor bias = g.constant({d}, std::vector<double>(d, 0.0));

  // zero input, zero bias stays zero
  Tensor zeros_out = temporal_conv(g.constant({4, d}, std::vector<double>(4 * d, 0.0)),
                                   g.leaf(zero), g.leaf(eye), g.leaf(zero), bias);
  for (double v : zeros_out.values()) CHECK(v == 0.0);

  // center-tap identity reproduces relu(input)
  Rng rng(4);
  TensorData x = TensorData::zeros({5, d});
  for (double& v : x.values) v = rng.uniform(-1.0, 1.0);
  Tensor ident = temporal_conv(g.leaf(x), g.leaf(zero), g.leaf(eye), g.leaf(zero), bias);
  for (std::size_t i = 0; i < x.values.size(); ++i)
    CHECK(ident.values()[i] == doctest::Approx(std::max(0.0, x.values[i])).epsilon(1e-12));

  // all-(1/3) taps on a constant sequence: interior rows give c, boundaries see one zero pad
  TensorData third = TensorData::zeros({d, d});
  for (std::size_t i = 0; i < d; ++i) third.values[i * d + i] = 1.0 / 3.0;
  const double c = 0.9;
  Tensor avg = temporal_conv(g.constant({5, d}, std::vector<double>(5 * d, c)), g.leaf(third),
                             g.leaf(third), g.leaf(third), bias);
  for (std::size_t i = 1; i < 4; ++i)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(avg.values()[i * d + j] == doctest::Approx(c).epsilon(1e-12));
  for (std::size_t j = 0; j < d; ++j) {
    CHECK(avg.values()[j] == doctest::Approx(2.0 * c / 3.0).epsilon(1e-12));
    CHECK(avg.values()[4 * d + j] == doctest::Approx(2.0 * c / 3.0).epsilon(1e-12));
  }
}

TEST_CASE("encoder output keeps one row per frame for both parities") {
  Rng rng(17);
  Model model(toy_config(), 7);
  for (std::size_t m : {2u, 3u, 10u, 11u}) {
    Graph g;
    Model::Bound p = model.bind(g, false);
    EncoderOutput out = model.encode(g, p, random_clip(rng, m, model.config()), false, nullptr);
    CHECK(out.memory.shape() == Shape{m, 8});
    CHECK_FALSE(out.gloss_logits.has_value());
  }
  Graph g;
  Model::Bound p = model.bind(g, false);
  CHECK_THROWS_AS(model.encode(g, p, random_clip(rng, 1, model.config()), false, nullptr),
                  std::invalid_argument);
}

TEST_CASE("odd-length splits give the extra row to the convolution path") {
  // permuting frames that feed the gated half must not change the first
  // ceil(m/2) output rows (the convolution path half)
  Rng rng(23);
  Model model(toy_config(), 11);
  const std::size_t m = 11, m1 = 6;  // split 6/5
  FrameStack clip = random_clip(rng, m, model.config());

  auto encode_values = [&](const FrameStack& c) {
    Graph g;
    Model::Bound p = model.bind(g, false);
    return g.value_of(model.encode(g, p, c, false, nullptr).memory);
  };
  const TensorData base = encode_values(clip);

  FrameStack permuted = clip;
  const std::size_t fs = clip.frame_size();
  // swap the last two frames (both inside the gated half)
  for (std::size_t i = 0; i < fs; ++i)
    std::swap(permuted.values[(m - 1) * fs + i], permuted.values[(m - 2) * fs + i]);
  const TensorData perm = encode_values(permuted);

  const std::size_t d = base.shape[1];
  for (std::size_t r = 0; r < m1; ++r)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(base.values[r * d + j] == doctest::Approx(perm.values[r * d + j]).epsilon(1e-12));
  // and the gated half did change
  double diff = 0.0;
  for (std::size_t r = m1; r < m; ++r)
    for (std::size_t j = 0; j < d; ++j) diff += std::fabs(base.values[r * d + j] - perm.values[r * d + j]);
  CHECK(diff > 1e-9);
}

TEST_CASE("adat encoder carries no positional stage while the canonical encoder does") {
  // with every frame identical, the adat gated half collapses to identical
  // rows (attention over identical rows is position-free); the canonical
  // encoder injects position and keeps the rows distinct
  Rng rng(29);
  const std::size_t m = 9;
  ModelConfig base = toy_config();
  FrameStack clip = random_clip(rng, 1, base);
  FrameStack repeated = clip;
  repeated.frames = m;
  repeated.values.resize(m * clip.frame_size());
  for (std::size_t f = 1; f < m; ++f)
    std::copy_n(repeated.values.begin(), clip.frame_size(),
                repeated.values.begin() + static_cast<std::ptrdiff_t>(f * clip.frame_size()));

  auto run = [&](Variant variant) {
    Model model(toy_config(variant), 3);
    Graph g;
    Model::Bound p = model.bind(g, false);
    return g.value_of(model.encode(g, p, repeated, false, nullptr).memory);
  };

  const TensorData adat_mem = run(Variant::adat);
  const std::size_t d = adat_mem.shape[1];
  const std::size_t m1 = (m + 1) / 2;
  double gated_spread = 0.0;
  for (std::size_t r = m1 + 1; r < m; ++r)
    for (std::size_t j = 0; j < d; ++j)
      gated_spread += std::fabs(adat_mem.values[r * d + j] - adat_mem.values[m1 * d + j]);
  CHECK(gated_spread <= 1e-9);

  const TensorData canon_mem = run(Variant::encoder_decoder);
  double canon_spread = 0.0;
  for (std::size_t r = 1; r < m; ++r)
    for (std::size_t j = 0; j < d; ++j)
      canon_spread += std::fabs(canon_mem.values[r * d + j] - canon_mem.values[0 * d + j]);
  CHECK(canon_spread > 1e-6);
}

TEST_CASE("gloss head shape contract and uniform start") {
  Model model(toy_config(Variant::adat, Mode::s2g2t), 5);
  Rng rng(31);
  Graph g;
  Model::Bound p = model.bind(g, false);
  EncoderOutput out = model.encode(g, p, random_clip(rng, 6, model.config()), false, nullptr);
  REQUIRE(out.gloss_logits.has_value());
  CHECK(out.gloss_logits->shape() == Shape{6, 11});  // gloss_vocab + blank

  // zero head weights: post-softmax distribution is uniform
  model.params().at("gloss_head.w").values.assign(8 * 11, 0.0);
  model.params().at("gloss_head.b").values.assign(11, 0.0);
  Graph g2;
  Model::Bound p2 = model.bind(g2, false);
  EncoderOutput out2 = model.encode(g2, p2, random_clip(rng, 4, model.config()), false, nullptr);
  Tensor probs = softmax(*out2.gloss_logits, 1);
  for (double v : probs.values()) CHECK(v == doctest::Approx(1.0 / 11).epsilon(1e-9));

  // s2t models refuse the gloss head
  Model s2t(toy_config(), 5);
  Graph g3;
  Model::Bound p3 = s2t.bind(g3, false);
  Tensor memory = g3.constant({3, 8}, std::vector<double>(24, 0.1));
  CHECK_THROWS_AS(s2t.gloss_head(g3, p3, memory), std::invalid_argument);
}

TEST_CASE("collapse_decode removes repeats then blanks") {
  const int blank = 99;
  CHECK(collapse_decode({1, 1, 2, 2, 2, 3}, blank) == std::vector<int>{1, 2, 3});
  CHECK(collapse_decode({1, blank, 1}, blank) == std::vector<int>{1, 1});
  CHECK(collapse_decode({blank, blank, blank}, blank).empty());
  CHECK(collapse_decode({}, blank).empty());

  // idempotence on already-collapsed sequences
  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> seq;
    int prev = -1;
    for (std::size_t i = 0; i < 1 + rng.index(8); ++i) {
      int v = static_cast<int>(rng.index(5));
      if (v == prev) continue;
      seq.push_back(v);
      prev = v;
    }
    CHECK(collapse_decode(seq, blank) == seq);
  }
}

TEST_CASE("causal decoding: earlier logits ignore later target tokens") {
  Model model(toy_config(), 13);
  Rng rng(43);
  Graph g;
  Model::Bound p = model.bind(g, false);
  Tensor memory = model.encode(g, p, random_clip(rng, 4, model.config()), false, nullptr).memory;

  const std::vector<int> ids_a = {Vocab::kSos, 5, 6, 7};
  const std::vector<int> ids_b = {Vocab::kSos, 5, 6, 9};  // differs only at the last position
  TensorData la = g.value_of(model.decode_teacher_forced(g, p, memory, ids_a, false, nullptr));
  TensorData lb = g.value_of(model.decode_teacher_forced(g, p, memory, ids_b, false, nullptr));
  const std::size_t v = la.shape[1];
  for (std::size_t t = 0; t < 3; ++t)  // rows before the change are identical
    for (std::size_t j = 0; j < v; ++j)
      CHECK(la.values[t * v + j] == doctest::Approx(lb.values[t * v + j]).epsilon(1e-12));
}

TEST_CASE("model variants build, count parameters deterministically and translate") {
  Rng rng(47);
  SynthSpec spec;
  spec.n_samples = 4;
  spec.gloss_vocab_size = 5;
  spec.text_vocab_size = 12;
  spec.max_gloss_len = 3;
  spec.channels = 1;
  spec.height = 6;
  spec.width = 6;
  spec.max_video_len = 16;
  Dataset ds = synth_generate(spec, 99);

  for (Variant variant : {Variant::adat, Variant::encoder_decoder, Variant::encoder_only,
                          Variant::decoder_only}) {
    CAPTURE(to_string(variant));
    ModelConfig c = toy_config(variant);
    c.gloss_vocab = ds.gloss_vocab.size();
    c.text_vocab = ds.text_vocab.size();
    c.max_gloss_len = static_cast<int>(ds.max_gloss_len);
    c.max_text_len = static_cast<int>(ds.max_text_len);
    c.max_video_len = static_cast<int>(ds.max_video_len);
    Model a(c, 2024);
    Model b(c, 2024);
    CHECK(a.parameter_count() == b.parameter_count());
    CHECK(a.params().entries.size() == b.params().entries.size());
    for (std::size_t i = 0; i < a.params().entries.size(); ++i)
      CHECK(a.params().entries[i].second.values == b.params().entries[i].second.values);

    Translation tr = a.translate(ds.records[0]);
    for (int id : tr.text_ids) {
      CHECK(id >= 0);
      CHECK(id < c.text_vocab);
    }
  }
  CHECK_THROWS_AS(variant_from_string("mystery"), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip config and parameters") {
  ModelConfig c = toy_config(Variant::adat, Mode::s2g2t);
  Model model(c, 31337);
  const std::string path = "model_checkpoint_test.adat";
  save_model(path, model);
  Model back = load_model(path);
  CHECK(back.config().serialize() == model.config().serialize());
  REQUIRE(back.params().entries.size() == model.params().entries.size());
  for (std::size_t i = 0; i < back.params().entries.size(); ++i) {
    const auto& [name, value] = back.params().entries[i];
    const auto& [ename, evalue] = model.params().entries[i];
    CHECK(name == ename);
    REQUIRE(value.values.size() == evalue.values.size());
    // values pass through 32-bit storage
    for (std::size_t j = 0; j < value.values.size(); ++j)
      CHECK(value.values[j] == static_cast<double>(static_cast<float>(evalue.values[j])));
  }
  std::remove(path.c_str());
}

TEST_CASE("composed translation pass matches finite differences end to end") {
  // features -> encode -> decode -> loss on a 4-frame toy configuration,
  // differentiating through every parameter
  ModelConfig c = toy_config();
  Model model(c, 71);
  Rng rng(71);
  const FrameStack clip = random_clip(rng, 4, c);
  const std::vector<int> inputs = {Vocab::kSos, 5, 6};
  const std::vector<int> targets = {5, 6, Vocab::kEos};

  std::vector<TensorData> leaf_values;
  for (const auto& [name, value] : model.params().entries) leaf_values.push_back(value);

  GradReport report = grad_check(
      [&](Graph& g, const std::vector<Tensor>& in) {
        Model::Bound p;
        p.graph = &g;
        p.model = &model;
        p.leaves = in;
        EncoderOutput enc = model.encode(g, p, clip, false, nullptr);
        Tensor logits = model.decode_teacher_forced(g, p, enc.memory, inputs, false, nullptr);
        return smoothed_ce(g, logits, targets, 0.1, Vocab::kPad);
      },
      leaf_values, 1e-3);
  CAPTURE(report.max_rel_error);
  CAPTURE(report.note);
  CHECK(report.pass);
}
