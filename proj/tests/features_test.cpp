#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "adat/features.hpp"
#include "adat/grad_check.hpp"
#include "adat/rng.hpp"

using namespace adat;

namespace {

FrameStack random_clip(Rng& rng, std::size_t m, std::size_t c, std::size_t h, std::size_t w) {
  FrameStack clip;
  clip.frames = m;
  clip.channels = c;
  clip.height = h;
  clip.width = w;
  clip.values.resize(m * c * h * w);
  for (double& v : clip.values) v = rng.uniform(0.0, 1.0);
  return clip;
}

TensorData random_kernels(Rng& rng, std::size_t filters, std::size_t c) {
  TensorData k = TensorData::zeros({filters, c, 3, 3});
  for (double& v : k.values) v = rng.uniform(-0.5, 0.5);
  return k;
}

}  // namespace

TEST_CASE("conv2d_relu zero frame with zero bias stays zero") {
  Graph g;
  Tensor frame = g.constant({1, 1, 4, 4}, std::vector<double>(16, 0.0));
  Rng rng(3);
  Tensor kernels = g.leaf(random_kernels(rng, 16, 1));
  Tensor bias = g.constant({16}, std::vector<double>(16, 0.0));
  Tensor out = conv2d_relu(frame, kernels, bias);
  CHECK(out.shape() == Shape{1, 16, 2, 2});
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("conv2d_relu with an averaging kernel reproduces brute-force window means") {
  // 4x4 ramp, one 3x3 kernel of 1/9
  std::vector<double> ramp(16);
  for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<double>(i) / 16.0;
  Graph g;
  Tensor frame = g.constant({1, 1, 4, 4}, ramp);
  Tensor kernel = g.constant({1, 1, 3, 3}, std::vector<double>(9, 1.0 / 9.0));
  Tensor bias = g.constant({1}, {0.0});
  Tensor out = conv2d_relu(frame, kernel, bias);
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 2; ++x) {
      double window = 0.0;
      for (std::size_t u = 0; u < 3; ++u)
        for (std::size_t v = 0; v < 3; ++v) window += ramp[(y + u) * 4 + (x + v)];
      window /= 9.0;
      CHECK(out.values()[y * 2 + x] == doctest::Approx(window).epsilon(1e-12));
    }
  }
}

TEST_CASE("conv2d output channel count equals the 16-filter bank") {
  Rng rng(11);
  Graph g;
  FrameStack clip = random_clip(rng, 3, 3, 8, 9);
  Tensor frames = g.constant({3, 3, 8, 9}, clip.values);
  Tensor kernels = g.leaf(random_kernels(rng, 16, 3));
  Tensor bias = g.constant({16}, std::vector<double>(16, 0.1));
  Tensor out = conv2d_relu(frames, kernels, bias);
  CHECK(out.shape() == Shape{3, 16, 6, 7});
}

TEST_CASE("conv2d rejects channel mismatches") {
  Graph g;
  Tensor frames = g.constant({1, 2, 4, 4}, std::vector<double>(32, 0.0));
  Tensor kernels = g.constant({4, 3, 3, 3}, std::vector<double>(108, 0.0));
  Tensor bias = g.constant({4}, std::vector<double>(4, 0.0));
  CHECK_THROWS_AS(conv2d(frames, kernels, bias), std::invalid_argument);
}

TEST_CASE("maxpool2x2 takes disjoint window maxima and drops odd edges") {
  Graph g;
  Tensor tiny = maxpool2x2(g.constant({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(tiny.shape() == Shape{1, 1, 1, 1});
  CHECK(tiny.values()[0] == 4.0);

  Tensor constant = maxpool2x2(g.constant({1, 1, 4, 4}, std::vector<double>(16, 0.7)));
  CHECK(constant.shape() == Shape{1, 1, 2, 2});
  for (double v : constant.values()) CHECK(v == 0.7);

  Tensor odd = maxpool2x2(g.constant({1, 1, 52, 65}, std::vector<double>(52 * 65, 0.0)));
  CHECK(odd.shape() == Shape{1, 1, 26, 32});  // odd trailing column dropped

  CHECK_THROWS_AS(maxpool2x2(g.constant({1, 1, 1, 4}, std::vector<double>(4, 0.0))),
                  std::invalid_argument);
}

TEST_CASE("maxpool gradient routes to the first maximal cell on ties") {
  Graph g;
  Tensor x = g.leaf({1, 1, 2, 2}, {5.0, 5.0, 5.0, 5.0}, true);
  g.backward(sum(maxpool2x2(x)));
  const auto& grad = g.grad_of(x);
  CHECK(grad[0] == 1.0);  // row-major first
  CHECK(grad[1] == 0.0);
  CHECK(grad[2] == 0.0);
  CHECK(grad[3] == 0.0);
}

TEST_CASE("feature shape arithmetic matches an independent floor computation") {
  // independent oracle: valid conv then floor-halving
  auto oracle = [](std::size_t h, std::size_t w, std::size_t filters) {
    return std::array<std::size_t, 3>{filters, (h - 2) / 2, (w - 2) / 2};
  };
  for (auto [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{
           {52, 65}, {16, 16}, {6, 6}, {7, 9}, {100, 33}}) {
    FeatureLayout layout = feature_layout(3, h, w, 16);
    auto expect = oracle(h, w, 16);
    CHECK(layout.channels_out == expect[0]);
    CHECK(layout.pooled_height == expect[1]);
    CHECK(layout.pooled_width == expect[2]);
  }
  // the full-resolution configuration: conv 50x63, pool 25x31
  FeatureLayout full = feature_layout(3, 52, 65, 16);
  CHECK(full.pooled_height == 25);
  CHECK(full.pooled_width == 31);
  CHECK(full.dim() == 16 * 25 * 31);
}

TEST_CASE("extract_features stacks one row per frame with the layout dimension") {
  Rng rng(21);
  Graph g;
  FrameStack clip = random_clip(rng, 10, 3, 52, 65);
  Tensor kernels = g.leaf(random_kernels(rng, 16, 3));
  Tensor bias = g.constant({16}, std::vector<double>(16, 0.0));
  FeatureMatrix fm = extract_features(g, clip, kernels, bias);
  CHECK(fm.x_e.shape() == Shape{10, fm.layout.dim()});
  CHECK(fm.layout.dim() == 12400);
  for (double v : fm.x_e.values()) CHECK(v >= 0.0);  // relu then max of non-negatives

  FrameStack single = random_clip(rng, 1, 1, 6, 6);
  Tensor k1 = g.leaf(random_kernels(rng, 4, 1));
  Tensor b1 = g.constant({4}, std::vector<double>(4, 0.0));
  FeatureMatrix one = extract_features(g, single, k1, b1);
  CHECK(one.x_e.shape() == Shape{1, one.layout.dim()});
}

TEST_CASE("extract_features is deterministic and permutation-equivariant over frames") {
  Rng rng(77);
  FrameStack clip = random_clip(rng, 5, 1, 8, 8);
  TensorData kernels = random_kernels(rng, 6, 1);

  auto run = [&](const FrameStack& c) {
    Graph g;
    Tensor k = g.leaf(kernels);
    Tensor b = g.constant({6}, std::vector<double>(6, 0.05));
    return g.value_of(extract_features(g, c, k, b).x_e);
  };

  const TensorData base = run(clip);
  const TensorData again = run(clip);
  CHECK(base == again);

  // reverse the frame order; rows must permute identically
  FrameStack reversed = clip;
  const std::size_t fs = clip.frame_size();
  for (std::size_t f = 0; f < clip.frames; ++f)
    std::copy_n(clip.values.begin() + static_cast<std::ptrdiff_t>(f * fs), fs,
                reversed.values.begin() + static_cast<std::ptrdiff_t>((clip.frames - 1 - f) * fs));
  const TensorData rev = run(reversed);
  const std::size_t d = base.shape[1];
  for (std::size_t f = 0; f < clip.frames; ++f)
    for (std::size_t j = 0; j < d; ++j)
      CHECK(rev.values[(clip.frames - 1 - f) * d + j] == base.values[f * d + j]);

  // identical frames yield identical rows
  FrameStack twin = clip;
  twin.frames = 2;
  twin.values.assign(clip.values.begin(), clip.values.begin() + static_cast<std::ptrdiff_t>(fs));
  twin.values.insert(twin.values.end(), twin.values.begin(),
                     twin.values.begin() + static_cast<std::ptrdiff_t>(fs));
  const TensorData rows = run(twin);
  for (std::size_t j = 0; j < d; ++j) CHECK(rows.values[j] == rows.values[d + j]);
}

TEST_CASE("extract_features rejects empty and malformed videos") {
  Graph g;
  Rng rng(1);
  Tensor kernels = g.leaf(random_kernels(rng, 4, 1));
  Tensor bias = g.constant({4}, std::vector<double>(4, 0.0));
  FrameStack empty;
  empty.channels = 1;
  empty.height = 6;
  empty.width = 6;
  CHECK_THROWS_AS(extract_features(g, empty, kernels, bias), std::invalid_argument);

  FrameStack bad_pixels = random_clip(rng, 1, 1, 6, 6);
  bad_pixels.values[0] = 1.5;
  CHECK_THROWS_AS(extract_features(g, bad_pixels, kernels, bias), std::invalid_argument);
}

TEST_CASE("full extraction pipeline passes the finite-difference check") {
  Rng rng(9);
  FrameStack clip = random_clip(rng, 2, 1, 6, 6);
  TensorData kernels = random_kernels(rng, 3, 1);
  TensorData bias = TensorData::zeros({3});
  for (double& v : bias.values) v = rng.uniform(-0.1, 0.1);
  TensorData frames({2, 1, 6, 6}, clip.values);

  GradReport report = grad_check(
      [](Graph&, const std::vector<Tensor>& in) {
        FeatureMatrix fm = extract_features(in[0], FeatureLayout{3, 2, 2}, in[1], in[2]);
        return sum(mul(fm.x_e, fm.x_e));
      },
      {frames, kernels, bias}, 1e-4);
  CAPTURE(report.max_rel_error);
  CAPTURE(report.note);
  CHECK(report.pass);
}
