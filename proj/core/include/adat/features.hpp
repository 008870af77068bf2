#pragma once

#include <cstddef>
#include <vector>

#include "adat/tensor.hpp"

namespace adat {

// A clip of m frames, each channels x height x width, pixel values in [0,1].
struct FrameStack {
  std::size_t frames = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major [frames x channels x height x width]
  double fps = 30.0;

  std::size_t frame_size() const { return channels * height * width; }
  void validate() const;  // throws on malformed dimensions or out-of-range pixels
  bool operator==(const FrameStack& other) const = default;
};

// Explains the flattened per-frame feature dimension d.
struct FeatureLayout {
  std::size_t channels_out = 0;
  std::size_t pooled_height = 0;
  std::size_t pooled_width = 0;
  std::size_t dim() const { return channels_out * pooled_height * pooled_width; }
};

struct FeatureMatrix {
  Tensor x_e;  // [frames x dim]
  FeatureLayout layout;
};

// Shape arithmetic for one frame through conv (valid, 3x3, stride 1) and
// 2x2 max pooling with odd trailing row/column dropped.
FeatureLayout feature_layout(std::size_t channels, std::size_t height, std::size_t width,
                             std::size_t filters);

// ReLU(cross-correlation + bias) over a [m x C x H x W] stack with
// [filters x C x 3 x 3] kernels; valid padding, stride 1.
Tensor conv2d_relu(const Tensor& frames, const Tensor& kernels, const Tensor& bias);

// Per frame: conv2d_relu -> maxpool2x2 -> flatten; rows stacked in frame
// order into a [m x dim] matrix.
FeatureMatrix extract_features(Graph& g, const FrameStack& video, const Tensor& kernels,
                               const Tensor& bias);
FeatureMatrix extract_features(const Tensor& frames, const FeatureLayout& layout,
                               const Tensor& kernels, const Tensor& bias);

}  // namespace adat
