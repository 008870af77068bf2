#include "adat/features.hpp"

#include <stdexcept>
#include <string>

namespace adat {

void FrameStack::validate() const {
  if (frames == 0) throw std::invalid_argument("FrameStack: empty video");
  if (channels < 1) throw std::invalid_argument("FrameStack: need at least one channel");
  if (height < 3 || width < 3)
    throw std::invalid_argument("FrameStack: frames must be at least 3x3, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  if (values.size() != frames * frame_size())
    throw std::invalid_argument("FrameStack: value count does not match dimensions");
  for (double v : values)
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("FrameStack: pixel values must lie in [0,1]");
}

FeatureLayout feature_layout(std::size_t channels, std::size_t height, std::size_t width,
                             std::size_t filters) {
  (void)channels;
  if (height < 3 || width < 3)
    throw std::invalid_argument("feature_layout: frame smaller than the 3x3 kernel");
  const std::size_t conv_h = height - 2, conv_w = width - 2;
  if (conv_h < 2 || conv_w < 2)
    throw std::invalid_argument("feature_layout: convolved map too small for 2x2 pooling");
  return FeatureLayout{filters, conv_h / 2, conv_w / 2};
}

Tensor conv2d_relu(const Tensor& frames, const Tensor& kernels, const Tensor& bias) {
  return relu(conv2d(frames, kernels, bias));
}

FeatureMatrix extract_features(const Tensor& frames, const FeatureLayout& layout,
                               const Tensor& kernels, const Tensor& bias) {
  const std::size_t m = frames.shape().at(0);
  Tensor pooled = maxpool2x2(conv2d_relu(frames, kernels, bias));
  FeatureMatrix fm;
  fm.layout = layout;
  fm.x_e = reshape(pooled, {m, layout.dim()});
  return fm;
}

FeatureMatrix extract_features(Graph& g, const FrameStack& video, const Tensor& kernels,
                               const Tensor& bias) {
  video.validate();
  const std::size_t filters = kernels.shape().at(0);
  FeatureLayout layout = feature_layout(video.channels, video.height, video.width, filters);
  Tensor frames = g.constant({video.frames, video.channels, video.height, video.width},
                             video.values);
  return extract_features(frames, layout, kernels, bias);
}

}  // namespace adat
