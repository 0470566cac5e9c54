#pragma once

// Weak segmentation: channel-averaged last-convolution activation,
// min-max normalization, threshold, opening, largest component.

#include <algorithm>

#include "milseg/image.hpp"
#include "milseg/model.hpp"
#include "milseg/morphology.hpp"
#include "milseg/tensor.hpp"

namespace milseg {

// Per-pixel mean over channels of one batch element, min-max normalized
// to [0, 1]. A constant map normalizes to all zeros.
template <typename T>
ImageGrid activation_map(const Tensor<T>& last_activation, int image_index) {
  if (last_activation.ndim() != 4)
    throw DimensionError("activation_map: expected a 4-D activation tensor");
  if (image_index < 0 || image_index >= last_activation.dim(0))
    throw InputError("activation_map: image index out of range");
  const int ch = last_activation.dim(1);
  const int h = last_activation.dim(2), w = last_activation.dim(3);
  const long long plane = static_cast<long long>(h) * w;
  ImageGrid map(h, w);
  const T* base = last_activation.data().data() +
                  static_cast<long long>(image_index) * ch * plane;
  for (long long i = 0; i < plane; ++i) {
    T acc = T(0);
    for (int c = 0; c < ch; ++c) acc += base[c * plane + i];
    map.v[static_cast<size_t>(i)] = static_cast<float>(acc / static_cast<T>(ch));
  }
  const auto [mn, mx] = std::minmax_element(map.v.begin(), map.v.end());
  const float lo = *mn, hi = *mx;
  if (hi > lo)
    for (auto& v : map.v) v = (v - lo) / (hi - lo);
  else
    std::fill(map.v.begin(), map.v.end(), 0.0f);
  return map;
}

// bit = value >= tau.
inline BinaryMask threshold(const ImageGrid& map, double tau) {
  if (tau <= 0.0 || tau >= 1.0)
    throw ConfigError("threshold: tau must be in (0, 1)");
  BinaryMask out(map.h, map.w);
  for (size_t i = 0; i < map.v.size(); ++i)
    out.bits[i] = map.v[i] >= static_cast<float>(tau) ? 1 : 0;
  return out;
}

inline BinaryMask postprocess(const BinaryMask& mask,
                              const StructuringElement& z) {
  return largest_component(opening(mask, z));
}

// Full pipeline for a single image:
// largest_component(opening(threshold(activation_map(forward(img))))).
template <typename T>
BinaryMask segment(MilNet<T>& net, const ImageGrid& image, double tau,
                   const StructuringElement& z) {
  if (image.h != net.config.input_size || image.w != net.config.input_size)
    throw DimensionError("segment: image size does not match the model input");
  Tensor<T> batch = Tensor<T>::zeros(
      {1, 1, net.config.input_size, net.config.input_size});
  for (size_t i = 0; i < image.v.size(); ++i)
    batch.data()[i] = static_cast<T>(image.v[i]);
  auto result = net.forward(batch, Mode::kInference);
  return postprocess(threshold(activation_map(result.last_activation, 0), tau), z);
}

// Heatmap companion of segment (the unthresholded activation map).
template <typename T>
ImageGrid heatmap(MilNet<T>& net, const ImageGrid& image) {
  if (image.h != net.config.input_size || image.w != net.config.input_size)
    throw DimensionError("heatmap: image size does not match the model input");
  Tensor<T> batch = Tensor<T>::zeros(
      {1, 1, net.config.input_size, net.config.input_size});
  for (size_t i = 0; i < image.v.size(); ++i)
    batch.data()[i] = static_cast<T>(image.v[i]);
  auto result = net.forward(batch, Mode::kInference);
  return activation_map(result.last_activation, 0);
}

inline double mask_iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.h != b.h || a.w != b.w)
    throw DimensionError("mask_iou: size mismatch");
  long long inter = 0, uni = 0;
  for (size_t i = 0; i < a.bits.size(); ++i) {
    inter += (a.bits[i] && b.bits[i]) ? 1 : 0;
    uni += (a.bits[i] || b.bits[i]) ? 1 : 0;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace milseg
