#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ncconv/tensor.hpp"

namespace ncconv {

// Shape of a 2-D convolution. Only zero padding is supported.
struct ConvGeometry {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t in_h = 1, in_w = 1;

  // I: patch length, channel-major then kernel row then kernel column.
  std::size_t patch_size() const { return in_channels * kernel_h * kernel_w; }
  // Zero when the kernel does not fit; validate() rejects that case.
  std::size_t out_h() const;
  std::size_t out_w() const;
  // K: number of output positions, i.e. im2col columns.
  std::size_t columns() const { return out_h() * out_w(); }

  // Throws GeometryError unless every extent is positive and the output is at least 1x1.
  void validate() const;
  std::string describe() const;

  bool operator==(const ConvGeometry&) const = default;
};

// Per-sample patch matrix: data is I x K, column k is the receptive field of output k.
template <typename T>
struct Im2ColMatrix {
  Tensor<T> data;
  ConvGeometry geometry;
};

// Unfold one C x H x W image into `cols` (I x K, row-major).
template <typename T>
void unfold_into(std::span<const T> image, const ConvGeometry& g, std::span<T> cols);

// Scatter-add I x K patch values into a zeroed C x H x W image.
template <typename T>
void fold_into(std::span<const T> cols, const ConvGeometry& g, std::span<T> image);

// x must be N x C x H x W matching g; returns one matrix per sample.
template <typename T>
std::vector<Im2ColMatrix<T>> unfold(const Tensor<T>& x, const ConvGeometry& g);

// Adjoint of unfold for one sample: overlapping contributions sum, padding is dropped.
template <typename T>
Tensor<T> fold(const Im2ColMatrix<T>& patches, const ConvGeometry& g);

// Number of patches covering each input pixel (C x H x W); fold(unfold(x)) == count * x.
Tensor<double> patch_count_map(const ConvGeometry& g);

}  // namespace ncconv
