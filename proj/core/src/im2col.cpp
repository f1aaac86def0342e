#include "ncconv/im2col.hpp"

#include <sstream>

namespace ncconv {

std::size_t ConvGeometry::out_h() const {
  if (stride_h == 0 || in_h + 2 * pad_h < kernel_h) return 0;
  return (in_h + 2 * pad_h - kernel_h) / stride_h + 1;
}

std::size_t ConvGeometry::out_w() const {
  if (stride_w == 0 || in_w + 2 * pad_w < kernel_w) return 0;
  return (in_w + 2 * pad_w - kernel_w) / stride_w + 1;
}

void ConvGeometry::validate() const {
  if (in_channels == 0 || out_channels == 0 || kernel_h == 0 || kernel_w == 0 ||
      stride_h == 0 || stride_w == 0 || in_h == 0 || in_w == 0) {
    throw GeometryError("convolution geometry has a zero extent: " + describe());
  }
  if (out_h() < 1 || out_w() < 1) {
    throw GeometryError("convolution produces no output positions: " + describe());
  }
}

std::string ConvGeometry::describe() const {
  std::ostringstream os;
  os << "C=" << in_channels << " O=" << out_channels << " k=" << kernel_h << 'x' << kernel_w
     << " s=" << stride_h << 'x' << stride_w << " p=" << pad_h << 'x' << pad_w
     << " in=" << in_h << 'x' << in_w;
  return os.str();
}

template <typename T>
void unfold_into(std::span<const T> image, const ConvGeometry& g, std::span<T> cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k_cols = oh * ow;
  const auto H = static_cast<std::ptrdiff_t>(g.in_h);
  const auto W = static_cast<std::ptrdiff_t>(g.in_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const T* plane = image.data() + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        T* out = cols.data() + row * k_cols;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          T* out_row = out + y * ow;
          if (iy < 0 || iy >= H) {
            for (std::size_t x = 0; x < ow; ++x) out_row[x] = T{0};
            continue;
          }
          const T* in_row = plane + iy * W;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            out_row[x] = (ix < 0 || ix >= W) ? T{0} : in_row[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void fold_into(std::span<const T> cols, const ConvGeometry& g, std::span<T> image) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k_cols = oh * ow;
  const auto H = static_cast<std::ptrdiff_t>(g.in_h);
  const auto W = static_cast<std::ptrdiff_t>(g.in_w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    T* plane = image.data() + c * g.in_h * g.in_w;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj, ++row) {
        const T* in = cols.data() + row * k_cols;
        for (std::size_t y = 0; y < oh; ++y) {
          const auto iy = static_cast<std::ptrdiff_t>(y * g.stride_h + ki) -
                          static_cast<std::ptrdiff_t>(g.pad_h);
          if (iy < 0 || iy >= H) continue;
          T* img_row = plane + iy * W;
          const T* in_row = in + y * ow;
          for (std::size_t x = 0; x < ow; ++x) {
            const auto ix = static_cast<std::ptrdiff_t>(x * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (ix >= 0 && ix < W) img_row[ix] += in_row[x];
          }
        }
      }
    }
  }
}

template <typename T>
std::vector<Im2ColMatrix<T>> unfold(const Tensor<T>& x, const ConvGeometry& g) {
  g.validate();
  if (x.rank() != 4 || x.dim(1) != g.in_channels || x.dim(2) != g.in_h || x.dim(3) != g.in_w) {
    throw DimensionError("unfold input " + to_string(x.shape()) + " does not match geometry " +
                         g.describe());
  }
  std::vector<Im2ColMatrix<T>> out;
  out.reserve(x.dim(0));
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    Im2ColMatrix<T> m{Tensor<T>({g.patch_size(), g.columns()}), g};
    unfold_into<T>(x.slice(n), g, m.data.data());
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
Tensor<T> fold(const Im2ColMatrix<T>& patches, const ConvGeometry& g) {
  g.validate();
  if (patches.data.rank() != 2 || patches.data.dim(0) != g.patch_size() ||
      patches.data.dim(1) != g.columns()) {
    throw DimensionError("fold: patch matrix " + to_string(patches.data.shape()) +
                         " does not match geometry " + g.describe());
  }
  Tensor<T> image({g.in_channels, g.in_h, g.in_w});
  fold_into<T>(patches.data.data(), g, image.data());
  return image;
}

Tensor<double> patch_count_map(const ConvGeometry& g) {
  g.validate();
  Tensor<double> ones({g.patch_size(), g.columns()}, 1.0);
  return fold(Im2ColMatrix<double>{ones, g}, g);
}

#define NCCONV_INSTANTIATE(T)                                                                 \
  template void unfold_into<T>(std::span<const T>, const ConvGeometry&, std::span<T>);       \
  template void fold_into<T>(std::span<const T>, const ConvGeometry&, std::span<T>);         \
  template std::vector<Im2ColMatrix<T>> unfold<T>(const Tensor<T>&, const ConvGeometry&);    \
  template Tensor<T> fold<T>(const Im2ColMatrix<T>&, const ConvGeometry&);

NCCONV_INSTANTIATE(float)
NCCONV_INSTANTIATE(double)
#undef NCCONV_INSTANTIATE

}  // namespace ncconv
