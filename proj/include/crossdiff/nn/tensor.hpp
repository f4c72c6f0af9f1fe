#pragma once

#include <cstddef>
#include <new>
#include <vector>

#include "crossdiff/image.hpp"

namespace crossdiff::nn {

/// Allocator with a fixed 64-byte alignment. Vectorized reductions peel a
/// head that depends on the buffer address; a fixed alignment makes their
/// summation order, and so the rounding, a function of the shape alone.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

/// Dense channel-first (C x H x W) array. Vectors are C x 1 x 1, scalars 1 x 1 x 1.
template <typename T>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  Buffer<T> data;

  Tensor() = default;
  Tensor(int channels, int height, int width, T fill = T(0))
      : c(channels), h(height), w(width),
        data(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool empty() const { return data.empty(); }
  bool same_shape(const Tensor& o) const { return c == o.c && h == o.h && w == o.w; }

  T& operator()(int ch, int y, int x) { return data[(static_cast<std::size_t>(ch) * h + y) * w + x]; }
  T operator()(int ch, int y, int x) const {
    return data[(static_cast<std::size_t>(ch) * h + y) * w + x];
  }
  T* channel(int ch) { return data.data() + ch * plane(); }
  const T* channel(int ch) const { return data.data() + ch * plane(); }
};

template <typename T>
Tensor<T> to_tensor(const MultibandImage& img) {
  Tensor<T> t(img.bands(), img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int b = 0; b < img.bands(); ++b) t(b, y, x) = static_cast<T>(img.at(y, x, b));
  return t;
}

template <typename T>
MultibandImage to_image(const Tensor<T>& t, ImageKind kind) {
  MultibandImage img(t.h, t.w, t.c, kind);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int b = 0; b < t.c; ++b) img.at(y, x, b) = static_cast<double>(t(b, y, x));
  return img;
}

}  // namespace crossdiff::nn
