#include "crossdiff/image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace crossdiff {

std::string_view to_string(ImageKind kind) {
  switch (kind) {
    case ImageKind::Pan: return "PAN";
    case ImageKind::Ms: return "MS";
    case ImageKind::MsUp: return "MS_UP";
    case ImageKind::Fused: return "FUSED";
    case ImageKind::NoiseState: return "NOISE_STATE";
  }
  return "UNKNOWN";
}

MultibandImage::MultibandImage(int height, int width, int bands, ImageKind kind, double fill)
    : height_(height), width_(width), bands_(bands), kind_(kind) {
  if (height < 1 || width < 1 || bands < 1) {
    throw std::invalid_argument("image dimensions must be positive");
  }
  if (kind == ImageKind::Pan && bands != 1) {
    throw std::invalid_argument("PAN images have exactly one band");
  }
  data_.assign(static_cast<std::size_t>(height) * width * bands, fill);
}

void MultibandImage::set_kind(ImageKind kind) {
  if (kind == ImageKind::Pan && bands_ != 1) {
    throw std::invalid_argument("PAN images have exactly one band");
  }
  kind_ = kind;
}

MultibandImage MultibandImage::band(int b, ImageKind kind) const {
  if (b < 0 || b >= bands_) throw std::invalid_argument("band index out of range");
  MultibandImage out(height_, width_, 1, kind);
  for (int y = 0; y < height_; ++y)
    for (int x = 0; x < width_; ++x) out.at(y, x, 0) = at(y, x, b);
  return out;
}

void MultibandImage::validate() const {
  const bool bounded = kind_ != ImageKind::NoiseState;
  for (double v : data_) {
    if (!std::isfinite(v)) throw std::invalid_argument("image contains non-finite values");
    if (bounded && (v < 0.0 || v > 1.0)) {
      throw std::invalid_argument("normalized image value outside [0, 1]");
    }
  }
}

void MultibandImage::clip_unit() {
  for (double& v : data_) v = std::clamp(v, 0.0, 1.0);
}

void ImagePair::validate() const {
  if (ratio != 2 && ratio != 4 && ratio != 8) {
    throw std::invalid_argument("resolution ratio must be 2, 4 or 8");
  }
  if (pan.bands() != 1) throw std::invalid_argument("PAN must have one band");
  if (pan.height() != ratio * ms.height() || pan.width() != ratio * ms.width()) {
    throw std::invalid_argument("PAN dims must equal ratio x MS dims");
  }
}

int reflect_index(int i, int n) {
  const int period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += taps[i + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

MultibandImage convolve_separable(const MultibandImage& img, std::span<const double> kernel) {
  const int radius = static_cast<int>(kernel.size() / 2);
  const int h = img.height(), w = img.width(), nb = img.bands();
  MultibandImage tmp(h, w, nb, img.kind());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int b = 0; b < nb; ++b) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * img.at(y, reflect_index(x + k, w), b);
        }
        tmp.at(y, x, b) = acc;
      }
  MultibandImage out(h, w, nb, img.kind());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int b = 0; b < nb; ++b) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          acc += kernel[k + radius] * tmp.at(reflect_index(y + k, h), x, b);
        }
        out.at(y, x, b) = acc;
      }
  return out;
}

namespace {

ImageKind upsampled_kind(ImageKind kind) {
  return kind == ImageKind::Ms ? ImageKind::MsUp : kind;
}

// Source taps for one output coordinate of a bicubic resize.
struct CubicTaps {
  int index[4];
  double weight[4];
};

std::vector<CubicTaps> cubic_taps(int in_size, int factor) {
  std::vector<CubicTaps> taps(static_cast<std::size_t>(in_size) * factor);
  for (int o = 0; o < in_size * factor; ++o) {
    const double src = (o + 0.5) / factor - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double frac = src - base;
    for (int k = 0; k < 4; ++k) {
      taps[o].index[k] = reflect_index(base - 1 + k, in_size);
      taps[o].weight[k] = cubic_weight(frac - (k - 1));
    }
  }
  return taps;
}

}  // namespace

MultibandImage upsample(const MultibandImage& img, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be positive");
  if (factor == 1) return img;
  const int h = img.height(), w = img.width(), nb = img.bands();
  const auto ty = cubic_taps(h, factor);
  const auto tx = cubic_taps(w, factor);
  MultibandImage rows(h, w * factor, nb, ImageKind::NoiseState);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w * factor; ++x)
      for (int b = 0; b < nb; ++b) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += tx[x].weight[k] * img.at(y, tx[x].index[k], b);
        rows.at(y, x, b) = acc;
      }
  MultibandImage out(h * factor, w * factor, nb, upsampled_kind(img.kind()));
  for (int y = 0; y < h * factor; ++y)
    for (int x = 0; x < w * factor; ++x)
      for (int b = 0; b < nb; ++b) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += ty[y].weight[k] * rows.at(ty[y].index[k], x, b);
        out.at(y, x, b) = acc;
      }
  if (out.kind() != ImageKind::NoiseState) out.clip_unit();
  return out;
}

MultibandImage downsample(const MultibandImage& img, int factor) {
  if (factor < 1) throw std::invalid_argument("downsample factor must be positive");
  if (img.height() % factor != 0 || img.width() % factor != 0) {
    throw std::invalid_argument("image dims not divisible by downsample factor");
  }
  if (factor == 1) return img;
  const auto blurred = convolve_separable(img, gaussian_kernel(factor / 2.0));
  MultibandImage out(img.height() / factor, img.width() / factor, img.bands(), img.kind());
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int b = 0; b < img.bands(); ++b) out.at(y, x, b) = blurred.at(y * factor, x * factor, b);
  return out;
}

MultibandImage upsample_nearest(const MultibandImage& img, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be positive");
  MultibandImage out(img.height() * factor, img.width() * factor, img.bands(),
                     upsampled_kind(img.kind()));
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int b = 0; b < img.bands(); ++b) out.at(y, x, b) = img.at(y / factor, x / factor, b);
  return out;
}

MultibandImage channel_mean(const MultibandImage& img) {
  const ImageKind kind = img.kind() == ImageKind::NoiseState ? ImageKind::NoiseState : ImageKind::Pan;
  MultibandImage out(img.height(), img.width(), 1, kind);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      double acc = 0.0;
      for (int b = 0; b < img.bands(); ++b) acc += img.at(y, x, b);
      out.at(y, x, 0) = acc / img.bands();
    }
  return out;
}

}  // namespace crossdiff
