#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

namespace crossdiff {

enum class ImageKind { Pan, Ms, MsUp, Fused, NoiseState };

std::string_view to_string(ImageKind kind);

/// Channel-last (height x width x bands) raster of normalized reflectance.
///
/// Non-NOISE_STATE images are expected to lie in [0, 1]; diffusion states are
/// unbounded. The constructor enforces the structural invariants (positive
/// dimensions, single band for PAN); value checks are done by validate().
class MultibandImage {
 public:
  MultibandImage() = default;
  MultibandImage(int height, int width, int bands, ImageKind kind, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int bands() const { return bands_; }
  ImageKind kind() const { return kind_; }
  void set_kind(ImageKind kind);

  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::size_t pixels() const { return static_cast<std::size_t>(height_) * width_; }

  double& at(int y, int x, int b) { return data_[index(y, x, b)]; }
  double at(int y, int x, int b) const { return data_[index(y, x, b)]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const MultibandImage& other) const {
    return height_ == other.height_ && width_ == other.width_ && bands_ == other.bands_;
  }
  bool same_spatial(const MultibandImage& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  /// Single band `b` as a one-band image of the given kind.
  MultibandImage band(int b, ImageKind kind = ImageKind::Pan) const;

  /// Throws std::invalid_argument on non-finite values, or values outside
  /// [0, 1] for normalized kinds.
  void validate() const;

  /// Clamps every value to [0, 1].
  void clip_unit();

 private:
  std::size_t index(int y, int x, int b) const {
    return (static_cast<std::size_t>(y) * width_ + x) * bands_ + b;
  }

  int height_ = 0;
  int width_ = 0;
  int bands_ = 0;
  ImageKind kind_ = ImageKind::Ms;
  std::vector<double> data_;
};

/// Co-registered PAN/MS pair with pan dims = ratio x ms dims.
struct ImagePair {
  MultibandImage pan;
  MultibandImage ms;
  int ratio = 4;

  /// Throws std::invalid_argument if the pair violates its invariants.
  void validate() const;
};

/// Half-sample symmetric boundary: ... b a | a b c ... c | c b ...
/// Valid for any integer index and any n >= 1.
int reflect_index(int i, int n);

/// Normalized 1-D Gaussian taps, radius ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Catmull-Rom cubic convolution weight (a = -0.5).
double cubic_weight(double x);

/// Per-band separable convolution with reflect boundary, same-size output.
MultibandImage convolve_separable(const MultibandImage& img, std::span<const double> kernel);

/// Bicubic upsampling by an integer factor; clipped to [0, 1] unless the
/// image is a NOISE_STATE. MS inputs come back tagged MS_UP.
MultibandImage upsample(const MultibandImage& img, int factor);

/// Gaussian anti-alias blur (sigma = factor / 2) then decimation with offset 0.
MultibandImage downsample(const MultibandImage& img, int factor);

/// Nearest-neighbour replication by an integer factor.
MultibandImage upsample_nearest(const MultibandImage& img, int factor);

/// Per-pixel arithmetic mean over bands.
MultibandImage channel_mean(const MultibandImage& img);

}  // namespace crossdiff
