#pragma once

#include <vector>

#include "crossdiff/image.hpp"
#include "crossdiff/nn/graph.hpp"

namespace crossdiff {

inline constexpr int kHighPassSize = 5;
inline constexpr double kSsimSigma = 1.5;
inline constexpr int kSsimRadius = 5;
inline constexpr double kSsimC1 = 1e-4;
inline constexpr double kSsimC2 = 9e-4;

struct LossReport {
  double total = 0.0;
  double spa = 0.0;
  double spe = 0.0;
  double qnr_term = 0.0;
  double lambda = 0.0;
};

/// Normalized box taps of odd length `size`.
std::vector<double> box_kernel(int size);

/// SSIM window radius for an image of the given size: 5, or smaller when the
/// image cannot hold an 11 x 11 valid window.
int ssim_radius(int height, int width);

/// Truncated, renormalized Gaussian taps for SSIM (sigma 1.5).
std::vector<double> ssim_kernel(int radius);

// Image-level losses. All values are computed in double precision.

/// img - box(img), per band, reflect boundary; tagged NOISE_STATE.
MultibandImage get_hp(const MultibandImage& img, int box = kHighPassSize);

/// Per-band Gaussian blur with sigma = ratio / 2, reflect boundary.
MultibandImage gaussian_blur(const MultibandImage& img, int ratio);

/// Gaussian-window SSIM over valid windows, per band, averaged.
double ssim(const MultibandImage& a, const MultibandImage& b);

double loss_spatial(const MultibandImage& pan, const MultibandImage& fms);
double loss_spectral(const MultibandImage& ms_up, const MultibandImage& fms, int ratio);
/// 1 - QNR(ms, pan, fms), evaluated through the differentiable path.
double loss_qnr(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms,
                int ratio, int block = 32);
LossReport loss_full(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms,
                     int ratio, double lambda, int block = 32);
/// Mean absolute error.
double loss_reduced(const MultibandImage& fms, const MultibandImage& reference);

namespace nn_loss {

// Graph versions. Images given as MultibandImage are treated as constants;
// `fms` and friends are graph variables (C x H x W).

template <typename T>
nn::Var high_pass(nn::Graph<T>& g, nn::Var x, int box = kHighPassSize);

template <typename T>
nn::Var gaussian_blur(nn::Graph<T>& g, nn::Var x, int ratio);

/// Scalar SSIM (mean over bands and valid pixels).
template <typename T>
nn::Var ssim(nn::Graph<T>& g, nn::Var a, nn::Var b);

template <typename T>
nn::Var l1(nn::Graph<T>& g, nn::Var a, nn::Var b);

template <typename T>
nn::Var loss_spatial(nn::Graph<T>& g, nn::Var pan, nn::Var fms);

template <typename T>
nn::Var loss_spectral(nn::Graph<T>& g, nn::Var ms_up, nn::Var fms, int ratio);

template <typename T>
nn::Var loss_qnr(nn::Graph<T>& g, const MultibandImage& ms, const MultibandImage& pan, nn::Var fms,
                 int ratio, int block = 32);

struct FullLoss {
  nn::Var total, spa, spe, qnr_term;
};

template <typename T>
FullLoss loss_full(nn::Graph<T>& g, const MultibandImage& ms, const MultibandImage& pan,
                   const MultibandImage& ms_up, nn::Var fms, int ratio, double lambda,
                   int block = 32);

}  // namespace nn_loss

}  // namespace crossdiff
