#include "crossdiff/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "crossdiff/metrics.hpp"

namespace crossdiff {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

template <typename T>
std::vector<T> cast_taps(const std::vector<double>& taps) {
  return std::vector<T>(taps.begin(), taps.end());
}

// 1 - x for scalar vars.
template <typename T>
nn::Var one_minus(nn::Graph<T>& g, nn::Var x) {
  return g.add_scalar(g.mul_scalar(x, T(-1)), T(1));
}

}  // namespace

std::vector<double> box_kernel(int size) {
  require(size >= 1 && size % 2 == 1, "box kernel size must be odd and positive");
  return std::vector<double>(size, 1.0 / size);
}

int ssim_radius(int height, int width) {
  const int r = std::min(kSsimRadius, (std::min(height, width) - 1) / 2);
  require(r >= 1, "image too small for SSIM");
  return r;
}

std::vector<double> ssim_kernel(int radius) {
  std::vector<double> taps(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
    sum += taps[i + radius];
  }
  for (double& t : taps) t /= sum;
  return taps;
}

namespace nn_loss {

template <typename T>
nn::Var high_pass(nn::Graph<T>& g, nn::Var x, int box) {
  const auto taps = cast_taps<T>(box_kernel(box));
  return g.sub(x, g.separable_filter(x, taps, nn::Padding::Reflect));
}

template <typename T>
nn::Var gaussian_blur(nn::Graph<T>& g, nn::Var x, int ratio) {
  require(ratio >= 1, "ratio must be positive");
  const auto taps = cast_taps<T>(gaussian_kernel(ratio / 2.0));
  return g.separable_filter(x, taps, nn::Padding::Reflect);
}

template <typename T>
nn::Var ssim(nn::Graph<T>& g, nn::Var a, nn::Var b) {
  const auto& av = g.value(a);
  require(av.same_shape(g.value(b)), "ssim: shape mismatch");
  const auto taps = cast_taps<T>(ssim_kernel(ssim_radius(av.h, av.w)));
  const auto filt = [&](nn::Var v) { return g.separable_filter(v, taps, nn::Padding::Valid); };
  const auto mu_a = filt(a), mu_b = filt(b);
  const auto mu_aa = g.mul(mu_a, mu_a), mu_bb = g.mul(mu_b, mu_b), mu_ab = g.mul(mu_a, mu_b);
  const auto s_aa = g.sub(filt(g.mul(a, a)), mu_aa);
  const auto s_bb = g.sub(filt(g.mul(b, b)), mu_bb);
  const auto s_ab = g.sub(filt(g.mul(a, b)), mu_ab);
  const auto num = g.mul(g.add_scalar(g.mul_scalar(mu_ab, T(2)), T(kSsimC1)),
                         g.add_scalar(g.mul_scalar(s_ab, T(2)), T(kSsimC2)));
  const auto den = g.mul(g.add_scalar(g.add(mu_aa, mu_bb), T(kSsimC1)),
                         g.add_scalar(g.add(s_aa, s_bb), T(kSsimC2)));
  return g.mean(g.div(num, den));
}

template <typename T>
nn::Var l1(nn::Graph<T>& g, nn::Var a, nn::Var b) {
  require(g.value(a).same_shape(g.value(b)), "l1: shape mismatch");
  return g.mean(g.abs(g.sub(a, b)));
}

template <typename T>
nn::Var loss_spatial(nn::Graph<T>& g, nn::Var pan, nn::Var fms) {
  const auto& pv = g.value(pan);
  const auto& fv = g.value(fms);
  require(pv.c == 1 && pv.h == fv.h && pv.w == fv.w, "loss_spatial: PAN must be one band at fused dims");
  const auto hp_pan = high_pass(g, pan);
  const auto hp_fms = high_pass(g, g.channel_mean(fms));
  return g.add(l1(g, hp_pan, hp_fms), one_minus(g, ssim(g, hp_pan, hp_fms)));
}

template <typename T>
nn::Var loss_spectral(nn::Graph<T>& g, nn::Var ms_up, nn::Var fms, int ratio) {
  require(g.value(ms_up).same_shape(g.value(fms)), "loss_spectral: shape mismatch");
  const auto gs = gaussian_blur(g, fms, ratio);
  return g.add(l1(g, ms_up, gs), one_minus(g, ssim(g, ms_up, gs)));
}

template <typename T>
nn::Var loss_qnr(nn::Graph<T>& g, const MultibandImage& ms, const MultibandImage& pan, nn::Var fms,
                 int ratio, int block) {
  const auto& fv = g.value(fms);
  const int nb = fv.c;
  require(nb == ms.bands() && nb >= 2, "loss_qnr: band count mismatch");
  require(pan.bands() == 1 && pan.height() == fv.h && pan.width() == fv.w,
          "loss_qnr: PAN must be one band at fused dims");
  require(fv.h == ratio * ms.height() && fv.w == ratio * ms.width(),
          "loss_qnr: fused dims must be ratio x MS dims");
  const int bf = effective_block(block, fv.h, fv.w);
  const int bm = effective_block(block, ms.height(), ms.width());

  std::vector<nn::Var> bands;
  for (int c = 0; c < nb; ++c) bands.push_back(g.slice_channel(fms, c));
  const auto q = [&](nn::Var a, nn::Var b) { return g.mean(g.q_index_blocks(a, b, bf)); };

  nn::Var dl{};
  for (int i = 0; i < nb; ++i)
    for (int j = i + 1; j < nb; ++j) {
      const double q_ms = uiqi(ms.band(i), ms.band(j), bm);
      const auto term = g.abs(g.add_scalar(q(bands[i], bands[j]), static_cast<T>(-q_ms)));
      dl = dl.id < 0 ? term : g.add(dl, term);
    }
  dl = g.mul_scalar(dl, static_cast<T>(2.0 / (static_cast<double>(nb) * (nb - 1))));

  const auto pan_var = g.constant(nn::to_tensor<T>(pan));
  const auto pan_low = downsample(pan, ratio);
  nn::Var ds{};
  for (int c = 0; c < nb; ++c) {
    const double q_low = uiqi(ms.band(c), pan_low, bm);
    const auto term = g.abs(g.add_scalar(q(bands[c], pan_var), static_cast<T>(-q_low)));
    ds = ds.id < 0 ? term : g.add(ds, term);
  }
  ds = g.mul_scalar(ds, static_cast<T>(1.0 / nb));

  return one_minus(g, g.mul(one_minus(g, dl), one_minus(g, ds)));
}

template <typename T>
FullLoss loss_full(nn::Graph<T>& g, const MultibandImage& ms, const MultibandImage& pan,
                   const MultibandImage& ms_up, nn::Var fms, int ratio, double lambda, int block) {
  require(lambda >= 0.0, "lambda must be nonnegative");
  FullLoss out;
  out.qnr_term = loss_qnr(g, ms, pan, fms, ratio, block);
  out.spa = loss_spatial(g, g.constant(nn::to_tensor<T>(pan)), fms);
  out.spe = loss_spectral(g, g.constant(nn::to_tensor<T>(ms_up)), fms, ratio);
  out.total = g.add(out.qnr_term, g.mul_scalar(g.add(out.spa, out.spe), static_cast<T>(lambda)));
  return out;
}

#define CROSSDIFF_INSTANTIATE(T)                                                                   \
  template nn::Var high_pass(nn::Graph<T>&, nn::Var, int);                                         \
  template nn::Var gaussian_blur(nn::Graph<T>&, nn::Var, int);                                     \
  template nn::Var ssim(nn::Graph<T>&, nn::Var, nn::Var);                                          \
  template nn::Var l1(nn::Graph<T>&, nn::Var, nn::Var);                                            \
  template nn::Var loss_spatial(nn::Graph<T>&, nn::Var, nn::Var);                                  \
  template nn::Var loss_spectral(nn::Graph<T>&, nn::Var, nn::Var, int);                            \
  template nn::Var loss_qnr(nn::Graph<T>&, const MultibandImage&, const MultibandImage&, nn::Var,  \
                            int, int);                                                             \
  template FullLoss loss_full(nn::Graph<T>&, const MultibandImage&, const MultibandImage&,         \
                              const MultibandImage&, nn::Var, int, double, int);

CROSSDIFF_INSTANTIATE(float)
CROSSDIFF_INSTANTIATE(double)
#undef CROSSDIFF_INSTANTIATE

}  // namespace nn_loss

namespace {

double scalar(const nn::Graph<double>& g, nn::Var v) { return g.value(v).data[0]; }

}  // namespace

MultibandImage get_hp(const MultibandImage& img, int box) {
  const auto low = convolve_separable(img, box_kernel(box));
  MultibandImage out(img.height(), img.width(), img.bands(), ImageKind::NoiseState);
  auto dst = out.data();
  auto src = img.data();
  auto lo = low.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[i] - lo[i];
  return out;
}

MultibandImage gaussian_blur(const MultibandImage& img, int ratio) {
  require(ratio >= 1, "ratio must be positive");
  return convolve_separable(img, gaussian_kernel(ratio / 2.0));
}

double ssim(const MultibandImage& a, const MultibandImage& b) {
  require(a.same_shape(b), "ssim: shape mismatch");
  nn::Graph<double> g(false);
  return scalar(g, nn_loss::ssim(g, g.constant(nn::to_tensor<double>(a)),
                                 g.constant(nn::to_tensor<double>(b))));
}

double loss_spatial(const MultibandImage& pan, const MultibandImage& fms) {
  require(pan.bands() == 1 && pan.same_spatial(fms), "loss_spatial: PAN must be one band at fused dims");
  nn::Graph<double> g(false);
  return scalar(g, nn_loss::loss_spatial(g, g.constant(nn::to_tensor<double>(pan)),
                                         g.constant(nn::to_tensor<double>(fms))));
}

double loss_spectral(const MultibandImage& ms_up, const MultibandImage& fms, int ratio) {
  require(ms_up.same_shape(fms), "loss_spectral: shape mismatch");
  nn::Graph<double> g(false);
  return scalar(g, nn_loss::loss_spectral(g, g.constant(nn::to_tensor<double>(ms_up)),
                                          g.constant(nn::to_tensor<double>(fms)), ratio));
}

double loss_qnr(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms,
                int ratio, int block) {
  nn::Graph<double> g(false);
  return scalar(g, nn_loss::loss_qnr(g, ms, pan, g.constant(nn::to_tensor<double>(fms)), ratio, block));
}

LossReport loss_full(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms,
                     int ratio, double lambda, int block) {
  nn::Graph<double> g(false);
  const auto ms_up = upsample(ms, ratio);
  const auto r = nn_loss::loss_full(g, ms, pan, ms_up, g.constant(nn::to_tensor<double>(fms)), ratio,
                                    lambda, block);
  LossReport rep;
  rep.spa = scalar(g, r.spa);
  rep.spe = scalar(g, r.spe);
  rep.qnr_term = scalar(g, r.qnr_term);
  rep.lambda = lambda;
  rep.total = rep.qnr_term + lambda * (rep.spa + rep.spe);
  return rep;
}

double loss_reduced(const MultibandImage& fms, const MultibandImage& reference) {
  require(fms.same_shape(reference), "loss_reduced: shape mismatch");
  auto a = fms.data();
  auto b = reference.data();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace crossdiff
