#include "crossdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace crossdiff {

Rng derive_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return Rng(seq);
}

NoiseSchedule::NoiseSchedule(std::vector<double> alphas, double offset) : offset_(offset) {
  if (alphas.empty()) throw std::invalid_argument("schedule needs at least one step");
  alphas_.reserve(alphas.size() + 1);
  alphas_.push_back(1.0);
  gammas_.reserve(alphas.size() + 1);
  gammas_.push_back(1.0);
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("alphas must lie in (0, 1)");
    alphas_.push_back(a);
    gammas_.push_back(gammas_.back() * a);
  }
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > horizon()) throw std::invalid_argument("time step out of range");
  return alphas_[t];
}

double NoiseSchedule::gamma(int t) const {
  if (t < 0 || t > horizon()) throw std::invalid_argument("time step out of range");
  return gammas_[t];
}

NoiseSchedule make_cosine_schedule(int horizon, double offset) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (!(offset > 0.0)) throw std::invalid_argument("offset must be positive");
  const auto f = [&](int t) {
    const double c = std::cos((static_cast<double>(t) / horizon + offset) / (1.0 + offset) *
                              std::numbers::pi / 2.0);
    return c * c;
  };
  const double f0 = f(0);
  std::vector<double> alphas(horizon);
  double prev = 1.0;
  for (int t = 1; t <= horizon; ++t) {
    const double g = f(t) / f0;
    const double beta = std::min(1.0 - g / prev, 0.999);
    alphas[t - 1] = 1.0 - beta;
    prev = g;
  }
  return NoiseSchedule(std::move(alphas), offset);
}

MultibandImage q_sample(const MultibandImage& x0, int t, const MultibandImage& eps,
                        const NoiseSchedule& schedule) {
  if (!x0.same_shape(eps)) throw std::invalid_argument("noise shape must match x0");
  if (t < 1 || t > schedule.horizon()) throw std::invalid_argument("time step out of range");
  const double a = std::sqrt(schedule.gamma(t));
  const double b = std::sqrt(1.0 - schedule.gamma(t));
  MultibandImage out(x0.height(), x0.width(), x0.bands(), ImageKind::NoiseState);
  auto dst = out.data();
  auto src = x0.data();
  auto e = eps.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = a * src[i] + b * e[i];
  return out;
}

Posterior posterior_mean_variance(const MultibandImage& x_t, int t, const MultibandImage& eps_hat,
                                  const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.horizon()) throw std::invalid_argument("time step out of range");
  if (!x_t.same_shape(eps_hat)) throw std::invalid_argument("noise estimate shape must match x_t");
  const double alpha = schedule.alpha(t);
  const double gamma = schedule.gamma(t);
  const double gamma_prev = schedule.gamma(t - 1);
  const double coef = (1.0 - alpha) / std::sqrt(1.0 - gamma);
  const double inv_sqrt_alpha = 1.0 / std::sqrt(alpha);
  Posterior post{MultibandImage(x_t.height(), x_t.width(), x_t.bands(), ImageKind::NoiseState),
                 (1.0 - alpha) * (1.0 - gamma_prev) / (1.0 - gamma)};
  auto dst = post.mean.data();
  auto xs = x_t.data();
  auto es = eps_hat.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = inv_sqrt_alpha * (xs[i] - coef * es[i]);
  return post;
}

MultibandImage standard_normal(int height, int width, int bands, Rng& rng) {
  MultibandImage out(height, width, bands, ImageKind::NoiseState);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (double& v : out.data()) v = normal(rng);
  return out;
}

MultibandImage p_sample_step(const NoiseModel& model, const MultibandImage& x_t,
                             const MultibandImage& cond, int t, const NoiseSchedule& schedule,
                             Rng& rng) {
  if (x_t.bands() != model.target_bands() || cond.bands() != model.cond_bands()) {
    throw std::invalid_argument("predictor channels do not match state + condition bands");
  }
  const auto eps_hat = model.estimate_noise(x_t, cond, t, schedule);
  auto post = posterior_mean_variance(x_t, t, eps_hat, schedule);
  if (t == 1) return std::move(post.mean);
  const double sigma = std::sqrt(post.variance);
  const auto z = standard_normal(x_t.height(), x_t.width(), x_t.bands(), rng);
  auto dst = post.mean.data();
  auto zs = z.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += sigma * zs[i];
  return std::move(post.mean);
}

MultibandImage sample_loop(const NoiseModel& model, const MultibandImage& cond, int out_bands,
                           const NoiseSchedule& schedule, Rng& rng) {
  if (out_bands < 1) throw std::invalid_argument("out_bands must be positive");
  auto x = standard_normal(cond.height(), cond.width(), out_bands, rng);
  for (int t = schedule.horizon(); t >= 1; --t) {
    x = p_sample_step(model, x, cond, t, schedule, rng);
  }
  x.clip_unit();
  x.set_kind(out_bands == 1 ? ImageKind::Pan : ImageKind::MsUp);
  return x;
}

}  // namespace crossdiff
