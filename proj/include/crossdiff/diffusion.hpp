#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "crossdiff/image.hpp"

namespace crossdiff {

using Rng = std::mt19937_64;

/// Independent generator for a named stream of a seed.
Rng derive_rng(std::uint64_t seed, std::uint64_t stream);

/// Cumulative noise schedule. Index 0 holds the gamma_0 = 1 convention, so
/// alphas()[t] and gammas()[t] are valid for t in [1, horizon].
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> alphas, double offset);

  int horizon() const { return static_cast<int>(alphas_.size()) - 1; }
  double offset() const { return offset_; }
  double alpha(int t) const;
  /// gamma(0) == 1.
  double gamma(int t) const;
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& gammas() const { return gammas_; }

 private:
  std::vector<double> alphas_;
  std::vector<double> gammas_;
  double offset_ = 0.008;
};

/// Cosine schedule with beta = 1 - alpha clipped at 0.999.
NoiseSchedule make_cosine_schedule(int horizon, double offset = 0.008);

/// sqrt(gamma_t) x0 + sqrt(1 - gamma_t) eps, tagged NOISE_STATE.
MultibandImage q_sample(const MultibandImage& x0, int t, const MultibandImage& eps,
                        const NoiseSchedule& schedule);

struct Posterior {
  MultibandImage mean;
  double variance = 0.0;
};

/// Mean and variance of p(x_{t-1} | x_t) given a noise estimate.
Posterior posterior_mean_variance(const MultibandImage& x_t, int t, const MultibandImage& eps_hat,
                                  const NoiseSchedule& schedule);

/// Standard normal image drawn from rng in row-major, band-interleaved order.
MultibandImage standard_normal(int height, int width, int bands, Rng& rng);

/// Anything that can estimate the injected noise of a conditional diffusion state.
class NoiseModel {
 public:
  virtual ~NoiseModel() = default;
  virtual int target_bands() const = 0;
  virtual int cond_bands() const = 0;
  virtual MultibandImage estimate_noise(const MultibandImage& x_t, const MultibandImage& cond,
                                        int t, const NoiseSchedule& schedule) const = 0;
};

/// One ancestral step x_t -> x_{t-1}; no noise is added at t = 1.
MultibandImage p_sample_step(const NoiseModel& model, const MultibandImage& x_t,
                             const MultibandImage& cond, int t, const NoiseSchedule& schedule,
                             Rng& rng);

/// Full reverse chain from x_T ~ N(0, I) to a clipped reconstruction, tagged
/// PAN for one output band and MS_UP otherwise.
MultibandImage sample_loop(const NoiseModel& model, const MultibandImage& cond, int out_bands,
                           const NoiseSchedule& schedule, Rng& rng);

}  // namespace crossdiff
