#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "crossdiff/diffusion.hpp"
#include "crossdiff/image.hpp"
#include "crossdiff/nn/graph.hpp"
#include "crossdiff/nn/parameters.hpp"

namespace crossdiff {

/// Which cross-prediction a predictor serves: MS from PAN, or PAN from MS.
enum class Role { P2M, M2P };
/// What the network regresses during pre-training.
enum class Objective { Noise, Clean };

std::string_view to_string(Role role);
std::string_view to_string(Objective objective);
Role role_from_string(std::string_view s);
Objective objective_from_string(std::string_view s);

struct PredictorConfig {
  int in_bands = 4;
  int cond_bands = 1;
  int base_channels = 32;
  std::vector<int> channel_mults{1, 2, 4};
  int res_blocks_per_level = 2;
  int time_embed_dim = 128;
  int norm_groups = 8;

  int levels() const { return static_cast<int>(channel_mults.size()); }
  int channels(int level) const { return base_channels * channel_mults.at(level); }
  /// Spatial dims must be multiples of this.
  int spatial_multiple() const { return 1 << (levels() - 1); }

  void validate() const;
  void validate_input(int height, int width) const;

  bool operator==(const PredictorConfig&) const = default;
};

/// Raw sinusoidal encoding: entry 2i = sin(t / 10000^(2i/dim)), 2i+1 = cos(...).
std::vector<double> sinusoidal_time_embedding(int t, int dim);

/// Encoder activations at scale divisors 1, 2, 4, ... (C x H/2^k x W/2^k).
template <typename T>
struct FeaturePyramid {
  struct Level {
    int scale_divisor = 1;
    nn::Tensor<T> features;
  };
  std::vector<Level> levels;
};

/// Conditional UNet eps(x_t, cond, t).
///
/// The noisy target and the condition are concatenated at the input. The
/// encoder has `res_blocks_per_level` residual blocks per level followed by a
/// stride-2 convolution (except at the coarsest level); a two-block bottleneck
/// follows, and the decoder mirrors the encoder with skip concatenation and
/// nearest-neighbour upsampling. The output convolution is zero-initialized so
/// a fresh predictor returns zeros.
template <typename T>
class BasicNoisePredictor : public NoiseModel {
 public:
  BasicNoisePredictor() = default;
  BasicNoisePredictor(PredictorConfig config, Role role, Objective objective,
                      nn::ParameterSet<T> params);

  static BasicNoisePredictor build(const PredictorConfig& config, Role role, Rng& rng,
                                   Objective objective = Objective::Noise);

  const PredictorConfig& config() const { return config_; }
  Role role() const { return role_; }
  Objective objective() const { return objective_; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  /// Records the full network on `g`; when `taps` is given the encoder's
  /// per-level activations (after the residual stack, before downsampling)
  /// are appended to it.
  nn::Var forward(nn::Graph<T>& g, nn::Var x_t, nn::Var cond, int t,
                  std::vector<nn::Var>* taps = nullptr) const;

  /// Records only the encoder and returns its per-level taps.
  std::vector<nn::Var> encode(nn::Graph<T>& g, nn::Var x_t, nn::Var cond, int t) const;

  /// Network output for one input (the noise estimate under the NOISE
  /// objective, the clean-signal estimate under CLEAN).
  nn::Tensor<T> predict(const nn::Tensor<T>& x_t, const nn::Tensor<T>& cond, int t) const;

  FeaturePyramid<T> encode_features(const nn::Tensor<T>& x_t, const nn::Tensor<T>& cond,
                                    int t) const;

  // NoiseModel
  int target_bands() const override { return config_.in_bands; }
  int cond_bands() const override { return config_.cond_bands; }
  MultibandImage estimate_noise(const MultibandImage& x_t, const MultibandImage& cond, int t,
                                const NoiseSchedule& schedule) const override;

  template <typename U>
  BasicNoisePredictor<U> cast() const {
    return BasicNoisePredictor<U>(config_, role_, objective_, params_.template cast<U>());
  }

 private:
  nn::Var res_block(nn::Graph<T>& g, nn::Var x, nn::Var temb, const std::string& name) const;
  nn::Var time_features(nn::Graph<T>& g, int t) const;
  std::vector<nn::Var> encoder_levels(nn::Graph<T>& g, nn::Var x_t, nn::Var cond, nn::Var temb) const;
  void check_inputs(const nn::Tensor<T>& x_t, const nn::Tensor<T>& cond) const;

  PredictorConfig config_;
  Role role_ = Role::P2M;
  Objective objective_ = Objective::Noise;
  nn::ParameterSet<T> params_;
};

using NoisePredictor = BasicNoisePredictor<float>;

extern template class BasicNoisePredictor<float>;
extern template class BasicNoisePredictor<double>;

/// Noise estimate for one image pair (shape of x_t, tagged NOISE_STATE).
template <typename T>
MultibandImage predict_noise(const BasicNoisePredictor<T>& predictor, const MultibandImage& x_t,
                             const MultibandImage& cond, int t) {
  if (x_t.bands() != predictor.config().in_bands || cond.bands() != predictor.config().cond_bands ||
      !x_t.same_spatial(cond)) {
    throw std::invalid_argument("predict_noise: input shape/channel mismatch");
  }
  return nn::to_image(predictor.predict(nn::to_tensor<T>(x_t), nn::to_tensor<T>(cond), t),
                      ImageKind::NoiseState);
}

template <typename T>
FeaturePyramid<T> encode_features(const BasicNoisePredictor<T>& predictor,
                                  const MultibandImage& x_t, const MultibandImage& cond, int t) {
  return predictor.encode_features(nn::to_tensor<T>(x_t), nn::to_tensor<T>(cond), t);
}

}  // namespace crossdiff
