#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "crossdiff/diffusion.hpp"
#include "crossdiff/image.hpp"
#include "crossdiff/metrics.hpp"
#include "crossdiff/nn/graph.hpp"
#include "crossdiff/predictor.hpp"

namespace crossdiff {

struct AdaptConfig {
  int feature_step = 50;
  int epochs = 20;
  int batch_size = 32;
  double learning_rate = 3e-4;
  double lambda = 0.01;
  EvalMode mode = EvalMode::FullRes;
  bool attention_enabled = true;
  std::uint64_t seed = 0;
  std::uint64_t inference_seed = 0;
  int block = 32;

  void validate(const NoiseSchedule& schedule) const;
  bool operator==(const AdaptConfig&) const = default;
};

/// Per-level channel concatenation [a || b] of two pyramids.
template <typename T>
FeaturePyramid<T> concat_pyramids(const FeaturePyramid<T>& a, const FeaturePyramid<T>& b);

/// Spectral features from P2M on a noised ms_up under the PAN condition,
/// spatial features from M2P on a noised PAN under ms_up, concatenated as
/// [spectral || spatial] per level. eps_ms is drawn before eps_pan.
FeaturePyramid<float> extract_fusion_features(const NoisePredictor& p2m, const NoisePredictor& m2p,
                                              const MultibandImage& pan, const MultibandImage& ms_up,
                                              int t_feat, const NoiseSchedule& schedule, Rng& rng);

/// Same with explicit noise images.
FeaturePyramid<float> extract_fusion_features(const NoisePredictor& p2m, const NoisePredictor& m2p,
                                              const MultibandImage& pan, const MultibandImage& ms_up,
                                              int t_feat, const NoiseSchedule& schedule,
                                              const MultibandImage& eps_ms, const MultibandImage& eps_pan);

/// Concurrent spatial and channel squeeze-and-excitation using parameters
/// "<prefix>.cse.fc1", "<prefix>.cse.fc2" (linear) and "<prefix>.sse" (1x1 conv).
template <typename T>
nn::Var scse(nn::Graph<T>& g, nn::Var x, const nn::ParameterSet<T>& params, const std::string& prefix);

/// Attention-guided fusion head.
///
/// Level k has an attention layer: 3x3 conv (C_k -> C_k), LeakyReLU(0.2) and
/// scSE. Starting from the coarsest level, the running map is upsampled 2x
/// (nearest), projected by a 1x1 conv to the next level's width and added to
/// that level's attention output. Two 3x3 convs (C_0 -> C_0/2, LeakyReLU,
/// -> bands) give the residual; the last one is zero-initialized.
template <typename T>
class FusionHead {
 public:
  FusionHead() = default;
  FusionHead(std::vector<int> level_channels, int bands, int ratio, bool attention, nn::ParameterSet<T> params);

  static FusionHead build(std::vector<int> level_channels, int bands, int ratio, bool attention, Rng& rng);

  const std::vector<int>& level_channels() const { return level_channels_; }
  int levels() const { return static_cast<int>(level_channels_.size()); }
  int bands() const { return bands_; }
  int ratio() const { return ratio_; }
  bool attention() const { return attention_; }
  void set_attention(bool on) { attention_ = on; }
  nn::ParameterSet<T>& parameters() { return params_; }
  const nn::ParameterSet<T>& parameters() const { return params_; }

  /// Residual map (bands x H x W) from per-level features.
  nn::Var residual(nn::Graph<T>& g, const std::vector<nn::Var>& levels) const;

  /// clip(ms_up + residual, 0, 1).
  nn::Var forward(nn::Graph<T>& g, const std::vector<nn::Var>& levels, nn::Var ms_up) const;

  template <typename U>
  FusionHead<U> cast() const {
    return FusionHead<U>(level_channels_, bands_, ratio_, attention_, params_.template cast<U>());
  }

 private:
  nn::Var attention_layer(nn::Graph<T>& g, nn::Var x, int level) const;

  std::vector<int> level_channels_;
  int bands_ = 4;
  int ratio_ = 4;
  bool attention_ = true;
  nn::ParameterSet<T> params_;
};

extern template class FusionHead<float>;
extern template class FusionHead<double>;

/// Head sized for the concatenated pyramids of this predictor pair.
FusionHead<float> build_fusion_head(const NoisePredictor& p2m, const NoisePredictor& m2p, int ratio,
                                    bool attention, std::uint64_t seed);

template <typename T>
MultibandImage fuse(const FusionHead<T>& head, const FeaturePyramid<T>& pyramid, const MultibandImage& ms_up);

/// One adaptation example; `reference` is required in REDUCED_RES.
struct AdaptSample {
  ImagePair pair;
  std::optional<MultibandImage> reference;
};

struct AdaptResult {
  FusionHead<float> head;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

/// Trains only the head with AdamW. FULL_RES minimizes loss_full, REDUCED_RES
/// the L1 distance to the reference. Features are re-extracted with fresh
/// noise for every example. Throws std::logic_error if a predictor changed.
AdaptResult adapt(const NoisePredictor& p2m, const NoisePredictor& m2p, const FusionHead<float>& head,
                  const std::vector<AdaptSample>& dataset, const AdaptConfig& cfg, const NoiseSchedule& schedule,
                  const std::function<void(int epoch, double loss)>& on_epoch = {});

/// Fused image for one pair, using the fixed inference seed.
MultibandImage pansharpen(const NoisePredictor& p2m, const NoisePredictor& m2p, const FusionHead<float>& head,
                          const ImagePair& pair, const AdaptConfig& cfg, const NoiseSchedule& schedule);

void save_fusion_head(const FusionHead<float>& head, const std::string& path, const AdaptConfig& cfg = {});
FusionHead<float> load_fusion_head(const std::string& path, AdaptConfig* cfg = nullptr);

}  // namespace crossdiff
