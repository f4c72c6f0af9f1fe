#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "crossdiff/diffusion.hpp"
#include "crossdiff/image.hpp"
#include "crossdiff/nn/adamw.hpp"
#include "crossdiff/predictor.hpp"

namespace crossdiff {

struct PretrainConfig {
  int epochs = 1000;
  int batch_size = 32;
  double learning_rate = 3e-4;
  int horizon = 1000;
  std::uint64_t seed = 0;
  Objective objective = Objective::Noise;

  void validate() const;
  bool operator==(const PretrainConfig&) const = default;
};

/// One training example for a branch: noisy target, condition, step and the
/// regression target (the drawn noise, or x0 under CLEAN).
struct TrainingSample {
  MultibandImage x_t;
  MultibandImage cond;
  int t = 1;
  MultibandImage target;
};

/// Draws t uniformly from {1..T}, then the noise, and wires the pair for the
/// role: P2M noises ms_up under the PAN condition, M2P noises PAN under ms_up.
TrainingSample draw_training_sample(const MultibandImage& pan, const MultibandImage& ms_up, Role role,
                                    const NoiseSchedule& schedule, Objective objective, Rng& rng);

/// Mean squared error between a prediction and its target.
double regression_loss(const MultibandImage& prediction, const MultibandImage& target);

/// Mean loss over the batch. Gradients of that mean are accumulated into the
/// predictor's parameter buffers (not applied).
template <typename T>
double pretrain_step(BasicNoisePredictor<T>& predictor, const std::vector<ImagePair>& batch,
                     const NoiseSchedule& schedule, Objective objective, Rng& rng);

/// Same, with the upsampled MS images supplied by the caller.
template <typename T>
double pretrain_step(BasicNoisePredictor<T>& predictor, const std::vector<const ImagePair*>& batch,
                     const std::vector<const MultibandImage*>& ms_up, const NoiseSchedule& schedule,
                     Objective objective, Rng& rng);

struct EpochLog {
  int epoch = 0;
  double p2m_loss = 0.0;
  double m2p_loss = 0.0;

  /// "epoch=<n> p2m_loss=<f> m2p_loss=<f>"
  std::string to_string() const;
};

struct PretrainResult {
  NoisePredictor p2m;
  NoisePredictor m2p;
  std::vector<EpochLog> log;
};

/// Predictor configs for the two branches of a dataset with `ms_bands` bands.
PredictorConfig branch_config(const PredictorConfig& arch, Role role, int ms_bands);

/// Fresh predictors as pretrain() initializes them for this seed.
PretrainResult fresh_predictors(const PredictorConfig& arch, int ms_bands, const PretrainConfig& cfg);

/// Stateful stage-1 trainer: both predictors, their optimizers and the
/// seeded shuffle / noise streams. Lets callers train in chunks.
class Pretrainer {
 public:
  Pretrainer(const std::vector<ImagePair>& dataset, const PretrainConfig& cfg, const PredictorConfig& arch,
             double schedule_offset = 0.008);

  /// One pass over the shuffled dataset; returns and records its log line.
  EpochLog run_epoch();

  int epoch() const { return epoch_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  NoisePredictor& p2m() { return p2m_; }
  NoisePredictor& m2p() { return m2p_; }
  const std::vector<EpochLog>& log() const { return log_; }

 private:
  std::vector<ImagePair> dataset_;
  std::vector<MultibandImage> ms_up_;
  PretrainConfig cfg_;
  NoiseSchedule schedule_;
  NoisePredictor p2m_, m2p_;
  nn::AdamW<float> p2m_opt_, m2p_opt_;
  Rng shuffle_rng_, p2m_rng_, m2p_rng_;
  int epoch_ = 0;
  std::vector<EpochLog> log_;
};

/// Trains P2M and M2P independently with AdamW, one step per branch per
/// shuffled batch, for cfg.epochs epochs. `on_epoch` sees every log line.
PretrainResult pretrain(const std::vector<ImagePair>& dataset, const PretrainConfig& cfg,
                        const PredictorConfig& arch, double schedule_offset = 0.008,
                        const std::function<void(const EpochLog&)>& on_epoch = {});

struct PredictorCheckpoint {
  NoisePredictor predictor;
  PretrainConfig pretrain;
  int epoch = 0;
  double schedule_offset = 0.008;
};

void save_checkpoint(const NoisePredictor& predictor, const std::string& path,
                     const PretrainConfig& pretrain = {}, int epoch = 0, double schedule_offset = 0.008);
PredictorCheckpoint load_predictor_checkpoint(const std::string& path);
NoisePredictor load_checkpoint(const std::string& path);

}  // namespace crossdiff
