#include "crossdiff/pretrain.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "crossdiff/checkpoint.hpp"
#include "crossdiff/errors.hpp"
#include "crossdiff/serialize.hpp"

namespace crossdiff {

namespace {

enum Stream : std::uint64_t { kP2mInit = 1, kM2pInit = 2, kShuffle = 3, kP2mNoise = 4, kM2pNoise = 5 };

}  // namespace

void PretrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("pretrain.epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("pretrain.batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("pretrain.learning_rate must be positive");
  if (horizon < 1) throw std::invalid_argument("pretrain.horizon must be positive");
}

TrainingSample draw_training_sample(const MultibandImage& pan, const MultibandImage& ms_up, Role role,
                                    const NoiseSchedule& schedule, Objective objective, Rng& rng) {
  if (!pan.same_spatial(ms_up) || pan.bands() != 1) {
    throw std::invalid_argument("training sample needs a one-band PAN and MS_UP of equal dims");
  }
  std::uniform_int_distribution<int> step(1, schedule.horizon());
  TrainingSample s;
  s.t = step(rng);
  const MultibandImage& x0 = role == Role::P2M ? ms_up : pan;
  s.cond = role == Role::P2M ? pan : ms_up;
  auto eps = standard_normal(x0.height(), x0.width(), x0.bands(), rng);
  s.x_t = q_sample(x0, s.t, eps, schedule);
  s.target = objective == Objective::Noise ? std::move(eps) : x0;
  return s;
}

double regression_loss(const MultibandImage& prediction, const MultibandImage& target) {
  if (!prediction.same_shape(target)) throw std::invalid_argument("prediction/target shape mismatch");
  auto a = prediction.data();
  auto b = target.data();
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

template <typename T>
double pretrain_step(BasicNoisePredictor<T>& predictor, const std::vector<const ImagePair*>& batch,
                     const std::vector<const MultibandImage*>& ms_up, const NoiseSchedule& schedule,
                     Objective objective, Rng& rng) {
  if (batch.empty() || batch.size() != ms_up.size()) throw std::invalid_argument("empty or ragged batch");
  const auto& cfg = predictor.config();
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& pair = *batch[i];
    const auto& up = *ms_up[i];
    const bool p2m = predictor.role() == Role::P2M;
    const int target_bands = p2m ? up.bands() : 1;
    const int cond_bands = p2m ? 1 : up.bands();
    if (cfg.in_bands != target_bands || cfg.cond_bands != cond_bands) {
      throw std::invalid_argument("predictor role/bands do not match the batch");
    }
    const auto s = draw_training_sample(pair.pan, up, predictor.role(), schedule, objective, rng);
    nn::Graph<T> g;
    const auto out = predictor.forward(g, g.constant(nn::to_tensor<T>(s.x_t)),
                                       g.constant(nn::to_tensor<T>(s.cond)), s.t);
    const auto err = g.sub(out, g.constant(nn::to_tensor<T>(s.target)));
    const auto loss = g.mean(g.square(err));
    total += static_cast<double>(g.value(loss).data[0]);
    g.backward(g.mul_scalar(loss, static_cast<T>(scale)));
  }
  return total * scale;
}

template <typename T>
double pretrain_step(BasicNoisePredictor<T>& predictor, const std::vector<ImagePair>& batch,
                     const NoiseSchedule& schedule, Objective objective, Rng& rng) {
  std::vector<MultibandImage> ups;
  ups.reserve(batch.size());
  for (const auto& p : batch) ups.push_back(upsample(p.ms, p.ratio));
  std::vector<const ImagePair*> pp;
  std::vector<const MultibandImage*> up;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    pp.push_back(&batch[i]);
    up.push_back(&ups[i]);
  }
  return pretrain_step(predictor, pp, up, schedule, objective, rng);
}

template double pretrain_step(BasicNoisePredictor<float>&, const std::vector<ImagePair>&,
                              const NoiseSchedule&, Objective, Rng&);
template double pretrain_step(BasicNoisePredictor<double>&, const std::vector<ImagePair>&,
                              const NoiseSchedule&, Objective, Rng&);
template double pretrain_step(BasicNoisePredictor<float>&, const std::vector<const ImagePair*>&,
                              const std::vector<const MultibandImage*>&, const NoiseSchedule&, Objective,
                              Rng&);
template double pretrain_step(BasicNoisePredictor<double>&, const std::vector<const ImagePair*>&,
                              const std::vector<const MultibandImage*>&, const NoiseSchedule&, Objective,
                              Rng&);

std::string EpochLog::to_string() const {
  char buf[160];
  std::snprintf(buf, sizeof buf, "epoch=%d p2m_loss=%.9g m2p_loss=%.9g", epoch, p2m_loss, m2p_loss);
  return buf;
}

PredictorConfig branch_config(const PredictorConfig& arch, Role role, int ms_bands) {
  PredictorConfig c = arch;
  c.in_bands = role == Role::P2M ? ms_bands : 1;
  c.cond_bands = role == Role::P2M ? 1 : ms_bands;
  return c;
}

PretrainResult fresh_predictors(const PredictorConfig& arch, int ms_bands, const PretrainConfig& cfg) {
  Rng r1 = derive_rng(cfg.seed, kP2mInit);
  Rng r2 = derive_rng(cfg.seed, kM2pInit);
  PretrainResult out;
  out.p2m = NoisePredictor::build(branch_config(arch, Role::P2M, ms_bands), Role::P2M, r1, cfg.objective);
  out.m2p = NoisePredictor::build(branch_config(arch, Role::M2P, ms_bands), Role::M2P, r2, cfg.objective);
  return out;
}

namespace {

nn::AdamWOptions adam_options(const PretrainConfig& cfg) {
  nn::AdamWOptions o;
  o.learning_rate = cfg.learning_rate;
  return o;
}

}  // namespace

Pretrainer::Pretrainer(const std::vector<ImagePair>& dataset, const PretrainConfig& cfg,
                       const PredictorConfig& arch, double schedule_offset)
    : dataset_(dataset),
      cfg_(cfg),
      schedule_(make_cosine_schedule(cfg.horizon, schedule_offset)),
      p2m_opt_(adam_options(cfg)),
      m2p_opt_(adam_options(cfg)),
      shuffle_rng_(derive_rng(cfg.seed, kShuffle)),
      p2m_rng_(derive_rng(cfg.seed, kP2mNoise)),
      m2p_rng_(derive_rng(cfg.seed, kM2pNoise)) {
  cfg.validate();
  if (dataset_.empty()) throw std::invalid_argument("pretrain: empty dataset");
  const int bands = dataset_.front().ms.bands();
  for (const auto& p : dataset_) {
    p.validate();
    if (p.ms.bands() != bands) throw std::invalid_argument("pretrain: inconsistent band counts");
    ms_up_.push_back(upsample(p.ms, p.ratio));
  }
  auto fresh = fresh_predictors(arch, bands, cfg);
  p2m_ = std::move(fresh.p2m);
  m2p_ = std::move(fresh.m2p);
}

EpochLog Pretrainer::run_epoch() {
  std::vector<std::size_t> order(dataset_.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), shuffle_rng_);
  double p2m_sum = 0.0, m2p_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg_.batch_size);
    std::vector<const ImagePair*> batch;
    std::vector<const MultibandImage*> ups;
    for (std::size_t i = start; i < end; ++i) {
      batch.push_back(&dataset_[order[i]]);
      ups.push_back(&ms_up_[order[i]]);
    }
    const double n = static_cast<double>(batch.size());
    p2m_sum += n * pretrain_step(p2m_, batch, ups, schedule_, cfg_.objective, p2m_rng_);
    p2m_opt_.step(p2m_.parameters());
    m2p_sum += n * pretrain_step(m2p_, batch, ups, schedule_, cfg_.objective, m2p_rng_);
    m2p_opt_.step(m2p_.parameters());
  }
  ++epoch_;
  EpochLog e{epoch_, p2m_sum / order.size(), m2p_sum / order.size()};
  log_.push_back(e);
  return e;
}

PretrainResult pretrain(const std::vector<ImagePair>& dataset, const PretrainConfig& cfg,
                        const PredictorConfig& arch, double schedule_offset,
                        const std::function<void(const EpochLog&)>& on_epoch) {
  Pretrainer trainer(dataset, cfg, arch, schedule_offset);
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto log = trainer.run_epoch();
    if (on_epoch) on_epoch(log);
  }
  return {std::move(trainer.p2m()), std::move(trainer.m2p()), trainer.log()};
}

void save_checkpoint(const NoisePredictor& predictor, const std::string& path, const PretrainConfig& pretrain,
                     int epoch, double schedule_offset) {
  Container c;
  c.role = std::string(to_string(predictor.role()));
  c.meta = {{"predictor_config", predictor.config()},
            {"pretrain_config", pretrain},
            {"objective", std::string(to_string(predictor.objective()))},
            {"epoch", epoch},
            {"schedule_offset", schedule_offset},
            {"schedule_horizon", pretrain.horizon}};
  c.arrays = predictor.parameters();
  write_container(path, c);
}

PredictorCheckpoint load_predictor_checkpoint(const std::string& path) {
  auto c = read_container(path);
  if (c.role != "P2M" && c.role != "M2P") throw FormatError("checkpoint is not a predictor: " + c.role);
  PredictorCheckpoint out;
  try {
    const auto config = c.meta.at("predictor_config").get<PredictorConfig>();
    out.pretrain = c.meta.at("pretrain_config").get<PretrainConfig>();
    out.epoch = c.meta.at("epoch").get<int>();
    out.schedule_offset = c.meta.at("schedule_offset").get<double>();
    const auto objective = objective_from_string(c.meta.at("objective").get<std::string>());
    // Rebuild to learn the expected parameter names and shapes.
    Rng rng(0);
    auto expected = NoisePredictor::build(config, role_from_string(c.role), rng, objective);
    const auto& names = expected.parameters().names();
    if (names.size() != c.arrays.names().size()) throw CorruptionError("checkpoint parameter count mismatch");
    nn::ParameterSet<float> params;
    for (const auto& name : names) {
      if (!c.arrays.contains(name)) throw CorruptionError("checkpoint lacks parameter " + name);
      const auto& src = c.arrays.at(name);
      if (src.shape != expected.parameters().at(name).shape) {
        throw CorruptionError("checkpoint shape mismatch for " + name);
      }
      params.add(name, src.shape).value = src.value;
    }
    out.predictor = NoisePredictor(config, role_from_string(c.role), objective, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed predictor manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CorruptionError(std::string("invalid predictor manifest: ") + e.what());
  }
  return out;
}

NoisePredictor load_checkpoint(const std::string& path) { return load_predictor_checkpoint(path).predictor; }

}  // namespace crossdiff
