#include "crossdiff/predictor.hpp"

#include <cmath>
#include <stdexcept>

namespace crossdiff {

using nn::Graph;
using nn::Tensor;
using nn::Var;

std::string_view to_string(Role role) {
  return role == Role::P2M ? "P2M" : "M2P";
}

std::string_view to_string(Objective objective) {
  return objective == Objective::Noise ? "NOISE" : "CLEAN";
}

Role role_from_string(std::string_view s) {
  if (s == "P2M") return Role::P2M;
  if (s == "M2P") return Role::M2P;
  throw std::invalid_argument("unknown predictor role: " + std::string(s));
}

Objective objective_from_string(std::string_view s) {
  if (s == "NOISE") return Objective::Noise;
  if (s == "CLEAN") return Objective::Clean;
  throw std::invalid_argument("unknown objective: " + std::string(s));
}

void PredictorConfig::validate() const {
  if (in_bands < 1 || cond_bands < 1) throw std::invalid_argument("band counts must be positive");
  if (base_channels < 1 || norm_groups < 1 || res_blocks_per_level < 1) {
    throw std::invalid_argument("predictor sizes must be positive");
  }
  if (base_channels % norm_groups != 0) {
    throw std::invalid_argument("base_channels must be divisible by norm_groups");
  }
  if (channel_mults.size() < 2) throw std::invalid_argument("need at least two resolution levels");
  for (int m : channel_mults) {
    if (m < 1) throw std::invalid_argument("channel multipliers must be positive");
  }
  if (time_embed_dim < 2 || time_embed_dim % 2 != 0) {
    throw std::invalid_argument("time_embed_dim must be a positive even number");
  }
}

void PredictorConfig::validate_input(int height, int width) const {
  const int m = spatial_multiple();
  if (height % m != 0 || width % m != 0) {
    throw std::invalid_argument("input dims must be divisible by 2^(levels-1)");
  }
}

std::vector<double> sinusoidal_time_embedding(int t, int dim) {
  if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even");
  std::vector<double> out(dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, (2.0 * i) / dim);
    out[2 * i] = std::sin(t / freq);
    out[2 * i + 1] = std::cos(t / freq);
  }
  return out;
}

namespace {

template <typename T>
void add_conv(nn::ParameterSet<T>& ps, const std::string& name, int cin, int cout, int k, Rng& rng,
              bool zero = false) {
  auto& w = ps.add(name + ".weight", {cout, cin, k, k});
  auto& b = ps.add(name + ".bias", {cout});
  if (!zero) {
    nn::init_uniform_fan_in(w, cin * k * k, rng);
    nn::init_uniform_fan_in(b, cin * k * k, rng);
  }
}

template <typename T>
void add_linear(nn::ParameterSet<T>& ps, const std::string& name, int din, int dout, Rng& rng) {
  nn::init_uniform_fan_in(ps.add(name + ".weight", {dout, din}), din, rng);
  nn::init_uniform_fan_in(ps.add(name + ".bias", {dout}), din, rng);
}

template <typename T>
void add_norm(nn::ParameterSet<T>& ps, const std::string& name, int c) {
  auto& g = ps.add(name + ".gamma", {c});
  std::fill(g.value.begin(), g.value.end(), T(1));
  ps.add(name + ".beta", {c});
}

template <typename T>
void add_res_block(nn::ParameterSet<T>& ps, const std::string& name, int cin, int cout, int temb,
                   Rng& rng) {
  add_norm(ps, name + ".norm1", cin);
  add_conv(ps, name + ".conv1", cin, cout, 3, rng);
  add_linear(ps, name + ".temb", temb, cout, rng);
  add_norm(ps, name + ".norm2", cout);
  add_conv(ps, name + ".conv2", cout, cout, 3, rng);
  if (cin != cout) add_conv(ps, name + ".skip", cin, cout, 1, rng);
}

std::string enc_name(int level, int block) {
  return "enc." + std::to_string(level) + ".res." + std::to_string(block);
}
std::string dec_name(int level, int block) {
  return "dec." + std::to_string(level) + ".res." + std::to_string(block);
}

}  // namespace

template <typename T>
BasicNoisePredictor<T>::BasicNoisePredictor(PredictorConfig config, Role role, Objective objective,
                                            nn::ParameterSet<T> params)
    : config_(std::move(config)), role_(role), objective_(objective), params_(std::move(params)) {
  config_.validate();
}

template <typename T>
BasicNoisePredictor<T> BasicNoisePredictor<T>::build(const PredictorConfig& config, Role role,
                                                     Rng& rng, Objective objective) {
  config.validate();
  nn::ParameterSet<T> ps;
  const int temb = 4 * config.time_embed_dim;
  add_linear(ps, "time.0", config.time_embed_dim, temb, rng);
  add_linear(ps, "time.1", temb, temb, rng);
  add_conv(ps, "in_conv", config.in_bands + config.cond_bands, config.base_channels, 3, rng);

  int ch = config.base_channels;
  for (int k = 0; k < config.levels(); ++k) {
    for (int j = 0; j < config.res_blocks_per_level; ++j) {
      add_res_block(ps, enc_name(k, j), ch, config.channels(k), temb, rng);
      ch = config.channels(k);
    }
    if (k + 1 < config.levels()) add_conv(ps, "enc." + std::to_string(k) + ".down", ch, ch, 3, rng);
  }
  add_res_block(ps, "mid.0", ch, ch, temb, rng);
  add_res_block(ps, "mid.1", ch, ch, temb, rng);
  for (int k = config.levels() - 1; k >= 0; --k) {
    for (int j = 0; j < config.res_blocks_per_level; ++j) {
      const int cin = j == 0 ? ch + config.channels(k) : config.channels(k);
      add_res_block(ps, dec_name(k, j), cin, config.channels(k), temb, rng);
    }
    ch = config.channels(k);
    if (k > 0) {
      add_conv(ps, "dec." + std::to_string(k) + ".up", ch, config.channels(k - 1), 3, rng);
      ch = config.channels(k - 1);
    }
  }
  add_norm(ps, "out.norm", ch);
  add_conv(ps, "out.conv", ch, config.in_bands, 3, rng, /*zero=*/true);
  return BasicNoisePredictor(config, role, objective, std::move(ps));
}

template <typename T>
Var BasicNoisePredictor<T>::time_features(Graph<T>& g, int t) const {
  const auto raw = sinusoidal_time_embedding(t, config_.time_embed_dim);
  Tensor<T> emb(config_.time_embed_dim, 1, 1);
  for (std::size_t i = 0; i < raw.size(); ++i) emb.data[i] = static_cast<T>(raw[i]);
  Var h = g.constant(std::move(emb));
  h = g.linear(h, params_.at("time.0.weight"), &params_.at("time.0.bias"));
  h = g.silu(h);
  h = g.linear(h, params_.at("time.1.weight"), &params_.at("time.1.bias"));
  return g.silu(h);
}

template <typename T>
Var BasicNoisePredictor<T>::res_block(Graph<T>& g, Var x, Var temb, const std::string& name) const {
  const auto& p = params_;
  const int groups = config_.norm_groups;
  Var h = g.group_norm(x, groups, p.at(name + ".norm1.gamma"), p.at(name + ".norm1.beta"));
  h = g.silu(h);
  h = g.conv2d(h, p.at(name + ".conv1.weight"), &p.at(name + ".conv1.bias"));
  h = g.add_channel(h, g.linear(temb, p.at(name + ".temb.weight"), &p.at(name + ".temb.bias")));
  h = g.group_norm(h, groups, p.at(name + ".norm2.gamma"), p.at(name + ".norm2.beta"));
  h = g.silu(h);
  h = g.conv2d(h, p.at(name + ".conv2.weight"), &p.at(name + ".conv2.bias"));
  Var skip = x;
  if (p.contains(name + ".skip.weight")) {
    skip = g.conv2d(x, p.at(name + ".skip.weight"), &p.at(name + ".skip.bias"));
  }
  return g.add(skip, h);
}

template <typename T>
std::vector<Var> BasicNoisePredictor<T>::encoder_levels(Graph<T>& g, Var x_t, Var cond, Var temb) const {
  std::vector<Var> taps;
  Var h = g.conv2d(g.concat(x_t, cond), params_.at("in_conv.weight"), &params_.at("in_conv.bias"));
  for (int k = 0; k < config_.levels(); ++k) {
    for (int j = 0; j < config_.res_blocks_per_level; ++j) h = res_block(g, h, temb, enc_name(k, j));
    taps.push_back(h);
    if (k + 1 < config_.levels()) {
      const std::string down = "enc." + std::to_string(k) + ".down";
      h = g.conv2d(h, params_.at(down + ".weight"), &params_.at(down + ".bias"), 2);
    }
  }
  return taps;
}

template <typename T>
std::vector<Var> BasicNoisePredictor<T>::encode(Graph<T>& g, Var x_t, Var cond, int t) const {
  check_inputs(g.value(x_t), g.value(cond));
  return encoder_levels(g, x_t, cond, time_features(g, t));
}

template <typename T>
Var BasicNoisePredictor<T>::forward(Graph<T>& g, Var x_t, Var cond, int t,
                                    std::vector<Var>* taps) const {
  check_inputs(g.value(x_t), g.value(cond));
  Var temb = time_features(g, t);
  const std::vector<Var> skips = encoder_levels(g, x_t, cond, temb);
  if (taps) taps->insert(taps->end(), skips.begin(), skips.end());
  Var h = skips.back();
  h = res_block(g, h, temb, "mid.0");
  h = res_block(g, h, temb, "mid.1");
  for (int k = config_.levels() - 1; k >= 0; --k) {
    h = g.concat(h, skips[k]);
    for (int j = 0; j < config_.res_blocks_per_level; ++j) h = res_block(g, h, temb, dec_name(k, j));
    if (k > 0) {
      const std::string up = "dec." + std::to_string(k) + ".up";
      h = g.conv2d(g.upsample_nearest(h, 2), params_.at(up + ".weight"), &params_.at(up + ".bias"));
    }
  }
  h = g.group_norm(h, config_.norm_groups, params_.at("out.norm.gamma"), params_.at("out.norm.beta"));
  h = g.silu(h);
  return g.conv2d(h, params_.at("out.conv.weight"), &params_.at("out.conv.bias"));
}

template <typename T>
void BasicNoisePredictor<T>::check_inputs(const Tensor<T>& x_t, const Tensor<T>& cond) const {
  if (x_t.c != config_.in_bands || cond.c != config_.cond_bands || x_t.h != cond.h || x_t.w != cond.w) {
    throw std::invalid_argument("predictor input shape/channel mismatch");
  }
  config_.validate_input(x_t.h, x_t.w);
}

template <typename T>
Tensor<T> BasicNoisePredictor<T>::predict(const Tensor<T>& x_t, const Tensor<T>& cond, int t) const {
  check_inputs(x_t, cond);
  Graph<T> g(/*enable_grad=*/false);
  Var out = forward(g, g.constant(x_t), g.constant(cond), t);
  return g.value(out);
}

template <typename T>
FeaturePyramid<T> BasicNoisePredictor<T>::encode_features(const Tensor<T>& x_t, const Tensor<T>& cond,
                                                          int t) const {
  check_inputs(x_t, cond);
  Graph<T> g(/*enable_grad=*/false);
  const auto taps = encode(g, g.constant(x_t), g.constant(cond), t);
  FeaturePyramid<T> pyr;
  for (std::size_t k = 0; k < taps.size(); ++k) {
    pyr.levels.push_back({1 << k, g.value(taps[k])});
  }
  return pyr;
}

template <typename T>
MultibandImage BasicNoisePredictor<T>::estimate_noise(const MultibandImage& x_t,
                                                      const MultibandImage& cond, int t,
                                                      const NoiseSchedule& schedule) const {
  auto out = predict_noise(*this, x_t, cond, t);
  if (objective_ == Objective::Clean) {
    // Network regresses x0; convert to the equivalent noise estimate.
    const double g = schedule.gamma(t);
    const double a = std::sqrt(g), b = std::sqrt(1.0 - g);
    auto dst = out.data();
    auto xs = x_t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = (xs[i] - a * dst[i]) / b;
  }
  return out;
}

template class BasicNoisePredictor<float>;
template class BasicNoisePredictor<double>;

}  // namespace crossdiff
