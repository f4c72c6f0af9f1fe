#include "crossdiff/fusion.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "crossdiff/checkpoint.hpp"
#include "crossdiff/errors.hpp"
#include "crossdiff/losses.hpp"
#include "crossdiff/nn/adamw.hpp"
#include "crossdiff/serialize.hpp"

namespace crossdiff {

using nn::Graph;
using nn::Tensor;
using nn::Var;

namespace {

constexpr double kLeakySlope = 0.2;

enum Stream : std::uint64_t { kHeadInit = 11, kAdaptShuffle = 12, kAdaptNoise = 13 };

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

std::string level_name(const char* what, int k) { return std::string(what) + "." + std::to_string(k); }

}  // namespace

void AdaptConfig::validate(const NoiseSchedule& schedule) const {
  if (feature_step < 1 || feature_step > schedule.horizon()) {
    throw std::invalid_argument("adapt.feature_step must lie in [1, horizon]");
  }
  if (epochs < 0) throw std::invalid_argument("adapt.epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("adapt.batch_size must be positive");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("adapt.learning_rate must be positive");
  if (!(lambda >= 0.0)) throw std::invalid_argument("adapt.lambda must be nonnegative");
  if (block < 1) throw std::invalid_argument("adapt.block must be positive");
}

template <typename T>
FeaturePyramid<T> concat_pyramids(const FeaturePyramid<T>& a, const FeaturePyramid<T>& b) {
  if (a.levels.size() != b.levels.size()) throw std::invalid_argument("pyramid level count mismatch");
  FeaturePyramid<T> out;
  for (std::size_t k = 0; k < a.levels.size(); ++k) {
    const auto& fa = a.levels[k].features;
    const auto& fb = b.levels[k].features;
    if (fa.h != fb.h || fa.w != fb.w) throw std::invalid_argument("pyramid level dims mismatch");
    Tensor<T> cat(fa.c + fb.c, fa.h, fa.w);
    std::copy(fa.data.begin(), fa.data.end(), cat.data.begin());
    std::copy(fb.data.begin(), fb.data.end(), cat.data.begin() + static_cast<std::ptrdiff_t>(fa.size()));
    out.levels.push_back({a.levels[k].scale_divisor, std::move(cat)});
  }
  return out;
}

template FeaturePyramid<float> concat_pyramids(const FeaturePyramid<float>&, const FeaturePyramid<float>&);
template FeaturePyramid<double> concat_pyramids(const FeaturePyramid<double>&, const FeaturePyramid<double>&);

FeaturePyramid<float> extract_fusion_features(const NoisePredictor& p2m, const NoisePredictor& m2p,
                                              const MultibandImage& pan, const MultibandImage& ms_up,
                                              int t_feat, const NoiseSchedule& schedule,
                                              const MultibandImage& eps_ms, const MultibandImage& eps_pan) {
  if (!pan.same_spatial(ms_up) || pan.bands() != 1) {
    throw std::invalid_argument("feature extraction needs one-band PAN and MS_UP of equal dims");
  }
  if (p2m.role() != Role::P2M || m2p.role() != Role::M2P) throw std::invalid_argument("predictor roles swapped");
  const auto spectral = encode_features(p2m, q_sample(ms_up, t_feat, eps_ms, schedule), pan, t_feat);
  const auto spatial = encode_features(m2p, q_sample(pan, t_feat, eps_pan, schedule), ms_up, t_feat);
  return concat_pyramids(spectral, spatial);
}

FeaturePyramid<float> extract_fusion_features(const NoisePredictor& p2m, const NoisePredictor& m2p,
                                              const MultibandImage& pan, const MultibandImage& ms_up,
                                              int t_feat, const NoiseSchedule& schedule, Rng& rng) {
  if (!pan.same_spatial(ms_up)) throw std::invalid_argument("PAN and MS_UP dims differ");
  const auto eps_ms = standard_normal(ms_up.height(), ms_up.width(), ms_up.bands(), rng);
  const auto eps_pan = standard_normal(pan.height(), pan.width(), pan.bands(), rng);
  return extract_fusion_features(p2m, m2p, pan, ms_up, t_feat, schedule, eps_ms, eps_pan);
}

template <typename T>
Var scse(Graph<T>& g, Var x, const nn::ParameterSet<T>& p, const std::string& prefix) {
  if (g.value(x).c < 2) throw std::invalid_argument("scse needs at least two channels");
  Var s = g.global_avg_pool(x);
  s = g.relu(g.linear(s, p.at(prefix + ".cse.fc1.weight"), &p.at(prefix + ".cse.fc1.bias")));
  s = g.sigmoid(g.linear(s, p.at(prefix + ".cse.fc2.weight"), &p.at(prefix + ".cse.fc2.bias")));
  Var q = g.sigmoid(g.conv2d(x, p.at(prefix + ".sse.weight"), &p.at(prefix + ".sse.bias")));
  return g.add(g.mul_channel(x, s), g.mul_pixel(x, q));
}

template Var scse(Graph<float>&, Var, const nn::ParameterSet<float>&, const std::string&);
template Var scse(Graph<double>&, Var, const nn::ParameterSet<double>&, const std::string&);

template <typename T>
FusionHead<T>::FusionHead(std::vector<int> level_channels, int bands, int ratio, bool attention,
                          nn::ParameterSet<T> params)
    : level_channels_(std::move(level_channels)), bands_(bands), ratio_(ratio), attention_(attention),
      params_(std::move(params)) {
  if (level_channels_.empty()) throw std::invalid_argument("fusion head needs at least one level");
  for (int c : level_channels_) {
    if (c < 2) throw std::invalid_argument("fusion head levels need at least two channels");
  }
  if (bands_ < 1) throw std::invalid_argument("fusion head needs at least one band");
}

template <typename T>
FusionHead<T> FusionHead<T>::build(std::vector<int> level_channels, int bands, int ratio, bool attention,
                                   Rng& rng) {
  nn::ParameterSet<T> ps;
  for (std::size_t k = 0; k < level_channels.size(); ++k) {
    const int c = level_channels[k];
    const std::string att = level_name("att", static_cast<int>(k));
    add_conv(ps, att + ".conv", c, c, 3, rng);
    add_linear(ps, att + ".cse.fc1", c, std::max(1, c / 2), rng);
    add_linear(ps, att + ".cse.fc2", std::max(1, c / 2), c, rng);
    add_conv(ps, att + ".sse", c, 1, 1, rng);
    if (k > 0) add_conv(ps, level_name("proj", static_cast<int>(k)), c, level_channels[k - 1], 1, rng);
  }
  const int c0 = level_channels.front();
  const int hidden = std::max(1, c0 / 2);
  add_conv(ps, "rec.0", c0, hidden, 3, rng);
  add_conv(ps, "rec.1", hidden, bands, 3, rng, /*zero=*/true);
  return FusionHead(std::move(level_channels), bands, ratio, attention, std::move(ps));
}

template <typename T>
Var FusionHead<T>::attention_layer(Graph<T>& g, Var x, int level) const {
  const std::string att = level_name("att", level);
  Var h = g.conv2d(x, params_.at(att + ".conv.weight"), &params_.at(att + ".conv.bias"));
  h = g.leaky_relu(h, static_cast<T>(kLeakySlope));
  return attention_ ? scse(g, h, params_, att) : h;
}

template <typename T>
Var FusionHead<T>::residual(Graph<T>& g, const std::vector<Var>& levels) const {
  if (static_cast<int>(levels.size()) != this->levels()) {
    throw std::invalid_argument("pyramid levels do not match the fusion head");
  }
  for (int k = 0; k < this->levels(); ++k) {
    if (g.value(levels[k]).c != level_channels_[k]) {
      throw std::invalid_argument("pyramid level width does not match the fusion head");
    }
  }
  int k = this->levels() - 1;
  Var h = attention_layer(g, levels[k], k);
  for (--k; k >= 0; --k) {
    const std::string proj = level_name("proj", k + 1);
    Var up = g.conv2d(g.upsample_nearest(h, 2), params_.at(proj + ".weight"), &params_.at(proj + ".bias"));
    h = g.add(attention_layer(g, levels[k], k), up);
  }
  h = g.conv2d(h, params_.at("rec.0.weight"), &params_.at("rec.0.bias"));
  h = g.leaky_relu(h, static_cast<T>(kLeakySlope));
  return g.conv2d(h, params_.at("rec.1.weight"), &params_.at("rec.1.bias"));
}

template <typename T>
Var FusionHead<T>::forward(Graph<T>& g, const std::vector<Var>& levels, Var ms_up) const {
  Var r = residual(g, levels);
  if (!g.value(r).same_shape(g.value(ms_up))) throw std::invalid_argument("MS_UP does not match level-0 dims");
  return g.clip(g.add(ms_up, r), T(0), T(1));
}

template class FusionHead<float>;
template class FusionHead<double>;

FusionHead<float> build_fusion_head(const NoisePredictor& p2m, const NoisePredictor& m2p, int ratio,
                                    bool attention, std::uint64_t seed) {
  const auto& a = p2m.config();
  const auto& b = m2p.config();
  if (a.levels() != b.levels()) throw std::invalid_argument("predictor level counts differ");
  std::vector<int> widths;
  for (int k = 0; k < a.levels(); ++k) widths.push_back(a.channels(k) + b.channels(k));
  Rng rng = derive_rng(seed, kHeadInit);
  return FusionHead<float>::build(widths, a.in_bands, ratio, attention, rng);
}

template <typename T>
MultibandImage fuse(const FusionHead<T>& head, const FeaturePyramid<T>& pyramid, const MultibandImage& ms_up) {
  if (static_cast<int>(pyramid.levels.size()) != head.levels()) {
    throw std::invalid_argument("pyramid levels do not match the fusion head");
  }
  Graph<T> g(false);
  std::vector<Var> lv;
  for (const auto& l : pyramid.levels) lv.push_back(g.constant(l.features));
  const auto& r = g.value(head.residual(g, lv));
  if (r.c != ms_up.bands() || r.h != ms_up.height() || r.w != ms_up.width()) {
    throw std::invalid_argument("MS_UP does not match level-0 dims");
  }
  // The sum is formed in double so a zero residual returns ms_up unchanged.
  MultibandImage out(ms_up.height(), ms_up.width(), ms_up.bands(), ImageKind::Fused);
  for (int c = 0; c < r.c; ++c)
    for (int y = 0; y < r.h; ++y)
      for (int x = 0; x < r.w; ++x) {
        const double v = ms_up.at(y, x, c) + static_cast<double>(r.data[(static_cast<std::size_t>(c) * r.h + y) * r.w + x]);
        out.at(y, x, c) = std::clamp(v, 0.0, 1.0);
      }
  return out;
}

template MultibandImage fuse(const FusionHead<float>&, const FeaturePyramid<float>&, const MultibandImage&);
template MultibandImage fuse(const FusionHead<double>&, const FeaturePyramid<double>&, const MultibandImage&);

AdaptResult adapt(const NoisePredictor& p2m, const NoisePredictor& m2p, const FusionHead<float>& head,
                  const std::vector<AdaptSample>& dataset, const AdaptConfig& cfg, const NoiseSchedule& schedule,
                  const std::function<void(int, double)>& on_epoch) {
  cfg.validate(schedule);
  if (dataset.empty()) throw std::invalid_argument("adapt: empty dataset");
  for (const auto& s : dataset) {
    s.pair.validate();
    if (s.pair.ms.bands() != head.bands() || s.pair.ms.bands() != p2m.config().in_bands) {
      throw std::invalid_argument("adapt: band count does not match the predictors");
    }
    if (s.pair.ratio != head.ratio()) throw std::invalid_argument("adapt: ratio does not match the head");
    if (cfg.mode == EvalMode::ReducedRes) {
      if (!s.reference) throw std::invalid_argument("REDUCED_RES adaptation needs references");
      if (s.reference->height() != s.pair.pan.height() || s.reference->width() != s.pair.pan.width() ||
          s.reference->bands() != s.pair.ms.bands()) {
        throw std::invalid_argument("reference must match the fused shape");
      }
    }
  }
  const auto p2m_before = p2m.parameters().cast<float>();
  const auto m2p_before = m2p.parameters().cast<float>();

  AdaptResult result{head, {}};
  result.head.set_attention(cfg.attention_enabled);
  nn::AdamWOptions opt;
  opt.learning_rate = cfg.learning_rate;
  nn::AdamW<float> adam(opt);
  Rng shuffle_rng = derive_rng(cfg.seed, kAdaptShuffle);
  Rng noise_rng = derive_rng(cfg.seed, kAdaptNoise);

  std::vector<MultibandImage> ms_up;
  for (const auto& s : dataset) ms_up.push_back(upsample(s.pair.ms, s.pair.ratio));

  std::vector<std::size_t> order(dataset.size());
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const auto& s = dataset[order[i]];
        const auto& up = ms_up[order[i]];
        const auto pyr = extract_fusion_features(p2m, m2p, s.pair.pan, up, cfg.feature_step, schedule, noise_rng);
        Graph<float> g;
        std::vector<Var> lv;
        for (const auto& l : pyr.levels) lv.push_back(g.constant(l.features));
        const Var fms = result.head.forward(g, lv, g.constant(nn::to_tensor<float>(up)));
        Var loss;
        if (cfg.mode == EvalMode::FullRes) {
          loss = nn_loss::loss_full(g, s.pair.ms, s.pair.pan, up, fms, s.pair.ratio, cfg.lambda, cfg.block).total;
        } else {
          loss = nn_loss::l1(g, fms, g.constant(nn::to_tensor<float>(*s.reference)));
        }
        total += static_cast<double>(g.value(loss).data[0]);
        g.backward(g.mul_scalar(loss, static_cast<float>(scale)));
      }
      adam.step(result.head.parameters());
    }
    const double mean = total / static_cast<double>(order.size());
    result.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }

  if (!p2m.parameters().identical(p2m_before) || !m2p.parameters().identical(m2p_before)) {
    throw std::logic_error("adaptation modified a frozen predictor");
  }
  return result;
}

MultibandImage pansharpen(const NoisePredictor& p2m, const NoisePredictor& m2p, const FusionHead<float>& head,
                          const ImagePair& pair, const AdaptConfig& cfg, const NoiseSchedule& schedule) {
  pair.validate();
  if (pair.ratio != head.ratio()) throw std::invalid_argument("pansharpen: ratio differs from training");
  if (pair.ms.bands() != head.bands()) throw std::invalid_argument("pansharpen: band count mismatch");
  cfg.validate(schedule);
  const auto ms_up = upsample(pair.ms, pair.ratio);
  Rng rng(cfg.inference_seed);
  const auto pyr = extract_fusion_features(p2m, m2p, pair.pan, ms_up, cfg.feature_step, schedule, rng);
  return fuse(head, pyr, ms_up);
}

void save_fusion_head(const FusionHead<float>& head, const std::string& path, const AdaptConfig& cfg) {
  Container c;
  c.role = "FUSION_HEAD";
  c.meta = {{"level_channels", head.level_channels()},
            {"bands", head.bands()},
            {"ratio", head.ratio()},
            {"attention", head.attention()},
            {"adapt_config", cfg}};
  c.arrays = head.parameters();
  write_container(path, c);
}

FusionHead<float> load_fusion_head(const std::string& path, AdaptConfig* cfg) {
  auto c = read_container(path);
  if (c.role != "FUSION_HEAD") throw FormatError("checkpoint is not a fusion head: " + c.role);
  try {
    const auto widths = c.meta.at("level_channels").get<std::vector<int>>();
    const int bands = c.meta.at("bands").get<int>();
    const int ratio = c.meta.at("ratio").get<int>();
    const bool attention = c.meta.at("attention").get<bool>();
    if (cfg) *cfg = c.meta.at("adapt_config").get<AdaptConfig>();
    Rng rng(0);
    const auto expected = FusionHead<float>::build(widths, bands, ratio, attention, rng);
    const auto& names = expected.parameters().names();
    if (names.size() != c.arrays.names().size()) throw CorruptionError("fusion head parameter count mismatch");
    nn::ParameterSet<float> params;
    for (const auto& name : names) {
      if (!c.arrays.contains(name)) throw CorruptionError("fusion head lacks parameter " + name);
      const auto& src = c.arrays.at(name);
      if (src.shape != expected.parameters().at(name).shape) throw CorruptionError("shape mismatch for " + name);
      params.add(name, src.shape).value = src.value;
    }
    return FusionHead<float>(widths, bands, ratio, attention, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("malformed fusion head manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CorruptionError(std::string("invalid fusion head manifest: ") + e.what());
  }
}

}  // namespace crossdiff
