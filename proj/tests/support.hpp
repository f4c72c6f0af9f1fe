#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <functional>
#include <random>
#include <vector>

#include "crossdiff/image.hpp"
#include "crossdiff/nn/graph.hpp"
#include "crossdiff/nn/parameters.hpp"
#include "crossdiff/predictor.hpp"

namespace testing {

using crossdiff::ImageKind;
using crossdiff::MultibandImage;

inline MultibandImage random_image(std::mt19937_64& rng, int h, int w, int bands, ImageKind kind = ImageKind::Ms,
                                   double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  MultibandImage img(h, w, bands, kind);
  for (double& v : img.data()) v = u(rng);
  return img;
}

inline void fill(MultibandImage& img, std::initializer_list<double> values) {
  std::copy(values.begin(), values.end(), img.data().begin());
}

inline crossdiff::nn::Tensor<double> random_tensor(std::mt19937_64& rng, int c, int h, int w, double lo = -1.0,
                                                   double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  crossdiff::nn::Tensor<double> t(c, h, w);
  for (double& v : t.data) v = u(rng);
  return t;
}

inline double max_abs_diff(const MultibandImage& a, const MultibandImage& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

/// Relative error used by all gradient checks: |a - n| / max(|a|, |n|, floor).
inline double rel_err(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Builds a scalar on a fresh graph from the input tensor.
using ScalarFn = std::function<crossdiff::nn::Var(crossdiff::nn::Graph<double>&, crossdiff::nn::Var)>;

/// Largest relative error between the tape gradient and central differences
/// at up to `probes` entries of x.
inline double input_grad_error(const ScalarFn& f, const crossdiff::nn::Tensor<double>& x, int probes = 24,
                               double h = 1e-6, std::uint64_t seed = 7) {
  crossdiff::nn::Graph<double> g;
  auto xv = g.input(x, true);
  g.backward(f(g, xv));
  const auto grad = g.grad(xv);
  const auto eval = [&](const crossdiff::nn::Tensor<double>& in) {
    crossdiff::nn::Graph<double> gg(false);
    return gg.value(f(gg, gg.constant(in))).data[0];
  };
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  double worst = 0.0;
  const int n = std::min<int>(probes, static_cast<int>(x.size()));
  for (int k = 0; k < n; ++k) {
    const std::size_t i = static_cast<int>(x.size()) <= probes ? static_cast<std::size_t>(k) : pick(rng);
    auto xp = x, xm = x;
    xp.data[i] += h;
    xm.data[i] -= h;
    const double num = (eval(xp) - eval(xm)) / (2.0 * h);
    const double ana = grad.empty() ? 0.0 : grad.data[i];
    worst = std::max(worst, rel_err(ana, num));
  }
  return worst;
}

/// Same for parameters: `run` must zero nothing and return the scalar value;
/// with `backward` true it also runs the tape so grads accumulate.
inline double param_grad_error(crossdiff::nn::ParameterSet<double>& params,
                               const std::function<double(bool backward)>& run, int probes = 24,
                               double h = 1e-6, std::uint64_t seed = 11) {
  params.zero_grad();
  run(true);
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  const auto& names = params.names();
  std::uniform_int_distribution<std::size_t> pick_name(0, names.size() - 1);
  for (int k = 0; k < probes; ++k) {
    auto& p = params.at(names[pick_name(rng)]);
    std::uniform_int_distribution<std::size_t> pick(0, p.size() - 1);
    const std::size_t i = pick(rng);
    const double ana = p.grad[i];
    const double orig = p.value[i];
    p.value[i] = orig + h;
    const double fp = run(false);
    p.value[i] = orig - h;
    const double fm = run(false);
    p.value[i] = orig;
    worst = std::max(worst, rel_err(ana, (fp - fm) / (2.0 * h)));
  }
  return worst;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() / ("crossdiff_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Small predictor config for fast tests.
inline crossdiff::PredictorConfig tiny_config(int in_bands, int cond_bands) {
  crossdiff::PredictorConfig c;
  c.in_bands = in_bands;
  c.cond_bands = cond_bands;
  c.base_channels = 8;
  c.channel_mults = {1, 2};
  c.res_blocks_per_level = 1;
  c.time_embed_dim = 16;
  c.norm_groups = 4;
  return c;
}

/// Random values in every parameter (so zero-initialized layers are active).
template <typename T>
void randomize(crossdiff::nn::ParameterSet<T>& params, std::uint64_t seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (const auto& name : params.names()) {
    for (auto& v : params.at(name).value) v = static_cast<T>(u(rng));
  }
}

}  // namespace testing
