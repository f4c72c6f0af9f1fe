#include <doctest.h>

#include <cmath>

#include "crossdiff/data.hpp"
#include "crossdiff/losses.hpp"
#include "crossdiff/metrics.hpp"
#include "support.hpp"

using namespace crossdiff;

namespace {

// Direct 2-D Gaussian blur, reflect boundary, radius ceil(3 sigma).
MultibandImage blur_oracle(const MultibandImage& img, double sigma) {
  const int r = static_cast<int>(std::ceil(3 * sigma));
  MultibandImage out(img.height(), img.width(), img.bands(), img.kind());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int b = 0; b < img.bands(); ++b) {
        double acc = 0.0, norm = 0.0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const double w = std::exp(-(dy * dy + dx * dx) / (2 * sigma * sigma));
            norm += w;
            acc += w * img.at(reflect_index(y + dy, img.height()), reflect_index(x + dx, img.width()), b);
          }
        out.at(y, x, b) = acc / norm;
      }
  return out;
}

MultibandImage hp_oracle(const MultibandImage& img) {
  MultibandImage out(img.height(), img.width(), img.bands(), ImageKind::NoiseState);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int b = 0; b < img.bands(); ++b) {
        double s = 0.0;
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx)
            s += img.at(reflect_index(y + dy, img.height()), reflect_index(x + dx, img.width()), b);
        out.at(y, x, b) = img.at(y, x, b) - s / 25.0;
      }
  return out;
}

// Weighted-window SSIM evaluated window by window.
double ssim_oracle(const MultibandImage& a, const MultibandImage& b) {
  const int r = std::min(5, (std::min(a.height(), a.width()) - 1) / 2);
  std::vector<std::vector<double>> w(2 * r + 1, std::vector<double>(2 * r + 1));
  double norm = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) norm += w[dy + r][dx + r] = std::exp(-(dy * dy + dx * dx) / (2 * 1.5 * 1.5));
  double total = 0.0;
  int count = 0;
  for (int c = 0; c < a.bands(); ++c)
    for (int y = r; y < a.height() - r; ++y)
      for (int x = r; x < a.width() - r; ++x) {
        double ma = 0, mb = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            ma += w[dy + r][dx + r] / norm * a.at(y + dy, x + dx, c);
            mb += w[dy + r][dx + r] / norm * b.at(y + dy, x + dx, c);
          }
        double va = 0, vb = 0, cab = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx) {
            const double k = w[dy + r][dx + r] / norm;
            const double da = a.at(y + dy, x + dx, c) - ma, db = b.at(y + dy, x + dx, c) - mb;
            va += k * da * da;
            vb += k * db * db;
            cab += k * da * db;
          }
        total += (2 * ma * mb + 1e-4) * (2 * cab + 9e-4) / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
        ++count;
      }
  return total / count;
}

double mae(const MultibandImage& a, const MultibandImage& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a.data()[i] - b.data()[i]);
  return s / a.size();
}

}  // namespace

TEST_CASE("high-pass impulse response") {
  MultibandImage img(9, 9, 1, ImageKind::Pan);
  img.at(4, 4, 0) = 1.0;
  const auto hp = get_hp(img);
  CHECK(hp.kind() == ImageKind::NoiseState);
  for (int y = 0; y < 9; ++y)
    for (int x = 0; x < 9; ++x) {
      const bool near = std::abs(y - 4) <= 2 && std::abs(x - 4) <= 2;
      const double expect = (y == 4 && x == 4) ? 0.96 : (near ? -0.04 : 0.0);
      CHECK(hp.at(y, x, 0) == doctest::Approx(expect).epsilon(1e-12));
    }
  std::mt19937_64 rng(1);
  const auto r = testing::random_image(rng, 7, 6, 2);
  CHECK(testing::max_abs_diff(get_hp(r), hp_oracle(r)) < 1e-12);
}

TEST_CASE("loss blur matches the 2-D oracle") {
  std::mt19937_64 rng(2);
  const auto img = testing::random_image(rng, 12, 12, 3);
  for (int ratio : {2, 4}) CHECK(testing::max_abs_diff(gaussian_blur(img, ratio), blur_oracle(img, ratio / 2.0)) < 1e-12);
}

TEST_CASE("ssim window radius and taps") {
  CHECK(ssim_radius(64, 64) == 5);
  CHECK(ssim_radius(11, 40) == 5);
  CHECK(ssim_radius(8, 8) == 3);
  CHECK(ssim_radius(3, 9) == 1);
  for (int r : {1, 3, 5}) {
    const auto k = ssim_kernel(r);
    REQUIRE(k.size() == static_cast<std::size_t>(2 * r + 1));
    double s = 0;
    for (double v : k) s += v;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(k[r + 1] / k[r] == doctest::Approx(std::exp(-1 / (2 * 1.5 * 1.5))));
  }
}

TEST_CASE("ssim matches the window oracle") {
  std::mt19937_64 rng(3);
  for (int size : {8, 16}) {
    const auto a = testing::random_image(rng, size, size, 2);
    auto b = a;
    std::normal_distribution<double> n(0, 0.1);
    for (double& v : b.data()) v = std::clamp(v + n(rng), 0.0, 1.0);
    CHECK(ssim(a, b) == doctest::Approx(ssim_oracle(a, b)).epsilon(1e-12));
    CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-14));
    CHECK(ssim(a, a) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(ssim(a, b) < 1.0);
  }
  // Checkerboard against its inverse: zero means differ, covariance negative.
  MultibandImage c(16, 16, 1, ImageKind::Ms), d(16, 16, 1, ImageKind::Ms);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      c.at(y, x, 0) = (x + y) % 2 ? 0.8 : 0.2;
      d.at(y, x, 0) = 1.0 - c.at(y, x, 0);
    }
  CHECK(ssim(c, d) == doctest::Approx(ssim_oracle(c, d)).epsilon(1e-12));
  CHECK(ssim(c, d) < 0.0);
}

TEST_CASE("spatial loss is zero for a perfect fixture and matches its composition") {
  std::mt19937_64 rng(4);
  const auto pan = testing::random_image(rng, 16, 16, 1, ImageKind::Pan);
  MultibandImage fms(16, 16, 4, ImageKind::Ms);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x)
      for (int c = 0; c < 4; ++c) fms.at(y, x, c) = pan.at(y, x, 0);
  CHECK(loss_spatial(pan, fms) == doctest::Approx(0.0).epsilon(1e-12));

  const auto other = testing::random_image(rng, 16, 16, 4);
  const auto hp_pan = hp_oracle(pan), hp_f = hp_oracle(channel_mean(other));
  CHECK(loss_spatial(pan, other) == doctest::Approx(mae(hp_pan, hp_f) + 1 - ssim_oracle(hp_pan, hp_f)).epsilon(1e-12));
}

TEST_CASE("spectral loss is zero for a flat fixture and matches its composition") {
  MultibandImage flat(16, 16, 4, ImageKind::Ms, 0.4);
  CHECK(loss_spectral(flat, flat, 4) == doctest::Approx(0.0).epsilon(1e-12));
  std::mt19937_64 rng(5);
  const auto ms_up = testing::random_image(rng, 16, 16, 4, ImageKind::MsUp);
  const auto fms = testing::random_image(rng, 16, 16, 4);
  const auto gs = blur_oracle(fms, 2.0);
  CHECK(loss_spectral(ms_up, fms, 4) == doctest::Approx(mae(ms_up, gs) + 1 - ssim_oracle(ms_up, gs)).epsilon(1e-12));
}

TEST_CASE("qnr loss equals one minus qnr") {
  for (int seed = 0; seed < 4; ++seed) {
    const auto scene = make_synthetic_scene(30 + seed, 32, 32, 4, 4);
    std::mt19937_64 rng(seed);
    auto fms = upsample(scene.ms, 4);
    std::normal_distribution<double> n(0, 0.05);
    for (double& v : fms.data()) v = std::clamp(v + n(rng), 0.0, 1.0);
    for (int block : {8, 32}) {
      CHECK(loss_qnr(scene.ms, scene.pan, fms, 4, block) ==
            doctest::Approx(1.0 - qnr(scene.ms, scene.pan, fms, 4, block)).epsilon(1e-10));
    }
  }
}

TEST_CASE("full loss combines its terms with lambda") {
  const auto scene = make_synthetic_scene(40, 32, 32, 4, 4);
  const auto fms = scene.hrms;
  const auto ms_up = upsample(scene.ms, 4);
  for (double lambda : {0.0, 0.01, 1.0}) {
    const auto r = loss_full(scene.ms, scene.pan, fms, 4, lambda, 32);
    CHECK(r.lambda == lambda);
    CHECK(r.spa == doctest::Approx(loss_spatial(scene.pan, fms)).epsilon(1e-14));
    CHECK(r.spe == doctest::Approx(loss_spectral(ms_up, fms, 4)).epsilon(1e-14));
    CHECK(r.qnr_term == doctest::Approx(loss_qnr(scene.ms, scene.pan, fms, 4, 32)).epsilon(1e-14));
    CHECK(r.total == doctest::Approx(r.qnr_term + lambda * (r.spa + r.spe)).epsilon(1e-14));
  }
  CHECK_THROWS_AS(loss_full(scene.ms, scene.pan, fms, 4, -1.0), std::invalid_argument);
}

TEST_CASE("reduced loss is the mean absolute error") {
  std::mt19937_64 rng(6);
  const auto a = testing::random_image(rng, 5, 5, 3), b = testing::random_image(rng, 5, 5, 3);
  CHECK(loss_reduced(a, b) == doctest::Approx(mae(a, b)).epsilon(1e-14));
  CHECK(loss_reduced(a, a) == 0.0);
  CHECK_THROWS_AS(loss_reduced(a, MultibandImage(5, 5, 2, ImageKind::Ms)), std::invalid_argument);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 rng(7);
  const auto ms = testing::random_image(rng, 2, 2, 4, ImageKind::Ms, 0.2, 0.8);
  const auto pan = testing::random_image(rng, 8, 8, 1, ImageKind::Pan, 0.2, 0.8);
  const auto ms_up = upsample(ms, 4);
  const auto x = nn::to_tensor<double>(testing::random_image(rng, 8, 8, 4, ImageKind::Ms, 0.2, 0.8));
  const auto pan_t = nn::to_tensor<double>(pan), up_t = nn::to_tensor<double>(ms_up);
  using G = nn::Graph<double>;
  const auto w = testing::random_tensor(rng, 4, 8, 8);
  CHECK(testing::input_grad_error([&](G& g, nn::Var v) { return g.sum(g.mul(nn_loss::high_pass(g, v), g.constant(w))); },
                                  x) < 1e-6);
  CHECK(testing::input_grad_error([&](G& g, nn::Var v) { return nn_loss::ssim(g, v, g.constant(up_t)); }, x, 40) < 1e-5);
  CHECK(testing::input_grad_error([&](G& g, nn::Var v) { return nn_loss::loss_spatial(g, g.constant(pan_t), v); }, x, 40) <
        1e-5);
  CHECK(testing::input_grad_error([&](G& g, nn::Var v) { return nn_loss::loss_spectral(g, g.constant(up_t), v, 4); }, x,
                                  40) < 1e-5);
  CHECK(testing::input_grad_error([&](G& g, nn::Var v) { return nn_loss::loss_qnr(g, ms, pan, v, 4, 32); }, x, 40) < 1e-5);
  CHECK(testing::input_grad_error(
            [&](G& g, nn::Var v) { return nn_loss::loss_full(g, ms, pan, ms_up, v, 4, 0.5, 32).total; }, x, 40) < 1e-5);
}

TEST_CASE("float graph losses agree with double") {
  const auto scene = make_synthetic_scene(41, 32, 32, 4, 4);
  const auto ms_up = upsample(scene.ms, 4);
  nn::Graph<float> g(false);
  const auto r = nn_loss::loss_full(g, scene.ms, scene.pan, ms_up, g.constant(nn::to_tensor<float>(ms_up)), 4, 0.01, 32);
  const auto ref = loss_full(scene.ms, scene.pan, ms_up, 4, 0.01, 32);
  CHECK(g.value(r.total).data[0] == doctest::Approx(ref.total).epsilon(1e-4));
}
