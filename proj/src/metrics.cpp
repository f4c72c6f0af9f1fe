#include "crossdiff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "crossdiff/errors.hpp"

namespace crossdiff {

namespace {

void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

// Q index of one window given first and second moments (population form;
// the N vs N-1 normalization cancels in the ratio).
double q_from_moments(double mx, double my, double vx, double vy, double cxy) {
  const double den = (vx + vy) * (mx * mx + my * my);
  if (den == 0.0) return 0.0;
  return 4.0 * cxy * (mx * my) / den;
}

std::vector<double> conj(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  for (std::size_t i = 1; i < out.size(); ++i) out[i] = -out[i];
  return out;
}

MultibandImage laplacian(const MultibandImage& img) {
  MultibandImage out(img.height(), img.width(), img.bands(), ImageKind::NoiseState);
  const int h = img.height(), w = img.width();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int b = 0; b < img.bands(); ++b) {
        out.at(y, x, b) = img.at(reflect_index(y - 1, h), x, b) + img.at(reflect_index(y + 1, h), x, b) +
                          img.at(y, reflect_index(x - 1, w), b) + img.at(y, reflect_index(x + 1, w), b) -
                          4.0 * img.at(y, x, b);
      }
  return out;
}

double pearson(const MultibandImage& a, int ba, const MultibandImage& b, int bb) {
  const double n = static_cast<double>(a.pixels());
  double ma = 0, mb = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      ma += a.at(y, x, ba);
      mb += b.at(y, x, bb);
    }
  ma /= n;
  mb /= n;
  double va = 0, vb = 0, cab = 0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      const double da = a.at(y, x, ba) - ma, db = b.at(y, x, bb) - mb;
      va += da * da;
      vb += db * db;
      cab += da * db;
    }
  if (va == 0.0 || vb == 0.0) throw DegenerateInputError("SCC undefined for flat detail images");
  return cab / std::sqrt(va * vb);
}

}  // namespace

std::string_view to_string(EvalMode mode) {
  return mode == EvalMode::FullRes ? "FULL_RES" : "REDUCED_RES";
}

EvalMode eval_mode_from_string(std::string_view s) {
  if (s == "FULL_RES") return EvalMode::FullRes;
  if (s == "REDUCED_RES") return EvalMode::ReducedRes;
  throw std::invalid_argument("unknown evaluation mode: " + std::string(s));
}

int effective_block(int block, int height, int width) {
  require(block >= 1, "block size must be positive");
  return std::min({block, height, width});
}

double uiqi(const MultibandImage& a, const MultibandImage& b, int block) {
  require(a.same_shape(b), "uiqi: shape mismatch");
  require(a.bands() == 1, "uiqi: single-band images expected");
  require(block >= 1 && a.height() >= block && a.width() >= block, "uiqi: image smaller than block");
  const int by = a.height() / block, bx = a.width() / block;
  const double n = static_cast<double>(block) * block;
  double total = 0.0;
  for (int i = 0; i < by; ++i)
    for (int j = 0; j < bx; ++j) {
      double sa = 0, sb = 0;
      for (int y = i * block; y < (i + 1) * block; ++y)
        for (int x = j * block; x < (j + 1) * block; ++x) {
          sa += a.at(y, x, 0);
          sb += b.at(y, x, 0);
        }
      const double mx = sa / n, my = sb / n;
      double vx = 0, vy = 0, cxy = 0;
      for (int y = i * block; y < (i + 1) * block; ++y)
        for (int x = j * block; x < (j + 1) * block; ++x) {
          const double dx = a.at(y, x, 0) - mx, dy = b.at(y, x, 0) - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      total += q_from_moments(mx, my, vx / n, vy / n, cxy / n);
    }
  return total / (static_cast<double>(by) * bx);
}

std::vector<double> cayley_dickson_mul(std::span<const double> x, std::span<const double> y) {
  require(x.size() == y.size() && !x.empty(), "hypercomplex operands must match");
  const std::size_t n = x.size();
  if (n == 1) return {x[0] * y[0]};
  require(n % 2 == 0, "hypercomplex dimension must be a power of two");
  const std::size_t h = n / 2;
  const auto a = x.subspan(0, h), b = x.subspan(h), c = y.subspan(0, h), d = y.subspan(h);
  const auto dc = conj(d), cc = conj(c);
  const auto ac = cayley_dickson_mul(a, c);
  const auto db = cayley_dickson_mul(dc, b);
  const auto da = cayley_dickson_mul(d, a);
  const auto bc = cayley_dickson_mul(b, cc);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < h; ++i) {
    out[i] = ac[i] - db[i];
    out[h + i] = da[i] + bc[i];
  }
  return out;
}

double q2n(const MultibandImage& a, const MultibandImage& b, int block) {
  require(a.same_shape(b), "q2n: shape mismatch");
  const int nb = a.bands();
  require(nb == 1 || nb == 2 || nb == 4 || nb == 8, "q2n: band count must be 1, 2, 4 or 8");
  if (nb == 1) return uiqi(a, b, block);
  require(block >= 1 && a.height() >= block && a.width() >= block, "q2n: image smaller than block");
  const int by = a.height() / block, bx = a.width() / block;
  const double n = static_cast<double>(block) * block;
  double total = 0.0;
  std::vector<double> za(nb), zb(nb);
  for (int i = 0; i < by; ++i)
    for (int j = 0; j < bx; ++j) {
      std::vector<double> ma(nb, 0.0), mb(nb, 0.0), mprod(nb, 0.0);
      double sq_a = 0.0, sq_b = 0.0;
      for (int y = i * block; y < (i + 1) * block; ++y)
        for (int x = j * block; x < (j + 1) * block; ++x) {
          for (int c = 0; c < nb; ++c) {
            za[c] = a.at(y, x, c);
            zb[c] = b.at(y, x, c);
            ma[c] += za[c];
            mb[c] += zb[c];
          }
          const auto p = cayley_dickson_mul(za, conj(zb));
          for (int c = 0; c < nb; ++c) mprod[c] += p[c];
          sq_a += cayley_dickson_mul(za, conj(za))[0];
          sq_b += cayley_dickson_mul(zb, conj(zb))[0];
        }
      for (int c = 0; c < nb; ++c) {
        ma[c] /= n;
        mb[c] /= n;
        mprod[c] /= n;
      }
      // Squared moduli go through the same product as the covariance, so
      // identical inputs give bitwise-equal variance and covariance.
      const double mod2_a = cayley_dickson_mul(ma, conj(ma))[0];
      const double mod2_b = cayley_dickson_mul(mb, conj(mb))[0];
      const auto pm = cayley_dickson_mul(ma, conj(mb));
      double cov2 = 0.0;
      for (int c = 0; c < nb; ++c) cov2 += (mprod[c] - pm[c]) * (mprod[c] - pm[c]);
      const double var_a = sq_a / n - mod2_a;
      const double var_b = sq_b / n - mod2_b;
      const double den = (var_a + var_b) * (mod2_a + mod2_b);
      if (den != 0.0) total += 4.0 * std::sqrt(cov2) * std::sqrt(mod2_a * mod2_b) / den;
    }
  return total / (static_cast<double>(by) * bx);
}

double sam(const MultibandImage& a, const MultibandImage& b) {
  require(a.same_shape(b), "sam: shape mismatch");
  require(a.bands() >= 2, "sam: needs at least two bands");
  double total = 0.0;
  for (int y = 0; y < a.height(); ++y)
    for (int x = 0; x < a.width(); ++x) {
      double dot = 0, na = 0, nb = 0;
      for (int c = 0; c < a.bands(); ++c) {
        dot += a.at(y, x, c) * b.at(y, x, c);
        na += a.at(y, x, c) * a.at(y, x, c);
        nb += b.at(y, x, c) * b.at(y, x, c);
      }
      if (na == 0.0 || nb == 0.0) continue;
      const double cosine = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
      total += std::acos(cosine);
    }
  return total / static_cast<double>(a.pixels()) * 180.0 / std::numbers::pi;
}

double ergas(const MultibandImage& fused, const MultibandImage& reference, int ratio) {
  require(fused.same_shape(reference), "ergas: shape mismatch");
  require(ratio >= 1, "ergas: ratio must be positive");
  const double n = static_cast<double>(fused.pixels());
  double acc = 0.0;
  for (int c = 0; c < fused.bands(); ++c) {
    double se = 0.0, mu = 0.0;
    for (int y = 0; y < fused.height(); ++y)
      for (int x = 0; x < fused.width(); ++x) {
        const double d = fused.at(y, x, c) - reference.at(y, x, c);
        se += d * d;
        mu += reference.at(y, x, c);
      }
    mu /= n;
    if (mu == 0.0) throw DegenerateInputError("ERGAS undefined for a zero-mean reference band");
    acc += (se / n) / (mu * mu);
  }
  return 100.0 / ratio * std::sqrt(acc / fused.bands());
}

double scc(const MultibandImage& fused, const MultibandImage& other) {
  require(fused.same_spatial(other), "scc: spatial dims must match");
  require(other.bands() == 1 || other.bands() == fused.bands(), "scc: band count mismatch");
  const auto lf = laplacian(fused);
  const auto lo = laplacian(other);
  double total = 0.0;
  for (int c = 0; c < fused.bands(); ++c) total += pearson(lf, c, lo, other.bands() == 1 ? 0 : c);
  return total / fused.bands();
}

double d_lambda(const MultibandImage& fms, const MultibandImage& ms, int block) {
  require(fms.bands() == ms.bands(), "d_lambda: band count mismatch");
  require(fms.bands() >= 2, "d_lambda: needs at least two bands");
  const int bf = effective_block(block, fms.height(), fms.width());
  const int bm = effective_block(block, ms.height(), ms.width());
  const int nb = fms.bands();
  std::vector<MultibandImage> fb, mb;
  for (int c = 0; c < nb; ++c) {
    fb.push_back(fms.band(c));
    mb.push_back(ms.band(c));
  }
  double total = 0.0;
  for (int i = 0; i < nb; ++i)
    for (int j = i + 1; j < nb; ++j) {
      total += 2.0 * std::abs(uiqi(fb[i], fb[j], bf) - uiqi(mb[i], mb[j], bm));
    }
  return total / (static_cast<double>(nb) * (nb - 1));
}

double d_s(const MultibandImage& fms, const MultibandImage& ms, const MultibandImage& pan, int ratio,
           int block) {
  require(fms.bands() == ms.bands(), "d_s: band count mismatch");
  require(pan.bands() == 1 && pan.same_spatial(fms), "d_s: PAN must be one band at fused dims");
  require(fms.height() == ratio * ms.height() && fms.width() == ratio * ms.width(),
          "d_s: fused dims must be ratio x MS dims");
  const auto pan_low = downsample(pan, ratio);
  const int bf = effective_block(block, fms.height(), fms.width());
  const int bm = effective_block(block, ms.height(), ms.width());
  double total = 0.0;
  for (int c = 0; c < fms.bands(); ++c) {
    total += std::abs(uiqi(fms.band(c), pan, bf) - uiqi(ms.band(c), pan_low, bm));
  }
  return total / fms.bands();
}

double qnr(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms, int ratio,
           int block) {
  return (1.0 - d_lambda(fms, ms, block)) * (1.0 - d_s(fms, ms, pan, ratio, block));
}

double d_lambda_khan(const MultibandImage& fms, const MultibandImage& ms, int ratio, int block) {
  const auto low = downsample(fms, ratio);
  require(low.same_shape(ms), "d_lambda_khan: degraded fused image must match MS");
  return 1.0 - q2n(low, ms, effective_block(block, ms.height(), ms.width()));
}

double hqnr(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms, int ratio,
            int block) {
  return (1.0 - d_lambda_khan(fms, ms, ratio, block)) * (1.0 - d_s(fms, ms, pan, ratio, block));
}

MetricStats aggregate(const std::vector<double>& values) {
  require(!values.empty(), "cannot aggregate an empty metric list");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {mean, std::sqrt(var)};
}

QualityReport evaluate(const std::vector<EvalItem>& items, EvalMode mode, int block) {
  require(!items.empty(), "evaluate: no tiles");
  std::map<std::string, std::vector<double>> per_tile;
  for (const auto& item : items) {
    const auto& fms = item.fms;
    if (mode == EvalMode::FullRes) {
      const int r = item.pair.ratio;
      const double dl = d_lambda(fms, item.pair.ms, block);
      const double ds = d_s(fms, item.pair.ms, item.pair.pan, r, block);
      per_tile["D_lambda"].push_back(dl);
      per_tile["D_s"].push_back(ds);
      per_tile["QNR"].push_back((1.0 - dl) * (1.0 - ds));
      per_tile["HQNR"].push_back((1.0 - d_lambda_khan(fms, item.pair.ms, r, block)) * (1.0 - ds));
    } else {
      if (!item.reference) throw std::invalid_argument("REDUCED_RES evaluation needs references");
      const auto& ref = *item.reference;
      per_tile["Q2n"].push_back(q2n(fms, ref, effective_block(block, ref.height(), ref.width())));
      per_tile["SAM"].push_back(sam(fms, ref));
      per_tile["ERGAS"].push_back(ergas(fms, ref, item.pair.ratio));
      per_tile["SCC"].push_back(scc(fms, ref));
    }
  }
  QualityReport report;
  report.mode = mode;
  report.tiles = static_cast<int>(items.size());
  for (const auto& [name, values] : per_tile) report.values[name] = aggregate(values);
  return report;
}

std::string QualityReport::to_text() const {
  std::string out;
  char line[128];
  for (const auto& [name, s] : values) {
    std::snprintf(line, sizeof line, "%s %.17g %.17g\n", name.c_str(), s.mean, s.std);
    out += line;
  }
  return out;
}

std::string QualityReport::to_json() const {
  nlohmann::ordered_json j;
  j["mode"] = std::string(to_string(mode));
  j["tiles"] = tiles;
  for (const auto& [name, s] : values) j["metrics"][name] = {{"mean", s.mean}, {"std", s.std}};
  return j.dump(2) + "\n";
}

QualityReport QualityReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  QualityReport r;
  r.mode = eval_mode_from_string(j.at("mode").get<std::string>());
  r.tiles = j.at("tiles").get<int>();
  for (const auto& [name, v] : j.at("metrics").items()) {
    r.values[name] = {v.at("mean").get<double>(), v.at("std").get<double>()};
  }
  return r;
}

}  // namespace crossdiff
