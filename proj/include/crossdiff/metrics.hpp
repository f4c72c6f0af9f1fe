#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "crossdiff/image.hpp"

namespace crossdiff {

enum class EvalMode { FullRes, ReducedRes };

std::string_view to_string(EvalMode mode);
EvalMode eval_mode_from_string(std::string_view s);

/// Block size actually used for a block x block window scan: the requested
/// size, shrunk to the smaller image dimension for images smaller than it.
int effective_block(int block, int height, int width);

/// Universal image quality index of two single-band images, averaged over
/// non-overlapping block x block windows (partial windows are dropped).
/// Windows whose denominator vanishes count as 0.
double uiqi(const MultibandImage& a, const MultibandImage& b, int block = 32);

/// Hypercomplex Q2n (Q4 / Q8) on non-overlapping blocks. Bands map to the
/// components of a Cayley-Dickson number per pixel. One band reduces to uiqi.
double q2n(const MultibandImage& a, const MultibandImage& b, int block = 32);

/// Cayley-Dickson product of two hypercomplex numbers with 2^n components,
/// using (a, b)(c, d) = (ac - conj(d) b, d a + b conj(c)).
std::vector<double> cayley_dickson_mul(std::span<const double> x, std::span<const double> y);

/// Mean spectral angle in degrees; zero-vector pixels contribute 0.
double sam(const MultibandImage& a, const MultibandImage& b);

/// 100 / ratio * sqrt(mean_b (RMSE_b / mean(reference_b))^2).
double ergas(const MultibandImage& fused, const MultibandImage& reference, int ratio);

/// Mean over fused bands of the Pearson correlation of Laplacian-filtered
/// detail. `other` is either one band (compared against every fused band) or
/// has as many bands as `fused` (compared band by band).
double scc(const MultibandImage& fused, const MultibandImage& other);

/// Mean |Q(fms_i, fms_j) - Q(ms_i, ms_j)| over ordered band pairs i != j.
double d_lambda(const MultibandImage& fms, const MultibandImage& ms, int block = 32);

/// Mean |Q(fms_i, pan) - Q(ms_i, downsample(pan, ratio))| over bands.
double d_s(const MultibandImage& fms, const MultibandImage& ms, const MultibandImage& pan, int ratio,
           int block = 32);

double qnr(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms, int ratio,
           int block = 32);

/// 1 - Q2n(downsample(fms, ratio), ms).
double d_lambda_khan(const MultibandImage& fms, const MultibandImage& ms, int ratio, int block = 32);

double hqnr(const MultibandImage& ms, const MultibandImage& pan, const MultibandImage& fms, int ratio,
            int block = 32);

struct MetricStats {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over tiles
};

struct QualityReport {
  EvalMode mode = EvalMode::FullRes;
  std::map<std::string, MetricStats> values;
  int tiles = 0;

  /// One "name mean std" line per metric.
  std::string to_text() const;
  std::string to_json() const;
  static QualityReport from_json(const std::string& text);
};

struct EvalItem {
  ImagePair pair;
  MultibandImage fms;
  std::optional<MultibandImage> reference;
};

/// Per-tile metrics aggregated to mean and standard deviation. FULL_RES gives
/// {D_lambda, D_s, HQNR, QNR}; REDUCED_RES gives {Q2n, SAM, ERGAS, SCC} and
/// needs a reference for every item.
QualityReport evaluate(const std::vector<EvalItem>& items, EvalMode mode, int block = 32);

/// Aggregation used by evaluate(), exposed for reuse.
MetricStats aggregate(const std::vector<double>& values);

}  // namespace crossdiff
