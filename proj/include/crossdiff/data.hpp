#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crossdiff/image.hpp"

namespace crossdiff {

// Raster file: 36-byte little-endian header followed by float32 samples in
// row-major, band-interleaved-by-pixel order.
//   0  char[8] "CDRASTER"
//   8  u32 version (1)
//   12 u32 width, 16 u32 height, 20 u32 bands
//   24 u32 element type (1 = float32)
//   28 f32 dynamic range (1.0)
//   32 u32 image kind (ImageKind ordinal)
inline constexpr char kRasterMagic[8] = {'C', 'D', 'R', 'A', 'S', 'T', 'E', 'R'};
inline constexpr std::uint32_t kRasterVersion = 1;
inline constexpr std::size_t kRasterHeaderSize = 36;

/// Values are stored as float32; images holding float-representable values
/// round-trip bit-exactly.
void write_raster(const MultibandImage& img, const std::string& path);
MultibandImage read_raster(const std::string& path);

/// 8-bit PNG preview: bands (3, 2, 1) as RGB when there are at least three
/// bands, else band 1 as grayscale, stretched between the 2nd and 98th
/// percentiles of the displayed values.
void export_png(const MultibandImage& img, const std::string& path);

struct SyntheticScene {
  MultibandImage hrms;
  MultibandImage pan;
  MultibandImage ms;
  int ratio = 4;
  std::vector<double> spectral_weights;

  ImagePair pair() const { return {pan, ms, ratio}; }
};

/// Seeded scene of smooth material mixtures plus rectangles, ellipses and
/// stripes. pan is the spectral-weighted band sum of hrms; ms its downsample.
/// height and width must be divisible by ratio * multiple.
SyntheticScene make_synthetic_scene(std::uint64_t seed, int height, int width, int bands, int ratio,
                                    int multiple = 1);

struct WaldPair {
  ImagePair reduced;
  MultibandImage reference;
};

/// Degrades PAN and MS by the pair's ratio; the original MS is the reference.
WaldPair wald_degrade(const ImagePair& pair);

/// Aligned PAN/MS crops on a stride grid; partial border tiles are dropped.
std::vector<ImagePair> tile(const ImagePair& pair, int pan_tile, int stride);

/// Top-left crop of an image.
MultibandImage crop(const MultibandImage& img, int y0, int x0, int height, int width);

struct DatasetItem {
  std::string index;
  ImagePair pair;
  std::optional<MultibandImage> reference;
};

/// Writes <root>/<split>/<index>_pan.raster, _ms.raster and, if present, _ref.raster.
void write_dataset_item(const std::string& root, const std::string& split, const DatasetItem& item);

/// Reads every <index>_pan.raster of a split (sorted by index) with its MS
/// and optional reference. The ratio is inferred from the dims.
std::vector<DatasetItem> read_dataset(const std::string& root, const std::string& split);

}  // namespace crossdiff
