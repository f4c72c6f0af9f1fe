#include "crossdiff/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <stdexcept>

#include <png.h>

#include "crossdiff/errors.hpp"

namespace crossdiff {

static_assert(std::endian::native == std::endian::little, "raster I/O assumes a little-endian host");

namespace fs = std::filesystem;

namespace {

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get(const std::string& in, std::size_t pos) {
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  return v;
}

}  // namespace

void write_raster(const MultibandImage& img, const std::string& path) {
  if (img.empty()) throw std::invalid_argument("cannot write an empty raster");
  std::string out(kRasterMagic, sizeof kRasterMagic);
  put<std::uint32_t>(out, kRasterVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(img.width()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(img.height()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(img.bands()));
  put<std::uint32_t>(out, 1);
  put<float>(out, 1.0f);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(img.kind()));
  out.reserve(out.size() + img.size() * sizeof(float));
  for (double v : img.data()) put<float>(out, static_cast<float>(v));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open raster for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing raster: " + path);
}

MultibandImage read_raster(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open raster: " + path);
  const std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (in.size() < sizeof kRasterMagic) throw CorruptionError("raster truncated in header: " + path);
  if (std::memcmp(in.data(), kRasterMagic, sizeof kRasterMagic) != 0) {
    throw FormatError("not a raster file (bad magic): " + path);
  }
  if (in.size() < kRasterHeaderSize) throw CorruptionError("raster truncated in header: " + path);
  const auto version = get<std::uint32_t>(in, 8);
  if (version != kRasterVersion) throw FormatError("unsupported raster version " + std::to_string(version));
  const auto width = get<std::uint32_t>(in, 12);
  const auto height = get<std::uint32_t>(in, 16);
  const auto bands = get<std::uint32_t>(in, 20);
  if (get<std::uint32_t>(in, 24) != 1) throw FormatError("unsupported raster element type");
  const auto kind = get<std::uint32_t>(in, 32);
  if (kind > static_cast<std::uint32_t>(ImageKind::NoiseState)) throw CorruptionError("bad raster kind tag");
  if (width == 0 || height == 0 || bands == 0 || width > (1u << 20) || height > (1u << 20) || bands > 4096) {
    throw CorruptionError("bad raster dimensions");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height * bands;
  if (in.size() != kRasterHeaderSize + n * sizeof(float)) {
    throw CorruptionError("raster payload size does not match its header: " + path);
  }
  MultibandImage img(static_cast<int>(height), static_cast<int>(width), static_cast<int>(bands),
                     static_cast<ImageKind>(kind));
  auto dst = img.data();
  for (std::size_t i = 0; i < n; ++i) dst[i] = get<float>(in, kRasterHeaderSize + i * sizeof(float));
  return img;
}

void export_png(const MultibandImage& img, const std::string& path) {
  if (img.empty()) throw std::invalid_argument("cannot export an empty image");
  const bool rgb = img.bands() >= 3;
  const std::vector<int> chans = rgb ? std::vector<int>{2, 1, 0} : std::vector<int>{0};
  std::vector<double> vals;
  vals.reserve(img.pixels() * chans.size());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c : chans) vals.push_back(img.at(y, x, c));
  auto sorted = vals;
  std::sort(sorted.begin(), sorted.end());
  const auto pct = [&](double p) {
    return sorted[static_cast<std::size_t>(std::lround(p * static_cast<double>(sorted.size() - 1)))];
  };
  const double lo = pct(0.02), hi = pct(0.98);
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<png_byte> buf(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    buf[i] = static_cast<png_byte>(std::lround(std::clamp((vals[i] - lo) / span, 0.0, 1.0) * 255.0));
  }
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = rgb ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("PNG export failed: " + std::string(image.message));
  }
}

SyntheticScene make_synthetic_scene(std::uint64_t seed, int height, int width, int bands, int ratio,
                                    int multiple) {
  if (bands < 1 || ratio < 1 || multiple < 1) throw std::invalid_argument("scene parameters must be positive");
  const int unit = ratio * multiple;
  if (height < unit || width < unit || height % unit != 0 || width % unit != 0) {
    throw std::invalid_argument("scene dims must be divisible by ratio x predictor multiple");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const auto uni = [&](double a, double b) { return a + (b - a) * u01(rng); };

  // Material spectra: one dark, one bright, the rest random.
  const int materials = bands + 3;
  std::vector<std::vector<double>> spectra(materials, std::vector<double>(bands));
  for (int m = 0; m < materials; ++m)
    for (int b = 0; b < bands; ++b) {
      spectra[m][b] = m == 0 ? uni(0.02, 0.12) : m == 1 ? uni(0.8, 0.97) : uni(0.1, 0.9);
    }

  // Smooth abundance fields (softmax of sums of random plane waves).
  const int fields = 3;
  struct Wave {
    double u, v, phase, amp;
  };
  std::vector<std::vector<Wave>> waves(fields);
  std::vector<int> field_material(fields);
  for (int f = 0; f < fields; ++f) {
    field_material[f] = 2 + f % (materials - 2);
    for (int k = 0; k < 4; ++k) {
      waves[f].push_back({uni(-3.0, 3.0), uni(-3.0, 3.0), uni(0.0, 2.0 * std::numbers::pi), uni(0.3, 1.0)});
    }
  }

  MultibandImage hrms(height, width, bands, ImageKind::Ms);
  std::vector<double> logits(fields);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double zsum = 0.0;
      for (int f = 0; f < fields; ++f) {
        double v = 0.0;
        for (const auto& w : waves[f]) {
          v += w.amp * std::sin(2.0 * std::numbers::pi * (w.u * x / width + w.v * y / height) + w.phase);
        }
        logits[f] = std::exp(2.0 * v);
        zsum += logits[f];
      }
      for (int b = 0; b < bands; ++b) {
        double s = 0.0;
        for (int f = 0; f < fields; ++f) s += logits[f] / zsum * spectra[field_material[f]][b];
        hrms.at(y, x, b) = s;
      }
    }

  // Sharp-edged objects.
  std::uniform_int_distribution<int> pick_material(0, materials - 1);
  const int objects = 12 + height * width / 1024;
  const int extent = std::max(4, std::min(height, width) / 4);
  for (int o = 0; o < objects; ++o) {
    const int type = static_cast<int>(uni(0.0, 3.0));
    const auto& refl = spectra[pick_material(rng)];
    const double cy = uni(0.0, height), cx = uni(0.0, width);
    const double ry = uni(2.0, extent), rx = uni(2.0, extent);
    const double angle = uni(0.0, std::numbers::pi);
    const double thick = uni(0.6, 2.0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dy = y + 0.5 - cy, dx = x + 0.5 - cx;
        bool inside = false;
        if (type == 0) {
          inside = std::abs(dy) <= ry && std::abs(dx) <= rx;
        } else if (type == 1) {
          inside = (dy * dy) / (ry * ry) + (dx * dx) / (rx * rx) <= 1.0;
        } else {
          const double along = dx * std::cos(angle) + dy * std::sin(angle);
          const double across = -dx * std::sin(angle) + dy * std::cos(angle);
          inside = std::abs(across) <= thick && std::abs(along) <= 2.0 * rx;
        }
        if (inside)
          for (int b = 0; b < bands; ++b) hrms.at(y, x, b) = refl[b];
      }
  }

  // Fine texture, then clip and round to float32 so rasters round-trip exactly.
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double common = 0.02 * normal(rng);
      for (int b = 0; b < bands; ++b) {
        const double v = hrms.at(y, x, b) * (1.0 + common) + 0.005 * normal(rng);
        hrms.at(y, x, b) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }

  SyntheticScene scene;
  scene.ratio = ratio;
  std::exponential_distribution<double> expo(1.0);
  double wsum = 0.0;
  for (int b = 0; b < bands; ++b) {
    scene.spectral_weights.push_back(expo(rng) + 0.1);
    wsum += scene.spectral_weights.back();
  }
  for (double& w : scene.spectral_weights) w /= wsum;

  scene.pan = MultibandImage(height, width, 1, ImageKind::Pan);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double s = 0.0;
      for (int b = 0; b < bands; ++b) s += scene.spectral_weights[b] * hrms.at(y, x, b);
      scene.pan.at(y, x, 0) = s;
    }
  scene.ms = downsample(hrms, ratio);
  scene.ms.set_kind(ImageKind::Ms);
  scene.hrms = std::move(hrms);
  return scene;
}

WaldPair wald_degrade(const ImagePair& pair) {
  pair.validate();
  const int r = pair.ratio;
  if (pair.ms.height() % r != 0 || pair.ms.width() % r != 0) {
    throw std::invalid_argument("MS dims not divisible by the ratio");
  }
  WaldPair out;
  out.reduced.pan = downsample(pair.pan, r);
  out.reduced.ms = downsample(pair.ms, r);
  out.reduced.ratio = r;
  out.reference = pair.ms;
  return out;
}

MultibandImage crop(const MultibandImage& img, int y0, int x0, int height, int width) {
  if (y0 < 0 || x0 < 0 || height < 1 || width < 1 || y0 + height > img.height() || x0 + width > img.width()) {
    throw std::invalid_argument("crop window outside the image");
  }
  MultibandImage out(height, width, img.bands(), img.kind());
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int b = 0; b < img.bands(); ++b) out.at(y, x, b) = img.at(y0 + y, x0 + x, b);
  return out;
}

std::vector<ImagePair> tile(const ImagePair& pair, int pan_tile, int stride) {
  pair.validate();
  const int r = pair.ratio;
  if (pan_tile < 1 || stride < 1 || pan_tile % r != 0 || stride % r != 0) {
    throw std::invalid_argument("tile size and stride must be positive multiples of the ratio");
  }
  if (pan_tile > pair.pan.height() || pan_tile > pair.pan.width()) {
    throw std::invalid_argument("tile larger than the image");
  }
  std::vector<ImagePair> out;
  for (int y = 0; y + pan_tile <= pair.pan.height(); y += stride)
    for (int x = 0; x + pan_tile <= pair.pan.width(); x += stride) {
      out.push_back({crop(pair.pan, y, x, pan_tile, pan_tile),
                     crop(pair.ms, y / r, x / r, pan_tile / r, pan_tile / r), r});
    }
  return out;
}

void write_dataset_item(const std::string& root, const std::string& split, const DatasetItem& item) {
  const fs::path dir = fs::path(root) / split;
  fs::create_directories(dir);
  write_raster(item.pair.pan, (dir / (item.index + "_pan.raster")).string());
  write_raster(item.pair.ms, (dir / (item.index + "_ms.raster")).string());
  if (item.reference) write_raster(*item.reference, (dir / (item.index + "_ref.raster")).string());
}

std::vector<DatasetItem> read_dataset(const std::string& root, const std::string& split) {
  const fs::path dir = fs::path(root) / split;
  if (!fs::is_directory(dir)) throw std::runtime_error("dataset split not found: " + dir.string());
  const std::string suffix = "_pan.raster";
  std::vector<std::string> indices;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.size() > suffix.size() && name.ends_with(suffix)) {
      indices.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(indices.begin(), indices.end());
  std::vector<DatasetItem> out;
  for (const auto& idx : indices) {
    DatasetItem item;
    item.index = idx;
    item.pair.pan = read_raster((dir / (idx + "_pan.raster")).string());
    item.pair.ms = read_raster((dir / (idx + "_ms.raster")).string());
    if (item.pair.ms.height() == 0 || item.pair.pan.height() % item.pair.ms.height() != 0) {
      throw std::runtime_error("PAN/MS dims of item " + idx + " are not an integer ratio apart");
    }
    item.pair.ratio = item.pair.pan.height() / item.pair.ms.height();
    item.pair.validate();
    const auto ref = dir / (idx + "_ref.raster");
    if (fs::exists(ref)) item.reference = read_raster(ref.string());
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace crossdiff
