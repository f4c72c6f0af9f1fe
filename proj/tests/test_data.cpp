#include <doctest.h>

#include <png.h>

#include <cstring>

#include "crossdiff/data.hpp"
#include "crossdiff/errors.hpp"
#include "crossdiff/metrics.hpp"
#include "support.hpp"

using namespace crossdiff;

namespace {

template <typename U>
U le(const std::string& bytes, std::size_t pos) {
  U v;
  std::memcpy(&v, bytes.data() + pos, sizeof v);
  return v;
}

MultibandImage float_image(std::mt19937_64& r, int h, int w, int b, ImageKind kind) {
  auto img = testing::random_image(r, h, w, b, kind);
  for (double& v : img.data()) v = static_cast<float>(v);
  return img;
}

double laplacian_energy(const MultibandImage& img) {
  double e = 0.0;
  for (int b = 0; b < img.bands(); ++b)
    for (int y = 1; y + 1 < img.height(); ++y)
      for (int x = 1; x + 1 < img.width(); ++x) {
        const double l = img.at(y - 1, x, b) + img.at(y + 1, x, b) + img.at(y, x - 1, b) + img.at(y, x + 1, b) -
                         4 * img.at(y, x, b);
        e += l * l;
      }
  return e;
}

}  // namespace

TEST_CASE("rasters round-trip bit-exactly") {
  std::mt19937_64 r(1);
  const auto dir = testing::temp_dir("raster");
  for (auto kind : {ImageKind::Pan, ImageKind::Ms, ImageKind::Fused, ImageKind::NoiseState}) {
    const auto img = float_image(r, 6, 10, kind == ImageKind::Pan ? 1 : 3, kind);
    const auto path = (dir / "a.raster").string();
    write_raster(img, path);
    const auto back = read_raster(path);
    CHECK(back.kind() == kind);
    CHECK(back.same_shape(img));
    CHECK(testing::max_abs_diff(back, img) == 0.0);
  }
}

TEST_CASE("raster header bytes") {
  std::mt19937_64 r(2);
  const auto img = float_image(r, 8, 4, 4, ImageKind::Ms);
  const auto dir = testing::temp_dir("header");
  write_raster(img, (dir / "h.raster").string());
  const auto bytes = testing::read_bytes(dir / "h.raster");
  REQUIRE(bytes.size() == 36 + 8 * 4 * 4 * 4);
  CHECK(bytes.substr(0, 8) == "CDRASTER");
  CHECK(le<std::uint32_t>(bytes, 8) == 1);
  CHECK(le<std::uint32_t>(bytes, 12) == 4);
  CHECK(le<std::uint32_t>(bytes, 16) == 8);
  CHECK(le<std::uint32_t>(bytes, 20) == 4);
  CHECK(le<std::uint32_t>(bytes, 24) == 1);
  CHECK(le<float>(bytes, 28) == 1.0f);
  CHECK(le<std::uint32_t>(bytes, 32) == 1);
  // Sample (y=5, x=2, b=3) in band-interleaved-by-pixel order.
  CHECK(le<float>(bytes, 36 + 4 * ((5 * 4 + 2) * 4 + 3)) == static_cast<float>(img.at(5, 2, 3)));
}

TEST_CASE("damaged rasters are rejected") {
  std::mt19937_64 r(3);
  const auto dir = testing::temp_dir("badraster");
  write_raster(float_image(r, 4, 4, 2, ImageKind::Ms), (dir / "ok.raster").string());
  const auto good = testing::read_bytes(dir / "ok.raster");
  const auto path = dir / "x.raster";
  auto bad = good;
  bad[0] = 'X';
  testing::write_bytes(path, bad);
  CHECK_THROWS_AS(read_raster(path.string()), FormatError);
  bad = good;
  bad[8] = 2;
  testing::write_bytes(path, bad);
  CHECK_THROWS_AS(read_raster(path.string()), FormatError);
  testing::write_bytes(path, good.substr(0, good.size() - 3));
  CHECK_THROWS_AS(read_raster(path.string()), CorruptionError);
  testing::write_bytes(path, good.substr(0, 20));
  CHECK_THROWS_AS(read_raster(path.string()), CorruptionError);
  testing::write_bytes(path, good + "zz");
  CHECK_THROWS_AS(read_raster(path.string()), CorruptionError);
  CHECK_THROWS(read_raster((dir / "missing.raster").string()));
}

TEST_CASE("synthetic scenes are deterministic and satisfy their invariants") {
  const auto a = make_synthetic_scene(7, 64, 64, 4, 4, 4);
  const auto b = make_synthetic_scene(7, 64, 64, 4, 4, 4);
  CHECK(a.hrms.data().size() == b.hrms.data().size());
  CHECK(std::equal(a.hrms.data().begin(), a.hrms.data().end(), b.hrms.data().begin()));
  CHECK(std::equal(a.pan.data().begin(), a.pan.data().end(), b.pan.data().begin()));
  CHECK(testing::max_abs_diff(make_synthetic_scene(8, 64, 64, 4, 4).hrms, a.hrms) > 0.1);

  CHECK(a.ms.height() == 16);
  CHECK(a.ms.kind() == ImageKind::Ms);
  CHECK(a.pan.kind() == ImageKind::Pan);
  double wsum = 0.0;
  for (double w : a.spectral_weights) {
    CHECK(w > 0.0);
    wsum += w;
  }
  CHECK(wsum == doctest::Approx(1.0).epsilon(1e-12));
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      double s = 0.0;
      for (int c = 0; c < 4; ++c) s += a.spectral_weights[c] * a.hrms.at(y, x, c);
      CHECK(a.pan.at(y, x, 0) == s);
    }
  CHECK(testing::max_abs_diff(a.ms, downsample(a.hrms, 4)) == 0.0);
  CHECK_NOTHROW(a.pair().validate());
  CHECK_THROWS_AS(make_synthetic_scene(1, 60, 64, 4, 4, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_synthetic_scene(1, 66, 64, 4, 4), std::invalid_argument);
}

TEST_CASE("synthetic scenes are texture-rich") {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto s = make_synthetic_scene(seed, 128, 128, 4, 4);
    std::array<int, 20> bins{};
    for (double v : s.hrms.data()) ++bins[std::min(19, static_cast<int>(v * 20))];
    const auto occupied = std::count_if(bins.begin(), bins.end(), [](int n) { return n > 0; });
    CHECK(occupied >= 10);
    const auto blurred = convolve_separable(s.hrms, gaussian_kernel(2.0));
    CHECK(laplacian_energy(s.hrms) > laplacian_energy(blurred));
  }
}

TEST_CASE("synthetic invariants survive raster I/O") {
  const auto s = make_synthetic_scene(9, 32, 32, 3, 4);
  const auto dir = testing::temp_dir("synthio");
  write_raster(s.hrms, (dir / "h.raster").string());
  write_raster(s.pan, (dir / "p.raster").string());
  const auto h = read_raster((dir / "h.raster").string());
  const auto p = read_raster((dir / "p.raster").string());
  CHECK(testing::max_abs_diff(h, s.hrms) == 0.0);
  double worst = 0.0;
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      double v = 0.0;
      for (int c = 0; c < 3; ++c) v += s.spectral_weights[c] * h.at(y, x, c);
      worst = std::max(worst, std::abs(p.at(y, x, 0) - v));
    }
  CHECK(worst < 1e-7);
}

TEST_CASE("wald degradation") {
  const auto s = make_synthetic_scene(10, 128, 128, 4, 4);
  const auto w = wald_degrade(s.pair());
  CHECK(w.reference.kind() == s.ms.kind());
  CHECK(testing::max_abs_diff(w.reference, s.ms) == 0.0);
  CHECK(w.reduced.pan.height() == 32);
  CHECK(w.reduced.ms.height() == 8);
  CHECK(w.reduced.ratio == 4);
  CHECK(testing::max_abs_diff(w.reduced.pan, downsample(s.pan, 4)) == 0.0);

  ImagePair flat{MultibandImage(16, 16, 1, ImageKind::Pan, 0.3), MultibandImage(4, 4, 2, ImageKind::Ms, 0.6), 4};
  const auto flat_ms = wald_degrade(flat).reduced.ms;
  for (double v : flat_ms.data()) CHECK(v == doctest::Approx(0.6).epsilon(1e-12));
  flat = {MultibandImage(24, 24, 1, ImageKind::Pan), MultibandImage(6, 6, 2, ImageKind::Ms), 4};
  CHECK_THROWS_AS(wald_degrade(flat), std::invalid_argument);

  std::vector<EvalItem> items{{w.reduced, w.reference, w.reference}};
  const auto rep = evaluate(items, EvalMode::ReducedRes, 32);
  CHECK(rep.values.at("SAM").mean == 0.0);
  CHECK(rep.values.at("ERGAS").mean == 0.0);
  CHECK(rep.values.at("Q2n").mean == 1.0);
  CHECK(rep.values.at("SCC").mean == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tiling") {
  const auto s = make_synthetic_scene(11, 128, 128, 4, 4);
  const auto pair = s.pair();
  CHECK(tile(pair, 64, 64).size() == 4);
  const auto whole = tile(pair, 128, 128);
  REQUIRE(whole.size() == 1);
  CHECK(testing::max_abs_diff(whole[0].pan, pair.pan) == 0.0);
  CHECK(testing::max_abs_diff(whole[0].ms, pair.ms) == 0.0);

  const auto over = tile(pair, 64, 32);
  REQUIRE(over.size() == 9);
  for (int i = 0; i < 9; ++i) {
    const int y = 32 * (i / 3), x = 32 * (i % 3);
    for (int yy = 0; yy < 64; ++yy)
      for (int xx = 0; xx < 64; ++xx) CHECK(over[i].pan.at(yy, xx, 0) == pair.pan.at(y + yy, x + xx, 0));
    CHECK(over[i].ms.at(3, 5, 2) == pair.ms.at(y / 4 + 3, x / 4 + 5, 2));
  }

  // Reassembly over the covered area, with a partial border dropped.
  const ImagePair big{make_synthetic_scene(12, 256, 256, 4, 4).pan, make_synthetic_scene(12, 256, 256, 4, 4).ms, 4};
  CHECK(tile(big, 64, 64).size() == 16);
  const auto t = tile(big, 96, 96);
  REQUIRE(t.size() == 4);
  MultibandImage re(192, 192, 1, ImageKind::Pan);
  for (int i = 0; i < 4; ++i)
    for (int y = 0; y < 96; ++y)
      for (int x = 0; x < 96; ++x) re.at(96 * (i / 2) + y, 96 * (i % 2) + x, 0) = t[i].pan.at(y, x, 0);
  CHECK(testing::max_abs_diff(re, crop(big.pan, 0, 0, 192, 192)) == 0.0);

  CHECK_THROWS_AS(tile(pair, 62, 64), std::invalid_argument);
  CHECK_THROWS_AS(tile(pair, 64, 30), std::invalid_argument);
  CHECK_THROWS_AS(tile(pair, 256, 64), std::invalid_argument);
  CHECK_THROWS_AS(crop(pair.pan, 100, 0, 64, 64), std::invalid_argument);
}

TEST_CASE("dataset directories") {
  const auto dir = testing::temp_dir("dataset");
  const auto s = make_synthetic_scene(13, 32, 32, 4, 4);
  const auto w = wald_degrade(s.pair());
  write_dataset_item(dir.string(), "reduced", {"001", w.reduced, w.reference});
  write_dataset_item(dir.string(), "reduced", {"000", w.reduced, std::nullopt});
  const auto items = read_dataset(dir.string(), "reduced");
  REQUIRE(items.size() == 2);
  CHECK(items[0].index == "000");
  CHECK(!items[0].reference);
  CHECK(items[1].reference);
  CHECK(items[1].pair.ratio == 4);
  CHECK(std::filesystem::exists(dir / "reduced" / "001_ref.raster"));
  CHECK_THROWS(read_dataset(dir.string(), "full"));
}

TEST_CASE("png previews") {
  const auto dir = testing::temp_dir("png");
  const auto s = make_synthetic_scene(14, 32, 32, 4, 4);
  for (const auto& [img, format] : {std::pair<MultibandImage, unsigned>{s.hrms, PNG_FORMAT_RGB}, std::pair<MultibandImage, unsigned>{s.pan, PNG_FORMAT_GRAY}}) {
    const auto path = (dir / "p.png").string();
    export_png(img, path);
    png_image im;
    std::memset(&im, 0, sizeof im);
    im.version = PNG_IMAGE_VERSION;
    REQUIRE(png_image_begin_read_from_file(&im, path.c_str()));
    CHECK(im.width == 32);
    CHECK(im.height == 32);
    CHECK(im.format == static_cast<png_uint_32>(format));
    png_image_free(&im);
  }
  CHECK_THROWS_AS(export_png(MultibandImage(), (dir / "e.png").string()), std::invalid_argument);
}
