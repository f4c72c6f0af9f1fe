#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include <nlohmann/json.hpp>

#include "crossdiff/checkpoint.hpp"
#include "crossdiff/data.hpp"
#include "crossdiff/errors.hpp"
#include "crossdiff/pretrain.hpp"
#include "support.hpp"

using namespace crossdiff;

namespace {

std::vector<ImagePair> scenes(int n, int size, int bands, std::uint64_t seed = 50) {
  std::vector<ImagePair> out;
  for (int i = 0; i < n; ++i) out.push_back(make_synthetic_scene(seed + i, size, size, bands, 4).pair());
  return out;
}

bool same_values(const nn::ParameterSet<float>& a, const nn::ParameterSet<float>& b) {
  if (a.names() != b.names()) return false;
  for (const auto& n : a.names())
    if (a.at(n).value != b.at(n).value || a.at(n).shape != b.at(n).shape) return false;
  return true;
}

PretrainConfig small_cfg(int epochs, int batch = 2) {
  PretrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.learning_rate = 1e-3;
  c.horizon = 100;
  c.seed = 5;
  return c;
}

}  // namespace

TEST_CASE("pretrain config validation") {
  PretrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.epochs = 0;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("training samples follow the forward process and role wiring") {
  const auto s = make_cosine_schedule(100);
  std::mt19937_64 r(1);
  const auto pan = testing::random_image(r, 8, 8, 1, ImageKind::Pan);
  const auto up = testing::random_image(r, 8, 8, 3, ImageKind::MsUp);
  for (Role role : {Role::P2M, Role::M2P}) {
    for (Objective obj : {Objective::Noise, Objective::Clean}) {
      Rng rng(9), copy(9);
      const auto smp = draw_training_sample(pan, up, role, s, obj, rng);
      const int t = std::uniform_int_distribution<int>(1, 100)(copy);
      const auto& x0 = role == Role::P2M ? up : pan;
      const auto eps = standard_normal(8, 8, x0.bands(), copy);
      CHECK(smp.t == t);
      CHECK(smp.cond.bands() == (role == Role::P2M ? 1 : 3));
      CHECK(testing::max_abs_diff(smp.x_t, q_sample(x0, t, eps, s)) == 0.0);
      CHECK(testing::max_abs_diff(smp.target, obj == Objective::Noise ? eps : x0) == 0.0);
    }
  }
}

TEST_CASE("regression loss") {
  MultibandImage a(1, 2, 1, ImageKind::NoiseState), b(1, 2, 1, ImageKind::NoiseState);
  testing::fill(a, {1.0, 2.0});
  testing::fill(b, {0.0, 0.0});
  CHECK(regression_loss(a, b) == 2.5);
  CHECK(regression_loss(a, a) == 0.0);
}

TEST_CASE("a fresh predictor has unit expected noise loss") {
  PredictorConfig arch = testing::tiny_config(4, 1);
  Rng rng(2);
  auto p = NoisePredictor::build(arch, Role::P2M, rng);
  const auto data = scenes(4, 32, 4);
  const auto s = make_cosine_schedule(100);
  double total = 0;
  for (int rep = 0; rep < 4; ++rep) total += pretrain_step(p, data, s, Objective::Noise, rng);
  // 4 * 4 * 32 * 32 * 4 standard normal squares.
  CHECK(std::abs(total / 4 - 1.0) < 0.03);
}

TEST_CASE("pretrain step gradient matches finite differences") {
  const auto data = scenes(2, 8, 2);
  auto arch = testing::tiny_config(1, 2);
  Rng init(3);
  auto p = BasicNoisePredictor<double>::build(arch, Role::M2P, init);
  testing::randomize(p.parameters(), 4, 0.2);
  const auto s = make_cosine_schedule(50);
  const auto run = [&](bool backward) {
    Rng rng(77);
    if (backward) return pretrain_step(p, data, s, Objective::Noise, rng);
    const auto saved = p.parameters();
    const double v = pretrain_step(p, data, s, Objective::Noise, rng);
    for (const auto& n : saved.names()) p.parameters().at(n).grad = saved.at(n).grad;
    return v;
  };
  CHECK(testing::param_grad_error(p.parameters(), run, 60) < 1e-3);
  CHECK_THROWS_AS(
      [&] {
        Rng rng(1);
        auto wrong = BasicNoisePredictor<double>::build(testing::tiny_config(2, 1), Role::M2P, init);
        pretrain_step(wrong, data, s, Objective::Noise, rng);
      }(),
      std::invalid_argument);
}

TEST_CASE("a single pair is overfit") {
  const auto data = scenes(1, 16, 4);
  auto cfg = small_cfg(200, 1);
  cfg.horizon = 20;
  Pretrainer trainer(data, cfg, PredictorConfig{});
  std::vector<double> p2m, m2p;
  for (int e = 0; e < 200; ++e) {
    const auto log = trainer.run_epoch();
    p2m.push_back(log.p2m_loss);
    m2p.push_back(log.m2p_loss);
  }
  const auto avg = [](const std::vector<double>& v, int from, int to) {
    return std::accumulate(v.begin() + from, v.begin() + to, 0.0) / (to - from);
  };
  MESSAGE("p2m " << avg(p2m, 0, 10) << " -> " << avg(p2m, 180, 200) << ", m2p " << avg(m2p, 0, 10) << " -> "
                 << avg(m2p, 180, 200));
  CHECK(avg(p2m, 180, 200) < 0.5 * avg(p2m, 0, 10));
  CHECK(avg(m2p, 180, 200) < 0.5 * avg(m2p, 0, 10));
  CHECK(trainer.epoch() == 200);
  CHECK(trainer.log().size() == 200);
}

TEST_CASE("pretraining is deterministic for a seed") {
  const auto data = scenes(3, 16, 4);
  const auto arch = testing::tiny_config(4, 1);
  const auto a = pretrain(data, small_cfg(2), arch);
  const auto b = pretrain(data, small_cfg(2), arch);
  CHECK(same_values(a.p2m.parameters(), b.p2m.parameters()));
  CHECK(same_values(a.m2p.parameters(), b.m2p.parameters()));
  CHECK(a.log[1].to_string() == b.log[1].to_string());
  auto other = small_cfg(2);
  other.seed = 6;
  const auto c = pretrain(data, other, arch);
  CHECK(!same_values(a.p2m.parameters(), c.p2m.parameters()));
}

TEST_CASE("zero epochs return the seeded initialization") {
  const auto data = scenes(2, 16, 4);
  const auto arch = testing::tiny_config(4, 1);
  const auto r = pretrain(data, small_cfg(0), arch);
  const auto f = fresh_predictors(arch, 4, small_cfg(0));
  CHECK(r.log.empty());
  CHECK(same_values(r.p2m.parameters(), f.p2m.parameters()));
  CHECK(same_values(r.m2p.parameters(), f.m2p.parameters()));
  CHECK(r.m2p.config().in_bands == 1);
  CHECK(r.m2p.config().cond_bands == 4);
}

TEST_CASE("the trainer matches a hand-written loop for each branch") {
  const auto data = scenes(3, 16, 4);
  const auto arch = testing::tiny_config(4, 1);
  const auto cfg = small_cfg(2, 2);
  const auto trained = pretrain(data, cfg, arch);

  // Each branch only sees its own init, shuffle and noise streams.
  const auto s = make_cosine_schedule(cfg.horizon);
  for (Role role : {Role::P2M, Role::M2P}) {
    const bool p2m = role == Role::P2M;
    Rng init = derive_rng(cfg.seed, p2m ? 1 : 2);
    auto pred = NoisePredictor::build(branch_config(arch, role, 4), role, init);
    Rng shuffle = derive_rng(cfg.seed, 3), noise = derive_rng(cfg.seed, p2m ? 4 : 5);
    nn::AdamWOptions o;
    o.learning_rate = cfg.learning_rate;
    nn::AdamW<float> opt(o);
    for (int e = 0; e < cfg.epochs; ++e) {
      std::vector<std::size_t> order(data.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), shuffle);
      for (std::size_t st = 0; st < order.size(); st += 2) {
        std::vector<ImagePair> batch;
        for (std::size_t i = st; i < std::min(order.size(), st + 2); ++i) batch.push_back(data[order[i]]);
        pretrain_step(pred, batch, s, Objective::Noise, noise);
        opt.step(pred.parameters());
      }
    }
    CHECK(same_values(pred.parameters(), p2m ? trained.p2m.parameters() : trained.m2p.parameters()));
  }
}

TEST_CASE("predictor checkpoints round-trip") {
  const auto dir = testing::temp_dir("ckpt");
  const auto data = scenes(2, 16, 4);
  const auto cfg = small_cfg(1);
  const auto r = pretrain(data, cfg, testing::tiny_config(4, 1));
  const auto path = (dir / "p2m.ckpt").string();
  save_checkpoint(r.p2m, path, cfg, 1, 0.008);
  const auto back = load_predictor_checkpoint(path);
  CHECK(same_values(back.predictor.parameters(), r.p2m.parameters()));
  CHECK(back.predictor.config() == r.p2m.config());
  CHECK(back.predictor.role() == Role::P2M);
  CHECK(back.pretrain == cfg);
  CHECK(back.epoch == 1);
  CHECK(back.schedule_offset == 0.008);
  std::mt19937_64 rng(1);
  const auto x = testing::random_image(rng, 16, 16, 4);
  const auto c = testing::random_image(rng, 16, 16, 1, ImageKind::Pan);
  CHECK(testing::max_abs_diff(predict_noise(back.predictor, x, c, 7), predict_noise(r.p2m, x, c, 7)) == 0.0);
}

TEST_CASE("corrupted checkpoints are rejected") {
  const auto dir = testing::temp_dir("ckpt_bad");
  Rng rng(1);
  const auto p = NoisePredictor::build(testing::tiny_config(4, 1), Role::P2M, rng);
  const auto path = dir / "p.ckpt";
  save_checkpoint(p, path.string());
  const auto bytes = testing::read_bytes(path);

  testing::write_bytes(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.ckpt").string()), CorruptionError);
  testing::write_bytes(dir / "short.ckpt", bytes.substr(0, 12));
  CHECK_THROWS_AS(load_checkpoint((dir / "short.ckpt").string()), CorruptionError);
  testing::write_bytes(dir / "long.ckpt", bytes + "xx");
  CHECK_THROWS_AS(load_checkpoint((dir / "long.ckpt").string()), CorruptionError);
  auto magic = bytes;
  magic[0] = 'X';
  testing::write_bytes(dir / "magic.ckpt", magic);
  CHECK_THROWS_AS(load_checkpoint((dir / "magic.ckpt").string()), FormatError);
  auto version = bytes;
  version[8] = 2;
  testing::write_bytes(dir / "version.ckpt", version);
  CHECK_THROWS_AS(load_checkpoint((dir / "version.ckpt").string()), FormatError);

  // A container whose arrays do not match the predictor config.
  auto c = read_container(path.string());
  c.arrays.at("out.conv.weight").shape = {2, 2};
  c.arrays.at("out.conv.weight").value.resize(4);
  write_container((dir / "shape.ckpt").string(), c);
  CHECK_THROWS_AS(load_checkpoint((dir / "shape.ckpt").string()), CorruptionError);
  c.role = "FUSION_HEAD";
  write_container((dir / "role.ckpt").string(), c);
  CHECK_THROWS_AS(load_checkpoint((dir / "role.ckpt").string()), FormatError);
}

TEST_CASE("container bytes follow the documented layout") {
  const auto dir = testing::temp_dir("container");
  Container c;
  c.role = "TEST";
  c.meta = {{"k", 3}};
  c.arrays.add("a", {2}).value = {1.0f, -2.0f};
  c.arrays.add("b", {1, 3}).value = {0.5f, 0.25f, 0.125f};
  c.arrays.add("c", {1}).value = {7.0f};
  write_container((dir / "x.ckpt").string(), c);
  const auto bytes = testing::read_bytes(dir / "x.ckpt");

  REQUIRE(bytes.size() > 20);
  CHECK(std::memcmp(bytes.data(), "CDCKPT\0\0", 8) == 0);
  std::uint32_t version;
  std::uint64_t mlen;
  std::memcpy(&version, bytes.data() + 8, 4);
  std::memcpy(&mlen, bytes.data() + 12, 8);
  CHECK(version == 1);
  const auto manifest = nlohmann::json::parse(bytes.substr(20, mlen));
  CHECK(manifest["role"] == "TEST");
  CHECK(manifest["format_version"] == 1);
  CHECK(manifest["meta"]["k"] == 3);
  REQUIRE(manifest["arrays"].size() == 3);
  const std::size_t base = 20 + mlen;
  CHECK(bytes.size() == base + 6 * 4);
  std::vector<float> all(6);
  std::memcpy(all.data(), bytes.data() + base, 24);
  CHECK(all == std::vector<float>{1.0f, -2.0f, 0.5f, 0.25f, 0.125f, 7.0f});
  const auto& b = manifest["arrays"][1];
  CHECK(b["name"] == "b");
  CHECK(b["shape"] == nlohmann::json::array({1, 3}));
  CHECK(b["dtype"] == "f32");
  CHECK(b["offset"] == 8);
  CHECK(b["nbytes"] == 12);

  const auto back = read_container((dir / "x.ckpt").string());
  CHECK(back.role == "TEST");
  CHECK(same_values(back.arrays, c.arrays));
}
