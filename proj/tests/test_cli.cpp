#include <doctest.h>

#include <sstream>

#include "crossdiff/cli.hpp"
#include "crossdiff/data.hpp"
#include "crossdiff/metrics.hpp"
#include "crossdiff/pretrain.hpp"
#include "support.hpp"

using namespace crossdiff;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

// Small tiles and a tiny network so the whole pipeline takes seconds.
std::vector<std::string> small(const fs::path& dir) {
  return {"data.root=" + (dir / "data").string(),
          "data.scenes=2",
          "data.height=64",
          "data.width=64",
          "data.tile=32",
          "data.stride=32",
          "schedule.horizon=50",
          "predictor.base_channels=8",
          "predictor.channel_mults=[1,2]",
          "predictor.res_blocks_per_level=1",
          "predictor.time_embed_dim=16",
          "predictor.norm_groups=4",
          "pretrain.epochs=2",
          "pretrain.batch_size=4",
          "adapt.epochs=2",
          "adapt.batch_size=4",
          "adapt.feature_step=10",
          "paths.checkpoints=" + (dir / "ckpt").string(),
          "paths.reports=" + (dir / "reports").string(),
          "paths.fused=" + (dir / "fused").string(),
          "paths.samples=" + (dir / "samples").string()};
}

Run run(const std::string& cmd, std::vector<std::string> ov, const std::vector<std::string>& extra = {}) {
  ov.insert(ov.end(), extra.begin(), extra.end());
  std::ostringstream out, err;
  const int code = cli::dispatch(cmd, "", ov, out, err);
  return {code, out.str(), err.str()};
}

int run_main(std::vector<std::string> args) {
  args.insert(args.begin(), "crossdiff");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::main(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST_CASE("usage errors exit with status 2") {
  const auto dir = testing::temp_dir("cli_usage");
  CHECK(run("train", small(dir)).code == cli::kExitUsage);
  CHECK(run("eval", small(dir), {"eval.colour=1"}).code == cli::kExitUsage);
  CHECK(run("eval", small(dir), {"nosection.key=1"}).code == cli::kExitUsage);
  CHECK(run("eval", small(dir), {"eval.fms=bogus"}).code == cli::kExitUsage);
  CHECK(run("eval", small(dir), {"eval.mode=HALF_RES"}).code == cli::kExitUsage);
  CHECK(run("pretrain", small(dir), {"pretrain.batch_size=0"}).code == cli::kExitUsage);
  CHECK(run("eval", small(dir), {"evalfms"}).code == cli::kExitUsage);
  std::ostringstream out, err;
  CHECK(cli::dispatch("eval", (dir / "none.json").string(), {}, out, err) == cli::kExitUsage);
  CHECK(err.str().find("usage error") == 0);
  testing::write_bytes(dir / "bad.json", "{\"data\": {\"colour\": 1}}");
  CHECK(cli::dispatch("eval", (dir / "bad.json").string(), {}, out, err) == cli::kExitUsage);
  CHECK(run_main({"eval", "--eval.fms", "upsample"}) == cli::kExitUsage);
  CHECK(run_main({"eval", "stray"}) == cli::kExitUsage);
  CHECK(run_main({}) == cli::kExitUsage);
}

TEST_CASE("config resolution layers file and overrides") {
  const auto dir = testing::temp_dir("cli_config");
  testing::write_bytes(dir / "c.json", "{\"adapt\": {\"epochs\": 5, \"lambda\": 0.5}}");
  const auto c = cli::resolve_config((dir / "c.json").string(), {"adapt.epochs=7", "eval.name=x"});
  CHECK(c["adapt"]["epochs"] == 7);
  CHECK(c["adapt"]["lambda"] == 0.5);
  CHECK(c["eval"]["name"] == "x");
  CHECK(c["adapt"]["learning_rate"] == cli::default_config()["adapt"]["learning_rate"]);
}

TEST_CASE("runtime failures exit with status 1") {
  const auto dir = testing::temp_dir("cli_runtime");
  const auto r = run("adapt", small(dir));
  CHECK(r.code == cli::kExitRuntime);
  CHECK(r.err.find("error: ") == 0);
}

TEST_CASE("makedata writes both splits and the reference evaluates ideally") {
  const auto dir = testing::temp_dir("cli_data");
  const auto ov = small(dir);
  const auto m = run("makedata", ov);
  REQUIRE(m.code == 0);
  const auto full = read_dataset((dir / "data").string(), "full");
  const auto reduced = read_dataset((dir / "data").string(), "reduced");
  CHECK(full.size() == 8);
  REQUIRE(reduced.size() == 8);
  CHECK(full[0].pair.pan.height() == 32);
  CHECK(reduced[0].pair.pan.height() == 8);
  CHECK(testing::max_abs_diff(*reduced[3].reference, full[3].pair.ms) == 0.0);
  CHECK(fs::exists(dir / "data" / "resolved_config.json"));

  const auto e = run("eval", ov, {"eval.mode=REDUCED_RES", "eval.split=reduced", "eval.fms=reference"});
  REQUIRE(e.code == 0);
  const auto rep = QualityReport::from_json(testing::read_bytes(dir / "reports" / "report.json"));
  CHECK(rep.tiles == 8);
  CHECK(rep.values.at("SAM").mean == 0.0);
  CHECK(rep.values.at("ERGAS").mean == 0.0);
  CHECK(rep.values.at("Q2n").mean == 1.0);
  CHECK(e.out == rep.to_text());

  const auto hr = run("eval", ov, {"eval.mode=REDUCED_RES", "eval.split=full", "eval.fms=upsample", "eval.name=up"});
  REQUIRE(hr.code == 0);
  CHECK(QualityReport::from_json(testing::read_bytes(dir / "reports" / "up.json")).values.at("SAM").mean > 0.0);
}

TEST_CASE("zero-epoch pretraining saves the seeded initialization") {
  const auto dir = testing::temp_dir("cli_zero");
  const auto ov = small(dir);
  REQUIRE(run("makedata", ov).code == 0);
  REQUIRE(run("pretrain", ov, {"pretrain.epochs=0", "pretrain.seed=3"}).code == 0);
  const auto p2m = load_checkpoint((dir / "ckpt" / "p2m.ckpt").string());
  const auto m2p = load_checkpoint((dir / "ckpt" / "m2p.ckpt").string());
  PredictorConfig arch = testing::tiny_config(4, 1);
  PretrainConfig pc;
  pc.seed = 3;
  pc.horizon = 50;
  const auto fresh = fresh_predictors(arch, 4, pc);
  CHECK(p2m.parameters().identical(fresh.p2m.parameters()));
  CHECK(m2p.parameters().identical(fresh.m2p.parameters()));
}

TEST_CASE("the small pipeline is deterministic and keeps predictors frozen") {
  std::vector<std::string> fms, reports;
  for (const char* tag : {"cli_pipe_a", "cli_pipe_b"}) {
    const auto dir = testing::temp_dir(tag);
    const auto ov = small(dir);
    REQUIRE(run("makedata", ov).code == 0);
    const auto pre = run("pretrain", ov);
    REQUIRE(pre.code == 0);
    CHECK(pre.out.find("epoch=2") != std::string::npos);
    const auto before = testing::read_bytes(dir / "ckpt" / "p2m.ckpt");
    const auto ad = run("adapt", ov, {"adapt.mode=REDUCED_RES"});
    REQUIRE(ad.code == 0);
    CHECK(ad.out.find("epoch=2 loss=") != std::string::npos);
    CHECK(testing::read_bytes(dir / "ckpt" / "p2m.ckpt") == before);
    REQUIRE(run("fuse", ov, {"fuse.split=reduced"}).code == 0);
    CHECK(fs::exists(dir / "fused" / "reduced" / "000_00_fms.png"));
    REQUIRE(run("eval", ov, {"eval.mode=REDUCED_RES", "eval.split=reduced"}).code == 0);
    REQUIRE(run("fuse", ov).code == 0);
    REQUIRE(run("eval", ov, {"eval.name=full"}).code == 0);
    const auto s = run("sample", ov);
    REQUIRE(s.code == 0);
    CHECK(fs::exists(dir / "samples" / "p2m_ms.raster"));
    fms.push_back(testing::read_bytes(dir / "fused" / "reduced" / "001_03_fms.raster") +
                  testing::read_bytes(dir / "fused" / "full" / "001_03_fms.raster"));
    reports.push_back(testing::read_bytes(dir / "reports" / "report.json") +
                      testing::read_bytes(dir / "reports" / "full.json") + s.out);
  }
  CHECK(fms[0] == fms[1]);
  CHECK(reports[0] == reports[1]);
  CHECK(reports[0].find("HQNR") != std::string::npos);
}
