#include "crossdiff/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "crossdiff/data.hpp"
#include "crossdiff/diffusion.hpp"
#include "crossdiff/fusion.hpp"
#include "crossdiff/metrics.hpp"
#include "crossdiff/pretrain.hpp"
#include "crossdiff/serialize.hpp"

namespace crossdiff::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

nlohmann::ordered_json default_config() {
  json c;
  c["data"] = {{"root", "data"}, {"ratio", 4},   {"tile", 64},     {"stride", 64},
               {"seed", 0},      {"scenes", 8},  {"height", 128},  {"width", 128},
               {"bands", 4}};
  c["schedule"] = {{"horizon", 1000}, {"offset", 0.008}};
  const PredictorConfig arch;
  c["predictor"] = {{"base_channels", arch.base_channels},
                    {"channel_mults", arch.channel_mults},
                    {"res_blocks_per_level", arch.res_blocks_per_level},
                    {"time_embed_dim", arch.time_embed_dim},
                    {"norm_groups", arch.norm_groups}};
  const PretrainConfig pre;
  c["pretrain"] = {{"epochs", pre.epochs},
                   {"batch_size", pre.batch_size},
                   {"learning_rate", pre.learning_rate},
                   {"seed", pre.seed},
                   {"objective", std::string(to_string(pre.objective))},
                   {"split", "full"}};
  const AdaptConfig ad;
  c["adapt"] = {{"feature_step", ad.feature_step},
                {"epochs", ad.epochs},
                {"batch_size", ad.batch_size},
                {"learning_rate", ad.learning_rate},
                {"lambda", ad.lambda},
                {"mode", std::string(to_string(ad.mode))},
                {"attention_enabled", ad.attention_enabled},
                {"seed", ad.seed},
                {"inference_seed", ad.inference_seed},
                {"block", ad.block}};
  c["fuse"] = {{"split", "full"}};
  c["sample"] = {{"split", "full"}, {"index", 0}, {"seed", 0}};
  c["eval"] = {{"mode", "FULL_RES"}, {"block", 32}, {"split", "full"}, {"fms", "fused"}, {"name", "report"}};
  c["paths"] = {{"checkpoints", "run/checkpoints"},
                {"reports", "run/reports"},
                {"fused", "run/fused"},
                {"samples", "run/samples"}};
  return c;
}

namespace {

void merge_section(json& dst, const nlohmann::json& src, const std::string& where) {
  if (!src.is_object()) throw UsageError("config section '" + where + "' must be an object");
  for (const auto& [key, value] : src.items()) {
    if (!dst.contains(key)) throw UsageError("unknown config key: " + where + "." + key);
    dst[key] = value;
  }
}

nlohmann::json parse_value(const std::string& text) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    return text;
  }
}

}  // namespace

nlohmann::ordered_json resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
  json cfg = default_config();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw UsageError("cannot read config file: " + config_path);
    nlohmann::json user;
    try {
      user = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!user.is_object()) throw UsageError("config must be a JSON object");
    for (const auto& [section, body] : user.items()) {
      if (!cfg.contains(section)) throw UsageError("unknown config section: " + section);
      merge_section(cfg[section], body, section);
    }
  }
  for (const auto& ov : overrides) {
    const auto eq = ov.find('=');
    const auto dot = ov.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw UsageError("override must look like section.key=value: " + ov);
    }
    const std::string section = ov.substr(0, dot);
    const std::string key = ov.substr(dot + 1, eq - dot - 1);
    if (!cfg.contains(section)) throw UsageError("unknown config section: " + section);
    if (!cfg[section].contains(key)) throw UsageError("unknown config key: " + section + "." + key);
    cfg[section][key] = parse_value(ov.substr(eq + 1));
  }
  return cfg;
}

namespace {

// Typed view of a resolved config. Built before any work so that malformed
// values surface as usage errors.
struct Settings {
  json raw;
  std::string root;
  int ratio, tile, stride, scenes, height, width, bands;
  std::uint64_t data_seed;
  int horizon;
  double offset;
  PredictorConfig arch;
  PretrainConfig pretrain;
  std::string pretrain_split;
  AdaptConfig adapt;
  std::string fuse_split;
  std::string sample_split;
  int sample_index;
  std::uint64_t sample_seed;
  EvalMode eval_mode;
  int eval_block;
  std::string eval_split, eval_fms, eval_name;
  fs::path checkpoints, reports, fused, samples;
};

Settings settings_from(const json& c) {
  Settings s;
  s.raw = c;
  try {
    const auto& d = c.at("data");
    s.root = d.at("root").get<std::string>();
    s.ratio = d.at("ratio").get<int>();
    s.tile = d.at("tile").get<int>();
    s.stride = d.at("stride").get<int>();
    s.data_seed = d.at("seed").get<std::uint64_t>();
    s.scenes = d.at("scenes").get<int>();
    s.height = d.at("height").get<int>();
    s.width = d.at("width").get<int>();
    s.bands = d.at("bands").get<int>();
    s.horizon = c.at("schedule").at("horizon").get<int>();
    s.offset = c.at("schedule").at("offset").get<double>();
    s.arch = nlohmann::json(c.at("predictor")).get<PredictorConfig>();
    nlohmann::json pre = c.at("pretrain");
    s.pretrain_split = pre.at("split").get<std::string>();
    pre.erase("split");
    s.pretrain = pre.get<PretrainConfig>();
    s.pretrain.horizon = s.horizon;
    s.adapt = nlohmann::json(c.at("adapt")).get<AdaptConfig>();
    s.fuse_split = c.at("fuse").at("split").get<std::string>();
    s.sample_split = c.at("sample").at("split").get<std::string>();
    s.sample_index = c.at("sample").at("index").get<int>();
    s.sample_seed = c.at("sample").at("seed").get<std::uint64_t>();
    const auto& e = c.at("eval");
    s.eval_mode = eval_mode_from_string(e.at("mode").get<std::string>());
    s.eval_block = e.at("block").get<int>();
    s.eval_split = e.at("split").get<std::string>();
    s.eval_fms = e.at("fms").get<std::string>();
    s.eval_name = e.at("name").get<std::string>();
    const auto& p = c.at("paths");
    s.checkpoints = p.at("checkpoints").get<std::string>();
    s.reports = p.at("reports").get<std::string>();
    s.fused = p.at("fused").get<std::string>();
    s.samples = p.at("samples").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
  if (s.eval_fms != "fused" && s.eval_fms != "reference" && s.eval_fms != "upsample") {
    throw UsageError("eval.fms must be fused, reference or upsample");
  }
  try {
    s.arch.validate();
    s.pretrain.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return s;
}

void echo_config(const Settings& s, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "resolved_config.json");
  f << s.raw.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

std::vector<DatasetItem> load_split(const Settings& s, const std::string& split) {
  auto items = read_dataset(s.root, split);
  if (items.empty()) throw std::runtime_error("dataset split is empty: " + s.root + "/" + split);
  return items;
}

NoiseSchedule schedule_of(const Settings& s) { return make_cosine_schedule(s.horizon, s.offset); }

struct Loaded {
  NoisePredictor p2m, m2p;
};

Loaded load_predictors(const Settings& s) {
  auto a = load_predictor_checkpoint((s.checkpoints / "p2m.ckpt").string());
  auto b = load_predictor_checkpoint((s.checkpoints / "m2p.ckpt").string());
  if (a.pretrain.horizon != s.horizon || a.schedule_offset != s.offset) {
    throw std::runtime_error("checkpoint schedule differs from schedule section");
  }
  return {std::move(a.predictor), std::move(b.predictor)};
}

int cmd_makedata(const Settings& s, std::ostream& out) {
  const int multiple = s.arch.spatial_multiple();
  int count = 0;
  for (int i = 0; i < s.scenes; ++i) {
    const auto scene = make_synthetic_scene(s.data_seed * 1000003ULL + static_cast<std::uint64_t>(i), s.height,
                                            s.width, s.bands, s.ratio, multiple);
    const auto tiles = tile(scene.pair(), s.tile, s.stride);
    int t = 0;
    for (int y = 0; y + s.tile <= s.height; y += s.stride)
      for (int x = 0; x + s.tile <= s.width; x += s.stride, ++t) {
        char idx[32];
        std::snprintf(idx, sizeof idx, "%03d_%02d", i, t);
        DatasetItem full{idx, tiles[t], crop(scene.hrms, y, x, s.tile, s.tile)};
        write_dataset_item(s.root, "full", full);
        auto wald = wald_degrade(tiles[t]);
        write_dataset_item(s.root, "reduced", {idx, wald.reduced, wald.reference});
        ++count;
      }
  }
  echo_config(s, s.root);
  out << "wrote " << count << " tiles to " << s.root << "\n";
  return kExitOk;
}

int cmd_pretrain(const Settings& s, std::ostream& out) {
  std::vector<ImagePair> pairs;
  for (auto& item : load_split(s, s.pretrain_split)) pairs.push_back(std::move(item.pair));
  fs::create_directories(s.checkpoints);
  echo_config(s, s.checkpoints);
  std::ofstream log(s.checkpoints / "pretrain.log");
  auto result = pretrain(pairs, s.pretrain, s.arch, s.offset, [&](const EpochLog& e) {
    log << e.to_string() << "\n" << std::flush;
    out << e.to_string() << "\n" << std::flush;
  });
  save_checkpoint(result.p2m, (s.checkpoints / "p2m.ckpt").string(), s.pretrain, s.pretrain.epochs, s.offset);
  save_checkpoint(result.m2p, (s.checkpoints / "m2p.ckpt").string(), s.pretrain, s.pretrain.epochs, s.offset);
  return kExitOk;
}

int cmd_adapt(const Settings& s, std::ostream& out) {
  const auto pred = load_predictors(s);
  const std::string split = s.adapt.mode == EvalMode::FullRes ? "full" : "reduced";
  std::vector<AdaptSample> samples;
  for (auto& item : load_split(s, split)) {
    AdaptSample a{std::move(item.pair), std::nullopt};
    if (s.adapt.mode == EvalMode::ReducedRes) a.reference = std::move(item.reference);
    samples.push_back(std::move(a));
  }
  const auto schedule = schedule_of(s);
  const auto head = build_fusion_head(pred.p2m, pred.m2p, samples.front().pair.ratio, s.adapt.attention_enabled,
                                      s.adapt.seed);
  echo_config(s, s.checkpoints);
  std::ofstream log(s.checkpoints / "adapt.log");
  const auto result = adapt(pred.p2m, pred.m2p, head, samples, s.adapt, schedule, [&](int epoch, double loss) {
    char line[96];
    std::snprintf(line, sizeof line, "epoch=%d loss=%.9g", epoch, loss);
    log << line << "\n" << std::flush;
    out << line << "\n" << std::flush;
  });
  save_fusion_head(result.head, (s.checkpoints / "head.ckpt").string(), s.adapt);
  return kExitOk;
}

int cmd_fuse(const Settings& s, std::ostream& out) {
  const auto pred = load_predictors(s);
  AdaptConfig trained;
  const auto head = load_fusion_head((s.checkpoints / "head.ckpt").string(), &trained);
  AdaptConfig cfg = s.adapt;
  cfg.attention_enabled = head.attention();
  const auto schedule = schedule_of(s);
  const fs::path dir = s.fused / s.fuse_split;
  fs::create_directories(dir);
  echo_config(s, s.fused);
  int n = 0;
  for (const auto& item : load_split(s, s.fuse_split)) {
    const auto fms = pansharpen(pred.p2m, pred.m2p, head, item.pair, cfg, schedule);
    write_raster(fms, (dir / (item.index + "_fms.raster")).string());
    export_png(fms, (dir / (item.index + "_fms.png")).string());
    ++n;
  }
  out << "fused " << n << " tiles into " << dir.string() << "\n";
  return kExitOk;
}

double psnr(const MultibandImage& a, const MultibandImage& b) {
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a.data()[i] - b.data()[i]) * (a.data()[i] - b.data()[i]);
  const double mse = se / static_cast<double>(a.size());
  return mse == 0.0 ? INFINITY : 10.0 * std::log10(1.0 / mse);
}

int cmd_sample(const Settings& s, std::ostream& out) {
  const auto pred = load_predictors(s);
  const auto items = load_split(s, s.sample_split);
  if (s.sample_index < 0 || s.sample_index >= static_cast<int>(items.size())) {
    throw std::invalid_argument("sample.index out of range");
  }
  const auto& pair = items[s.sample_index].pair;
  const auto ms_up = upsample(pair.ms, pair.ratio);
  const auto schedule = schedule_of(s);
  Rng rng(s.sample_seed);
  const auto ms_hat = sample_loop(pred.p2m, pair.pan, ms_up.bands(), schedule, rng);
  const auto pan_hat = sample_loop(pred.m2p, ms_up, 1, schedule, rng);
  fs::create_directories(s.samples);
  echo_config(s, s.samples);
  write_raster(ms_hat, (s.samples / "p2m_ms.raster").string());
  write_raster(pan_hat, (s.samples / "m2p_pan.raster").string());
  export_png(ms_hat, (s.samples / "p2m_ms.png").string());
  export_png(pan_hat, (s.samples / "m2p_pan.png").string());
  std::ostringstream text;
  text << "index " << items[s.sample_index].index << "\n";
  text << "p2m_sam_deg " << sam(ms_hat, ms_up) << "\n";
  text << "p2m_psnr_db " << psnr(ms_hat, ms_up) << "\n";
  text << "m2p_psnr_db " << psnr(pan_hat, pair.pan) << "\n";
  write_text(s.samples / "sample.txt", text.str());
  out << text.str();
  return kExitOk;
}

int cmd_eval(const Settings& s, std::ostream& out) {
  std::vector<EvalItem> items;
  const fs::path fused_dir = s.fused / s.eval_split;
  for (auto& item : load_split(s, s.eval_split)) {
    MultibandImage fms;
    if (s.eval_fms == "fused") {
      fms = read_raster((fused_dir / (item.index + "_fms.raster")).string());
    } else if (s.eval_fms == "reference") {
      if (!item.reference) throw std::runtime_error("item " + item.index + " has no reference");
      fms = *item.reference;
    } else {
      fms = upsample(item.pair.ms, item.pair.ratio);
    }
    if (s.eval_mode == EvalMode::ReducedRes && !item.reference) {
      throw std::runtime_error("REDUCED_RES evaluation needs a reference for item " + item.index);
    }
    items.push_back({std::move(item.pair), std::move(fms), std::move(item.reference)});
  }
  const auto report = evaluate(items, s.eval_mode, s.eval_block);
  fs::create_directories(s.reports);
  echo_config(s, s.reports);
  write_text(s.reports / (s.eval_name + ".txt"), report.to_text());
  write_text(s.reports / (s.eval_name + ".json"), report.to_json());
  out << report.to_text();
  return kExitOk;
}

}  // namespace

int dispatch(const std::string& command, const std::string& config_path, const std::vector<std::string>& overrides,
             std::ostream& out, std::ostream& err) {
  Settings s;
  try {
    static const std::vector<std::string> commands{"makedata", "pretrain", "adapt", "fuse", "sample", "eval"};
    if (std::find(commands.begin(), commands.end(), command) == commands.end()) {
      throw UsageError("unknown command: " + command);
    }
    s = settings_from(resolve_config(config_path, overrides));
  } catch (const std::exception& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }
  try {
    if (command == "makedata") return cmd_makedata(s, out);
    if (command == "pretrain") return cmd_pretrain(s, out);
    if (command == "adapt") return cmd_adapt(s, out);
    if (command == "fuse") return cmd_fuse(s, out);
    if (command == "sample") return cmd_sample(s, out);
    return cmd_eval(s, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int main(int argc, char** argv) {
  CLI::App app{"Two-stage cross-predictive diffusion pansharpening"};
  app.allow_extras();
  std::string command, config;
  app.add_option("command", command, "makedata | pretrain | adapt | fuse | sample | eval")->required();
  app.add_option("-c,--config", config, "JSON run config");
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  std::vector<std::string> overrides;
  for (const auto& extra : app.remaining()) {
    if (extra.rfind("--", 0) != 0) {
      std::cerr << "usage error: unexpected argument " << extra << "\n";
      return kExitUsage;
    }
    overrides.push_back(extra.substr(2));
  }
  return dispatch(command, config, overrides, std::cout, std::cerr);
}

}  // namespace crossdiff::cli
