// eapnet command-line tool: synthesize data, train, infer, evaluate, count
// cost, and verify gradients.

#include <chrono>
#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "eapnet/config_io.hpp"
#include "eapnet/graph_cost.hpp"
#include "eapnet/hdr_data.hpp"
#include "eapnet/losses.hpp"
#include "eapnet/model.hpp"
#include "eapnet/pfm.hpp"
#include "eapnet/serialize.hpp"
#include "eapnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string timestamp_utc() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

void write_run_manifest(const std::string& dir, const std::string& command,
                        uint64_t config_hash_value, uint64_t seed,
                        const std::vector<std::string>& inputs,
                        const std::vector<std::string>& outputs) {
  json manifest;
  manifest["command"] = command;
  manifest["config_hash"] = config_hash_value;
  manifest["seed"] = seed;
  manifest["inputs"] = inputs;
  manifest["outputs"] = outputs;
  manifest["timestamp"] = timestamp_utc();
  manifest["version"] = kVersion;
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "run_manifest.json");
  out << manifest.dump(2) << "\n";
}

eapnet::ModelConfig config_from_args(const std::string& config_path,
                                     const std::string& variant) {
  if (!config_path.empty()) return eapnet::load_model_config(config_path);
  if (variant == "standard") return eapnet::ModelConfig::preset(eapnet::Variant::Standard);
  if (variant == "lightweight") {
    return eapnet::ModelConfig::preset(eapnet::Variant::Lightweight);
  }
  if (variant == "tiny-test") return eapnet::ModelConfig::preset(eapnet::Variant::TinyTest);
  throw std::invalid_argument("unknown variant \"" + variant + "\"");
}

int run(int argc, char** argv) {
  CLI::App app{"EAPNet HDR restoration toolkit"};
  app.require_subcommand(1);

  uint64_t seed = 0;
  std::string format = "text";
  std::string precision = "f32";
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();
  app.add_option("--format", format, "output format")
      ->check(CLI::IsMember({"json", "text"}))
      ->capture_default_str();
  app.add_option("--precision", precision, "tensor precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic LDR-triplet dataset");
  int n_scenes = 8;
  int64_t s_height = 128, s_width = 128;
  int max_shift = 2;
  double sigma = 0.01, gain = 1.0, offset = 0.0, saturation = 1.0;
  std::vector<double> exposures{0.25, 1.0, 4.0};
  std::string synth_out;
  synth->add_option("--scenes", n_scenes, "number of triplets")->capture_default_str();
  synth->add_option("--height", s_height)->capture_default_str();
  synth->add_option("--width", s_width)->capture_default_str();
  synth->add_option("--max-shift", max_shift, "per-frame misalignment bound, pixels")
      ->capture_default_str();
  synth->add_option("--sigma", sigma, "sensor noise std")->capture_default_str();
  synth->add_option("--gain", gain)->capture_default_str();
  synth->add_option("--offset", offset, "constant offset current")->capture_default_str();
  synth->add_option("--saturation", saturation, "sensor saturation point")
      ->capture_default_str();
  synth->add_option("--exposures", exposures, "short/medium/long exposure times")
      ->expected(3);
  synth->add_option("--out", synth_out, "output dataset directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model on a triplet dataset");
  std::string train_config, train_data, train_out;
  int64_t train_steps = -1;
  int train_batch = -1;
  bool seed_given = false;
  train->add_option("--config", train_config, "TOML config file");
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--steps", train_steps, "override step budget");
  train->add_option("--batch", train_batch, "override batch size");
  train->add_option("--out", train_out, "output directory")->required();
  train->add_flag_callback("--reseed", [&] { seed_given = true; },
                           "use the global --seed instead of the config seed");

  // infer
  auto* infer = app.add_subcommand("infer", "restore an HDR image from one triplet");
  std::string ck_dir, triplet_dir, infer_out;
  bool use_raw = false;
  infer->add_option("--checkpoint", ck_dir)->required();
  infer->add_option("--input", triplet_dir, "triplet directory")->required();
  infer->add_option("--out", infer_out, "output PFM path")->required();
  infer->add_flag("--raw", use_raw, "use raw weights instead of the EMA model");

  // eval
  auto* eval = app.add_subcommand("eval", "PSNR / tonemapped PSNR of a prediction");
  std::string pred_path, gt_path, pred_dir, gt_dir;
  eval->add_option("--pred", pred_path, "prediction PFM");
  eval->add_option("--gt", gt_path, "ground-truth PFM");
  eval->add_option("--pred-dir", pred_dir, "directory of prediction PFMs");
  eval->add_option("--gt-dir", gt_dir, "directory of matching ground-truth PFMs");

  // cost
  auto* cost = app.add_subcommand("cost", "analytic MAccs and parameter counts");
  std::string cost_config, cost_variant = "lightweight";
  int64_t c_height = 1060, c_width = 1900;
  bool cost_ahdr = false;
  cost->add_option("--config", cost_config, "TOML config file");
  cost->add_option("--variant", cost_variant, "standard | lightweight | tiny-test")
      ->capture_default_str();
  cost->add_option("--height", c_height)->capture_default_str();
  cost->add_option("--width", c_width)->capture_default_str();
  cost->add_flag("--ahdr-baseline", cost_ahdr, "count the AHDR reference graph instead");

  // gradcheck
  auto* gradcheck =
      app.add_subcommand("gradcheck", "finite-difference check of every model gradient");
  std::string gc_config, gc_variant = "tiny-test";
  int64_t g_height = 16, g_width = 16;
  double gc_eps = 1e-4, gc_threshold = 1e-4;
  gradcheck->add_option("--config", gc_config, "TOML config file");
  gradcheck->add_option("--variant", gc_variant)->capture_default_str();
  gradcheck->add_option("--height", g_height)->capture_default_str();
  gradcheck->add_option("--width", g_width)->capture_default_str();
  gradcheck->add_option("--eps", gc_eps, "relative step size")->capture_default_str();
  gradcheck->add_option("--threshold", gc_threshold, "max relative error allowed")
      ->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  const bool json_out = format == "json";
  const bool f64 = precision == "f64";

  if (synth->parsed()) {
    eapnet::TripletOptions opt;
    opt.height = s_height;
    opt.width = s_width;
    opt.max_shift = max_shift;
    opt.degradation.exposure_times = {exposures[0], exposures[1], exposures[2]};
    opt.degradation.gain = gain;
    opt.degradation.offset = offset;
    opt.degradation.sigma = sigma;
    opt.degradation.saturation = saturation;
    opt.degradation.validate();

    std::vector<std::string> outputs;
    for (int i = 0; i < n_scenes; ++i) {
      opt.seed = seed + static_cast<uint64_t>(i);
      const eapnet::LdrTriplet triplet = eapnet::make_triplet(opt);
      char name[32];
      std::snprintf(name, sizeof(name), "scene_%04d", i);
      const std::string dir = (fs::path(synth_out) / name).string();
      eapnet::save_triplet(dir, triplet);
      outputs.push_back(name);
    }
    write_run_manifest(synth_out, "synth", 0, seed, {}, outputs);
    if (json_out) {
      std::cout << json{{"scenes", n_scenes}, {"out", synth_out}}.dump() << "\n";
    } else {
      std::cout << "wrote " << n_scenes << " triplets to " << synth_out << "\n";
    }
    return 0;
  }

  if (train->parsed()) {
    eapnet::TrainFileConfig cfg;
    if (!train_config.empty()) cfg = eapnet::load_train_config(train_config);
    if (train_steps >= 0) cfg.options.steps = train_steps;
    if (train_batch >= 1) cfg.schedule.batch_size = train_batch;
    if (seed_given) {
      cfg.options.seed = seed;
      cfg.model.seed = seed;
    }
    cfg.options.out_dir = train_out;

    std::vector<eapnet::LdrTriplet> dataset;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(train_data)) {
      if (entry.is_directory() && fs::exists(entry.path() / "meta.json")) {
        dirs.push_back(entry.path());
      }
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) dataset.push_back(eapnet::load_triplet(dir.string()));
    if (dataset.empty()) {
      std::cerr << "no triplet directories under " << train_data << "\n";
      return 1;
    }

    const eapnet::TrainResult result =
        eapnet::train_loop(cfg.model, dataset, cfg.schedule, cfg.options);
    write_run_manifest(train_out, "train", eapnet::config_hash(cfg.model), cfg.options.seed,
                       {train_data}, {"checkpoint", "metrics.jsonl"});
    json summary{{"steps_run", result.steps_run},
                 {"aborted", result.aborted},
                 {"final_loss", result.losses.empty() ? 0.0 : result.losses.back()},
                 {"holdout_psnr", result.eval_psnr},
                 {"holdout_psnr_mu", result.eval_psnr_mu}};
    if (json_out) {
      std::cout << summary.dump() << "\n";
    } else {
      std::cout << "trained " << result.steps_run << " steps; holdout PSNR "
                << result.eval_psnr << " dB, tonemapped " << result.eval_psnr_mu << " dB\n";
    }
    return result.aborted ? 1 : 0;
  }

  if (infer->parsed()) {
    const eapnet::Checkpoint ck = eapnet::load_checkpoint(ck_dir);
    const eapnet::LdrTriplet triplet = eapnet::load_triplet(triplet_dir);
    const eapnet::ParamStore& weights = (!use_raw && ck.has_ema) ? ck.ema : ck.params;
    const eapnet::Tensor pred = eapnet::infer_hdr(ck.config, weights, triplet, f64);
    eapnet::write_pfm(infer_out, pred);
    write_run_manifest(fs::path(infer_out).parent_path().string(), "infer",
                       eapnet::config_hash(ck.config), seed, {ck_dir, triplet_dir},
                       {fs::path(infer_out).filename().string()});
    if (json_out) {
      std::cout << json{{"out", infer_out},
                        {"height", pred.shape.h},
                        {"width", pred.shape.w}}
                       .dump()
                << "\n";
    } else {
      std::cout << "wrote " << infer_out << " (" << pred.shape.h << "x" << pred.shape.w
                << ")\n";
    }
    return 0;
  }

  if (eval->parsed()) {
    std::vector<std::pair<std::string, std::string>> pairs;
    if (!pred_path.empty() && !gt_path.empty()) {
      pairs.emplace_back(pred_path, gt_path);
    } else if (!pred_dir.empty() && !gt_dir.empty()) {
      std::vector<fs::path> preds;
      for (const auto& entry : fs::directory_iterator(pred_dir)) {
        if (entry.path().extension() == ".pfm") preds.push_back(entry.path());
      }
      std::sort(preds.begin(), preds.end());
      for (const auto& p : preds) {
        pairs.emplace_back(p.string(), (fs::path(gt_dir) / p.filename()).string());
      }
    } else {
      std::cerr << "eval: need --pred/--gt or --pred-dir/--gt-dir\n";
      return 1;
    }
    eapnet::LossConfig loss_cfg;
    json per_image = json::array();
    double sum_psnr = 0.0, sum_psnr_mu = 0.0;
    for (const auto& [pp, gp] : pairs) {
      const eapnet::Tensor pred = eapnet::read_pfm(pp);
      const eapnet::Tensor gt = eapnet::read_pfm(gp);
      double p, pm;
      if (f64) {
        p = eapnet::psnr(pred.cast<double>(), gt.cast<double>(), loss_cfg.psnr_peak,
                         loss_cfg.psnr_cap_db);
        pm = eapnet::psnr_mu(pred.cast<double>(), gt.cast<double>(), loss_cfg);
      } else {
        p = eapnet::psnr(pred, gt, loss_cfg.psnr_peak, loss_cfg.psnr_cap_db);
        pm = eapnet::psnr_mu(pred, gt, loss_cfg);
      }
      sum_psnr += p;
      sum_psnr_mu += pm;
      per_image.push_back({{"pred", pp}, {"psnr", p}, {"psnr_mu", pm}});
    }
    json out{{"images", per_image},
             {"mean_psnr", sum_psnr / static_cast<double>(pairs.size())},
             {"mean_psnr_mu", sum_psnr_mu / static_cast<double>(pairs.size())}};
    if (json_out) {
      std::cout << out.dump(2) << "\n";
    } else {
      for (const auto& row : per_image) {
        std::cout << row["pred"].get<std::string>() << ": psnr "
                  << row["psnr"].get<double>() << " dB, psnr_mu "
                  << row["psnr_mu"].get<double>() << " dB\n";
      }
      std::cout << "mean: psnr " << out["mean_psnr"].get<double>() << " dB, psnr_mu "
                << out["mean_psnr_mu"].get<double>() << " dB\n";
    }
    return 0;
  }

  if (cost->parsed()) {
    eapnet::CostReport report;
    uint64_t hash = 0;
    if (cost_ahdr) {
      report = eapnet::count_layers(eapnet::ahdr_reference_layers(), c_height, c_width);
    } else {
      const eapnet::ModelConfig cfg = config_from_args(cost_config, cost_variant);
      report = eapnet::count_model(cfg, c_height, c_width);
      hash = eapnet::config_hash(cfg);
    }
    if (json_out) {
      json layers = json::array();
      for (const auto& l : report.layers) {
        layers.push_back({{"name", l.name}, {"maccs", l.maccs}, {"params", l.params}});
      }
      char g[32], k[32];
      std::snprintf(g, sizeof(g), "%.2f", report.maccs_g());
      std::snprintf(k, sizeof(k), "%.2f", report.params_k());
      std::cout << json{{"layers", layers},
                        {"total_maccs", report.total_maccs},
                        {"total_params", report.total_params},
                        {"maccs_g", std::stod(g)},
                        {"params_k", std::stod(k)},
                        {"config_hash", hash}}
                       .dump(2)
                << "\n";
    } else {
      std::cout << eapnet::format_cost_table(report);
    }
    return 0;
  }

  if (gradcheck->parsed()) {
    if (precision == "f32" && app.count("--precision") > 0) {
      std::cerr << "gradcheck requires 64-bit mode; drop --precision f32\n";
      return 2;
    }
    const eapnet::ModelConfig cfg = config_from_args(gc_config, gc_variant);
    const eapnet::ad::GradCheckReport report =
        eapnet::model_grad_check(cfg, g_height, g_width, gc_eps, seed);
    const bool pass = report.max_rel_err <= gc_threshold;
    json out{{"max_rel_err", report.max_rel_err},
             {"worst_param", report.worst_param},
             {"threshold", gc_threshold},
             {"pass", pass}};
    if (json_out) {
      std::cout << out.dump() << "\n";
    } else {
      std::cout << "max relative error " << report.max_rel_err << " (worst: "
                << report.worst_param << "), threshold " << gc_threshold << " -> "
                << (pass ? "pass" : "FAIL") << "\n";
    }
    return pass ? 0 : 1;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
