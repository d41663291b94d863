#include "eapnet/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "eapnet/kernels.hpp"
#include "eapnet/serialize.hpp"
#include "rng.hpp"

namespace eapnet {

double lr_at(const Schedule& s, int64_t step) {
  if (step < 1) throw std::invalid_argument("lr_at: step must be >= 1");
  if (s.warmup_steps > 0 && step <= s.warmup_steps) {
    return s.base_lr * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const int64_t decays = step / s.decay_interval;
  return s.base_lr * std::pow(s.decay_factor, static_cast<double>(decays));
}

void adam_step(ParamStore& params, const ad::GradMap<float>& grads, OptimState& state,
               double lr, const AdamConfig& cfg) {
  for (const auto& [name, g] : grads) {
    if (!all_finite(g)) {
      throw std::runtime_error("adam: non-finite gradient for parameter \"" + name +
                               "\"; step rejected");
    }
    if (params.tensors.find(name) == params.tensors.end()) {
      throw std::invalid_argument("adam: gradient for unknown parameter \"" + name + "\"");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params.tensors) {
    const auto git = grads.find(name);
    if (git == grads.end()) {
      throw std::invalid_argument("adam: missing gradient for parameter \"" + name + "\"");
    }
    const Tensor& g = git->second;
    if (!(g.shape == p.shape)) {
      throw std::invalid_argument("adam: gradient shape " + g.shape.str() +
                                  " does not match parameter \"" + name + "\" " +
                                  p.shape.str());
    }
    Tensor& m = state.m.try_emplace(name, Tensor(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.shape)).first->second;
    for (int64_t i = 0; i < p.numel(); ++i) {
      const double gi = g.data[i];
      const double mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
      m.data[i] = static_cast<float>(mi);
      v.data[i] = static_cast<float>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      p.data[i] = static_cast<float>(p.data[i] - update);
    }
  }
}

void ema_update(ParamStore& shadow, const ParamStore& params, double decay) {
  if (decay < 0.0 || decay > 1.0) {
    throw std::invalid_argument("ema: decay must be in [0, 1]");
  }
  if (shadow.tensors.size() != params.tensors.size()) {
    throw std::invalid_argument("ema: shadow and parameter sets differ in size");
  }
  for (auto& [name, s] : shadow.tensors) {
    const auto it = params.tensors.find(name);
    if (it == params.tensors.end() || !(it->second.shape == s.shape)) {
      throw std::invalid_argument("ema: shadow parameter \"" + name +
                                  "\" has no matching tensor");
    }
    const Tensor& p = it->second;
    for (int64_t i = 0; i < s.numel(); ++i) {
      s.data[i] = static_cast<float>(decay * s.data[i] + (1.0 - decay) * p.data[i]);
    }
  }
}

namespace {

Tensor stack_batch(const std::vector<Tensor>& items) {
  const Shape4 s = items.front().shape;
  Tensor out(Shape4{static_cast<int64_t>(items.size()), s.c, s.h, s.w});
  const int64_t block = s.c * s.h * s.w;
  for (size_t i = 0; i < items.size(); ++i) {
    std::copy(items[i].data.begin(), items[i].data.end(),
              out.data.begin() + static_cast<int64_t>(i) * block);
  }
  return out;
}

int64_t next_multiple(int64_t v, int64_t m) { return (v + m - 1) / m * m; }

struct EvalMetrics {
  double psnr = 0.0;
  double psnr_mu = 0.0;
};

EvalMetrics eval_holdout(const ModelConfig& config, const ParamStore& params,
                         const std::vector<LdrTriplet>& holdout, const LossConfig& loss) {
  EvalMetrics metrics;
  if (holdout.empty()) return metrics;
  for (const LdrTriplet& t : holdout) {
    const Tensor pred = infer_hdr(config, params, t);
    metrics.psnr += psnr(pred, t.ground_truth, loss.psnr_peak, loss.psnr_cap_db);
    metrics.psnr_mu += psnr_mu(pred, t.ground_truth, loss);
  }
  metrics.psnr /= static_cast<double>(holdout.size());
  metrics.psnr_mu /= static_cast<double>(holdout.size());
  return metrics;
}

}  // namespace

namespace {

template <typename T>
Tensor infer_hdr_impl(const ModelConfig& config, const ParamStore& params,
                      const LdrTriplet& t) {
  const int64_t h = t.frames[0].shape.h;
  const int64_t w = t.frames[0].shape.w;
  // divisible-by-8 geometry keeps every block level an exact halving
  const PadGeometry geom =
      pad_geometry(h, w, std::max<int64_t>(next_multiple(h, 8), 16),
                   std::max<int64_t>(next_multiple(w, 8), 16));
  const float inv_sat = static_cast<float>(1.0 / t.degradation.saturation);

  ParamVars<T> vars = params_as_constants<T>(params);
  std::array<ad::Var<T>, 3> inputs;
  for (int f = 0; f < 3; ++f) {
    Tensor frame = mul_scalar(t.frames[f], inv_sat);
    Tensor padded = pad_to(frame, geom.src_h + geom.top + geom.bottom,
                           geom.src_w + geom.left + geom.right);
    inputs[f] = ad::constant(model_input(padded, t.evs[f]).template cast<T>());
  }
  Tensor pred = model_forward<T>(inputs, config, vars).val().template cast<float>();
  return clamp_min0(crop_from(pred, geom));
}

}  // namespace

Tensor infer_hdr(const ModelConfig& config, const ParamStore& params, const LdrTriplet& t,
                 bool use_f64) {
  return use_f64 ? infer_hdr_impl<double>(config, params, t)
                 : infer_hdr_impl<float>(config, params, t);
}

TrainResult train_loop(const ModelConfig& config, const std::vector<LdrTriplet>& dataset,
                       const Schedule& schedule, const TrainOptions& options) {
  config.validate();
  options.loss.validate();
  if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
  if (schedule.batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");

  const int holdout_count =
      std::min<int>(options.holdout_scenes, static_cast<int>(dataset.size()) - 1);
  const std::vector<LdrTriplet> train_set(dataset.begin(), dataset.end() - holdout_count);
  const std::vector<LdrTriplet> holdout(dataset.end() - holdout_count, dataset.end());

  struct Sample {
    int scene;
    int64_t y, x;
  };
  std::vector<Sample> samples;
  for (size_t si = 0; si < train_set.size(); ++si) {
    const Shape4 s = train_set[si].ground_truth.shape;
    for (const PatchPlace& place :
         patch_grid(s.h, s.w, options.patch_size, options.patch_overlap)) {
      samples.push_back({static_cast<int>(si), place.y, place.x});
    }
  }

  detail::SplitMix rng(options.seed ^ 0x7c15d1e6f3a9b824ULL);
  std::vector<size_t> order(samples.size());
  size_t cursor = order.size();  // forces a shuffle on first use
  auto next_sample = [&]() -> const Sample& {
    if (cursor >= order.size()) {
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(
                                    0, static_cast<int64_t>(i) - 1))]);
      }
      cursor = 0;
    }
    return samples[order[cursor++]];
  };

  TrainResult result;
  result.params = init_params(config);
  result.ema = result.params;
  OptimState opt_state;

  namespace fs = std::filesystem;
  std::ofstream metrics;
  const bool persist = !options.out_dir.empty();
  auto save = [&]() {
    if (persist) {
      save_checkpoint((fs::path(options.out_dir) / "checkpoint").string(),
                      {config, result.params, result.ema, true});
    }
  };
  if (persist) {
    fs::create_directories(options.out_dir);
    metrics.open(fs::path(options.out_dir) / "metrics.jsonl");
    if (!metrics) throw std::runtime_error("train: cannot write metrics under " + options.out_dir);
    save();
  }

  const float inv_sat = static_cast<float>(1.0 / dataset.front().degradation.saturation);
  for (int64_t step = 1; step <= options.steps; ++step) {
    std::vector<Tensor> frame_patches[3];
    std::vector<Tensor> gt_patches;
    std::array<double, 3> evs = train_set.front().evs;
    for (int b = 0; b < schedule.batch_size; ++b) {
      const Sample& smp = next_sample();
      const LdrTriplet& t = train_set[smp.scene];
      for (int f = 0; f < 3; ++f) {
        frame_patches[f].push_back(
            crop(t.frames[f], smp.y, smp.x, options.patch_size, options.patch_size));
      }
      gt_patches.push_back(
          crop(t.ground_truth, smp.y, smp.x, options.patch_size, options.patch_size));
      evs = t.evs;
    }

    ad::Tape<float> tape;
    ParamVars<float> leaves = params_as_leaves(tape, result.params);
    std::array<ad::Var<float>, 3> inputs;
    for (int f = 0; f < 3; ++f) {
      inputs[f] = ad::constant(
          model_input(mul_scalar(stack_batch(frame_patches[f]), inv_sat), evs[f]));
    }
    const Tensor gt = stack_batch(gt_patches);

    ad::Var<float> pred = model_forward<float>(inputs, config, leaves);
    ad::Var<float> loss = combined_loss(pred, gt, options.loss);
    const double loss_value = loss.val().data[0];
    const double lr = lr_at(schedule, step);

    if (!std::isfinite(loss_value)) {
      result.aborted = true;  // last periodic checkpoint stays on disk
      if (metrics.is_open()) {
        nlohmann::json line{{"step", step}, {"lr", lr}, {"loss", loss_value},
                            {"event", "non-finite loss, aborting"}};
        metrics << line.dump() << "\n";
      }
      break;
    }

    bool stepped = true;
    try {
      ad::GradMap<float> grads = tape.backward(loss);
      adam_step(result.params, grads, opt_state, lr);
    } catch (const std::runtime_error& e) {
      result.aborted = true;
      stepped = false;
      if (metrics.is_open()) {
        nlohmann::json line{{"step", step}, {"lr", lr}, {"loss", loss_value},
                            {"event", e.what()}};
        metrics << line.dump() << "\n";
      }
    }
    if (!stepped) break;

    result.losses.push_back(loss_value);
    result.steps_run = step;
    if (options.ema_interval > 0 && step % options.ema_interval == 0) {
      ema_update(result.ema, result.params, options.ema_decay);
    }

    if (metrics.is_open()) {
      nlohmann::json line{{"step", step}, {"lr", lr}, {"loss", loss_value}};
      if (options.eval_interval > 0 && step % options.eval_interval == 0 && !holdout.empty()) {
        const EvalMetrics m = eval_holdout(config, result.params, holdout, options.loss);
        line["psnr"] = m.psnr;
        line["psnr_mu"] = m.psnr_mu;
      }
      metrics << line.dump() << "\n";
    }
    if (persist && options.checkpoint_interval > 0 &&
        step % options.checkpoint_interval == 0) {
      save();
    }
  }

  if (!holdout.empty()) {
    const EvalMetrics final_metrics =
        eval_holdout(config, result.ema, holdout, options.loss);
    result.eval_psnr = final_metrics.psnr;
    result.eval_psnr_mu = final_metrics.psnr_mu;
  }
  save();
  return result;
}

}  // namespace eapnet
