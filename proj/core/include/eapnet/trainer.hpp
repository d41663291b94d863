#pragma once

#include <map>
#include <string>
#include <vector>

#include "eapnet/autodiff.hpp"
#include "eapnet/hdr_data.hpp"
#include "eapnet/losses.hpp"
#include "eapnet/model.hpp"

namespace eapnet {

struct Schedule {
  double base_lr = 8e-4;
  int64_t warmup_steps = 1000;
  double decay_factor = 0.75;
  int64_t decay_interval = 100000;
  int batch_size = 32;
};

// Linear warmup to base_lr over the first warmup_steps, then stepwise decay
// by decay_factor every decay_interval steps. step is 1-based.
double lr_at(const Schedule& s, int64_t step);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct OptimState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  int64_t step = 0;
};

// Bias-corrected Adam update over every named parameter. A non-finite
// gradient rejects the whole step, naming the offending parameter.
void adam_step(ParamStore& params, const ad::GradMap<float>& grads, OptimState& state,
               double lr, const AdamConfig& cfg = {});

// shadow <- decay * shadow + (1 - decay) * params
void ema_update(ParamStore& shadow, const ParamStore& params, double decay);

struct TrainOptions {
  int64_t steps = 2000;
  int64_t patch_size = 64;
  int64_t patch_overlap = 32;
  int64_t ema_interval = 100;  // 5000 at full scale, interval-scaled for desk runs
  double ema_decay = 0.5;
  int64_t eval_interval = 200;
  int64_t checkpoint_interval = 500;
  int holdout_scenes = 4;
  uint64_t seed = 0;
  std::string out_dir;  // empty: keep everything in memory
  LossConfig loss;
};

struct TrainResult {
  int64_t steps_run = 0;
  bool aborted = false;  // non-finite loss or gradient, last checkpoint retained
  std::vector<double> losses;
  double eval_psnr = 0.0;  // held-out metrics of the final EMA parameters
  double eval_psnr_mu = 0.0;
  ParamStore params;
  ParamStore ema;
};

// Deterministic patch-based training: seeded shuffling, per-step metrics
// lines (out_dir/metrics.jsonl), periodic EMA updates and checkpoints.
TrainResult train_loop(const ModelConfig& config, const std::vector<LdrTriplet>& dataset,
                       const Schedule& schedule, const TrainOptions& options);

// Pads the frames to the network geometry, feeds the EV-aligned 6-channel
// inputs through the model, crops back and clamps at zero. use_f64 runs the
// whole forward pass in 64-bit mode.
Tensor infer_hdr(const ModelConfig& config, const ParamStore& params, const LdrTriplet& t,
                 bool use_f64 = false);

}  // namespace eapnet
