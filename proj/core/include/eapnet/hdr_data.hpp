#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "eapnet/tensor.hpp"

namespace eapnet {

// Linear-radiance ground truth, non-negative, scaled so that the 99th
// percentile sits at 1. normalization keeps the divisor that was applied.
struct HdrImage {
  Tensor radiance;  // 1x3xHxW
  float normalization = 1.0f;
};

// Sensor model parameters: a frame observes
//   min(radiance * t / gain + offset + noise, saturation), clamped below at 0.
struct DegradationParams {
  std::array<double, 3> exposure_times{0.25, 1.0, 4.0};  // short < medium < long
  double gain = 1.0;
  double offset = 0.0;
  double sigma = 0.0;
  double saturation = 1.0;
  uint64_t seed = 0;

  void validate() const;
  // log2 exposure offset relative to the reference (medium) frame; frame is
  // 1-based.
  double ev(int frame) const;
};

struct LdrTriplet {
  static constexpr int kReferenceIndex = 2;  // 1-based

  std::array<Tensor, 3> frames;  // each 1x3xHxW in [0, saturation]
  std::array<double, 3> evs;
  Tensor ground_truth;  // radiance aligned to the reference frame
  DegradationParams degradation;
};

// One simulated exposure of a scene; frame is 1-based and salts the noise
// stream, so the three frames of a triplet see independent noise.
Tensor degrade(const Tensor& radiance, const DegradationParams& params, int frame);

// Deterministic synthetic radiance field: smooth log-domain gradients,
// soft-edged ellipses and small high-intensity sources spanning over 12
// stops. Identical seeds give bit-identical scenes.
HdrImage synth_scene(uint64_t seed, int64_t h, int64_t w);

struct TripletOptions {
  int64_t height = 128;
  int64_t width = 128;
  int max_shift = 2;  // per-frame global translation, pixels
  // explicit (dy, dx) per frame; when unset, non-reference shifts are drawn
  // from the seed within [-max_shift, max_shift]
  std::optional<std::array<std::array<int64_t, 2>, 3>> shifts;
  DegradationParams degradation;
  uint64_t seed = 0;
};

// Synthesizes a scene and degrades three translated views of it. The
// reference frame is untranslated and the ground truth is aligned to it.
LdrTriplet make_triplet(const TripletOptions& options);

// Exposure alignment: clamp(I, 0, 1)^gamma / 2^ev.
Tensor ev_align(const Tensor& ldr, double ev, double gamma = 2.24);

// concat(I, ev_align(I)) -> the 6-channel network input for one frame.
Tensor model_input(const Tensor& ldr, double ev, double gamma = 2.24);

struct PatchPlace {
  int64_t y = 0;
  int64_t x = 0;
};

// Tile positions with stride size-overlap, plus a final position flush with
// the far edge when the regular grid does not reach it. Every pixel is
// covered at least once.
std::vector<int64_t> patch_positions(int64_t extent, int64_t size, int64_t overlap);
std::vector<PatchPlace> patch_grid(int64_t h, int64_t w, int64_t size, int64_t overlap);

struct ImagePatch {
  PatchPlace place;
  Tensor data;
};
std::vector<ImagePatch> crop_patches(const Tensor& image, int64_t size = 256,
                                     int64_t overlap = 128);

struct PadGeometry {
  int64_t top = 0, bottom = 0, left = 0, right = 0;
  int64_t src_h = 0, src_w = 0;
};
PadGeometry pad_geometry(int64_t src_h, int64_t src_w, int64_t target_h, int64_t target_w);

// Reflect padding split evenly, floor on top/left; crop_from restores the
// original bit-exactly.
Tensor pad_to(const Tensor& image, int64_t target_h = 1080, int64_t target_w = 1920);
Tensor crop_from(const Tensor& padded, const PadGeometry& geometry);

// Triplet directory layout: short.pfm, medium.pfm, long.pfm, gt.pfm,
// meta.json (exposure times, gain, offset, sigma, seed).
void save_triplet(const std::string& dir, const LdrTriplet& triplet);
LdrTriplet load_triplet(const std::string& dir);

}  // namespace eapnet
