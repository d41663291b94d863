#include "eapnet/hdr_data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "eapnet/kernels.hpp"
#include "eapnet/pfm.hpp"
#include "rng.hpp"

namespace eapnet {

void DegradationParams::validate() const {
  if (!(exposure_times[0] > 0.0 && exposure_times[0] < exposure_times[1] &&
        exposure_times[1] < exposure_times[2])) {
    throw std::invalid_argument("degradation: exposure times must be positive and increasing");
  }
  if (!(gain > 0.0)) throw std::invalid_argument("degradation: gain must be positive");
  if (offset < 0.0) throw std::invalid_argument("degradation: offset must be non-negative");
  if (sigma < 0.0) throw std::invalid_argument("degradation: sigma must be non-negative");
  if (!(saturation > 0.0)) {
    throw std::invalid_argument("degradation: saturation point must be positive");
  }
}

double DegradationParams::ev(int frame) const {
  if (frame < 1 || frame > 3) throw std::invalid_argument("degradation: frame must be 1..3");
  return std::log2(exposure_times[frame - 1] /
                   exposure_times[LdrTriplet::kReferenceIndex - 1]);
}

Tensor degrade(const Tensor& radiance, const DegradationParams& params, int frame) {
  params.validate();
  if (frame < 1 || frame > 3) throw std::invalid_argument("degrade: frame must be 1..3");
  const double scale = params.exposure_times[frame - 1] / params.gain;
  detail::SplitMix rng(params.seed ^ (0xd1f7a5c3b2e90f11ULL + static_cast<uint64_t>(frame)));

  Tensor out(radiance.shape);
  for (int64_t i = 0; i < radiance.numel(); ++i) {
    double v = static_cast<double>(radiance.data[i]) * scale + params.offset;
    if (params.sigma > 0.0) v += params.sigma * rng.normal();
    v = std::min(v, params.saturation);
    out.data[i] = static_cast<float>(std::max(v, 0.0));
  }
  return out;
}

namespace {

struct Wave {
  double fy, fx, phase, amp;
};
struct Ellipse {
  double cy, cx, ry, rx, cos_a, sin_a, intensity;
  std::array<double, 3> tint;
};
struct Source {
  double cy, cx, sigma_px, intensity;
  std::array<double, 3> tint;
};

struct SceneField {
  std::array<double, 3> base_tint;
  std::vector<Wave> waves;
  std::vector<Ellipse> ellipses;
  std::vector<Source> sources;
};

constexpr double kTwoPi = 6.283185307179586476925286766559;
constexpr double kShadowFloor = 0.0078125;  // 2^-7

SceneField make_field(uint64_t seed) {
  detail::SplitMix rng(seed ^ 0x5ce9e5f1c3a7d219ULL);
  SceneField f;
  for (double& t : f.base_tint) t = rng.uniform(0.6, 1.0);

  double amp_total = 0.0;
  for (int k = 0; k < 4; ++k) {
    Wave w;
    w.fy = rng.uniform(0.5, 3.0);
    w.fx = rng.uniform(0.5, 3.0);
    w.phase = rng.uniform(0.0, kTwoPi);
    w.amp = rng.uniform(0.3, 0.9);
    amp_total += w.amp;
    f.waves.push_back(w);
  }
  // keep the log2-domain base inside [-7, -3]
  for (Wave& w : f.waves) w.amp *= 2.0 / amp_total;

  for (int k = 0; k < 6; ++k) {
    Ellipse e;
    e.cy = rng.uniform(0.1, 0.9);
    e.cx = rng.uniform(0.1, 0.9);
    e.ry = rng.uniform(0.06, 0.28);
    e.rx = rng.uniform(0.06, 0.28);
    const double angle = rng.uniform(0.0, kTwoPi);
    e.cos_a = std::cos(angle);
    e.sin_a = std::sin(angle);
    e.intensity = std::exp2(rng.uniform(-2.0, 1.5));
    for (double& t : e.tint) t = rng.uniform(0.4, 1.0);
    f.ellipses.push_back(e);
  }

  for (int k = 0; k < 6; ++k) {
    Source s;
    s.cy = rng.uniform(0.05, 0.95);
    s.cx = rng.uniform(0.05, 0.95);
    s.sigma_px = rng.uniform(0.8, 2.5);
    // one anchor source pins the top of the dynamic range
    s.intensity = k == 0 ? 64.0 : std::exp2(rng.uniform(3.0, 5.5));
    for (double& t : s.tint) t = rng.uniform(0.7, 1.0);
    f.sources.push_back(s);
  }
  return f;
}

// Radiance at pixel (y + dy, x + dx) of an (h, w) view; integer shifts give
// bit-identical translated copies.
Tensor eval_field(const SceneField& f, int64_t h, int64_t w, int64_t dy, int64_t dx) {
  Tensor out(Shape4{1, 3, h, w});
  const double inv_h = 1.0 / static_cast<double>(h);
  const double inv_w = 1.0 / static_cast<double>(w);
  for (int64_t y = 0; y < h; ++y) {
    const double py = static_cast<double>(y + dy);
    const double u = py * inv_h;
    for (int64_t x = 0; x < w; ++x) {
      const double px = static_cast<double>(x + dx);
      const double v = px * inv_w;

      double log2_base = -5.0;
      for (const Wave& wv : f.waves) {
        log2_base += wv.amp * std::cos(kTwoPi * (wv.fy * u + wv.fx * v) + wv.phase);
      }
      const double base = std::max(std::exp2(log2_base), kShadowFloor);

      std::array<double, 3> rgb{base * f.base_tint[0], base * f.base_tint[1],
                                base * f.base_tint[2]};
      for (const Ellipse& e : f.ellipses) {
        const double oy = u - e.cy;
        const double ox = v - e.cx;
        const double ey = (oy * e.cos_a - ox * e.sin_a) / e.ry;
        const double ex = (oy * e.sin_a + ox * e.cos_a) / e.rx;
        const double r = std::sqrt(ey * ey + ex * ex);
        if (r < 1.1) {
          // soft edge between r = 0.9 and r = 1.1
          const double t = std::min(std::max((1.1 - r) / 0.2, 0.0), 1.0);
          const double mask = t * t * (3.0 - 2.0 * t);
          for (int c = 0; c < 3; ++c) rgb[c] += e.intensity * e.tint[c] * mask;
        }
      }
      for (const Source& s : f.sources) {
        const double oy = py - s.cy * static_cast<double>(h);
        const double ox = px - s.cx * static_cast<double>(w);
        const double d2 = oy * oy + ox * ox;
        const double g = std::exp(-d2 / (2.0 * s.sigma_px * s.sigma_px));
        if (g > 1e-12) {
          for (int c = 0; c < 3; ++c) rgb[c] += s.intensity * s.tint[c] * g;
        }
      }
      for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = static_cast<float>(rgb[c]);
    }
  }
  return out;
}

}  // namespace

HdrImage synth_scene(uint64_t seed, int64_t h, int64_t w) {
  if (h < 32 || w < 32) {
    throw std::invalid_argument("synth_scene: extents must be at least 32");
  }
  const SceneField field = make_field(seed);
  Tensor raw = eval_field(field, h, w, 0, 0);
  const float norm = percentile(raw, 99.0);
  HdrImage image;
  image.normalization = norm;
  image.radiance = mul_scalar(raw, 1.0f / norm);
  return image;
}

LdrTriplet make_triplet(const TripletOptions& options) {
  options.degradation.validate();
  if (options.max_shift < 0) throw std::invalid_argument("make_triplet: negative shift bound");

  detail::SplitMix rng(options.seed ^ 0x8c62f3b1d95ae447ULL);
  std::array<std::array<int64_t, 2>, 3> shifts{};
  for (int f = 0; f < 3; ++f) {
    if (f + 1 == LdrTriplet::kReferenceIndex || options.max_shift == 0) continue;
    shifts[f][0] = rng.uniform_int(-options.max_shift, options.max_shift);
    shifts[f][1] = rng.uniform_int(-options.max_shift, options.max_shift);
  }
  if (options.shifts.has_value()) shifts = *options.shifts;

  const SceneField field = make_field(options.seed);
  Tensor reference = eval_field(field, options.height, options.width, 0, 0);
  const float norm = percentile(reference, 99.0);
  const float inv_norm = 1.0f / norm;

  LdrTriplet triplet;
  triplet.degradation = options.degradation;
  triplet.degradation.seed = options.seed;
  triplet.ground_truth = mul_scalar(reference, inv_norm);
  for (int f = 1; f <= 3; ++f) {
    Tensor view = f == LdrTriplet::kReferenceIndex
                      ? triplet.ground_truth
                      : mul_scalar(eval_field(field, options.height, options.width,
                                              shifts[f - 1][0], shifts[f - 1][1]),
                                   inv_norm);
    triplet.frames[f - 1] = degrade(view, triplet.degradation, f);
    triplet.evs[f - 1] = triplet.degradation.ev(f);
  }
  return triplet;
}

Tensor ev_align(const Tensor& ldr, double ev, double gamma) {
  const float g = static_cast<float>(gamma);
  const float scale = static_cast<float>(std::exp2(-ev));
  Tensor out(ldr.shape);
  for (int64_t i = 0; i < ldr.numel(); ++i) {
    const float v = std::min(std::max(ldr.data[i], 0.0f), 1.0f);
    out.data[i] = std::pow(v, g) * scale;
  }
  return out;
}

Tensor model_input(const Tensor& ldr, double ev, double gamma) {
  return concat_channels(ldr, ev_align(ldr, ev, gamma));
}

std::vector<int64_t> patch_positions(int64_t extent, int64_t size, int64_t overlap) {
  if (size < 1 || overlap < 0 || overlap >= size) {
    throw std::invalid_argument("patch_positions: need 0 <= overlap < size");
  }
  if (extent < size) {
    throw std::invalid_argument("patch_positions: extent " + std::to_string(extent) +
                                " smaller than patch size " + std::to_string(size));
  }
  const int64_t stride = size - overlap;
  std::vector<int64_t> positions;
  for (int64_t p = 0; p + size <= extent; p += stride) positions.push_back(p);
  if (positions.back() + size < extent) positions.push_back(extent - size);
  return positions;
}

std::vector<PatchPlace> patch_grid(int64_t h, int64_t w, int64_t size, int64_t overlap) {
  std::vector<PatchPlace> grid;
  for (const int64_t y : patch_positions(h, size, overlap)) {
    for (const int64_t x : patch_positions(w, size, overlap)) grid.push_back({y, x});
  }
  return grid;
}

std::vector<ImagePatch> crop_patches(const Tensor& image, int64_t size, int64_t overlap) {
  std::vector<ImagePatch> patches;
  for (const PatchPlace& place : patch_grid(image.shape.h, image.shape.w, size, overlap)) {
    patches.push_back({place, crop(image, place.y, place.x, size, size)});
  }
  return patches;
}

PadGeometry pad_geometry(int64_t src_h, int64_t src_w, int64_t target_h, int64_t target_w) {
  if (target_h < src_h || target_w < src_w) {
    throw std::invalid_argument("pad_to: target " + std::to_string(target_h) + "x" +
                                std::to_string(target_w) + " smaller than source " +
                                std::to_string(src_h) + "x" + std::to_string(src_w));
  }
  PadGeometry g;
  g.src_h = src_h;
  g.src_w = src_w;
  g.top = (target_h - src_h) / 2;
  g.bottom = target_h - src_h - g.top;
  g.left = (target_w - src_w) / 2;
  g.right = target_w - src_w - g.left;
  return g;
}

Tensor pad_to(const Tensor& image, int64_t target_h, int64_t target_w) {
  const PadGeometry g = pad_geometry(image.shape.h, image.shape.w, target_h, target_w);
  if (g.top == 0 && g.bottom == 0 && g.left == 0 && g.right == 0) return image;
  return pad_reflect(image, g.top, g.bottom, g.left, g.right);
}

Tensor crop_from(const Tensor& padded, const PadGeometry& geometry) {
  return crop(padded, geometry.top, geometry.left, geometry.src_h, geometry.src_w);
}

void save_triplet(const std::string& dir, const LdrTriplet& triplet) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::array<const char*, 3> names{"short.pfm", "medium.pfm", "long.pfm"};
  for (int f = 0; f < 3; ++f) {
    write_pfm((fs::path(dir) / names[f]).string(), triplet.frames[f]);
  }
  write_pfm((fs::path(dir) / "gt.pfm").string(), triplet.ground_truth);

  nlohmann::json meta;
  meta["exposure_times"] = triplet.degradation.exposure_times;
  meta["gain"] = triplet.degradation.gain;
  meta["offset"] = triplet.degradation.offset;
  meta["sigma"] = triplet.degradation.sigma;
  meta["seed"] = triplet.degradation.seed;
  std::ofstream out(fs::path(dir) / "meta.json");
  out << meta.dump(2) << "\n";
  if (!out) throw std::runtime_error("save_triplet: cannot write meta.json under " + dir);
}

LdrTriplet load_triplet(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream in(fs::path(dir) / "meta.json");
  if (!in) throw std::runtime_error("load_triplet: missing meta.json under " + dir);
  nlohmann::json meta = nlohmann::json::parse(in);

  LdrTriplet triplet;
  triplet.degradation.exposure_times = meta.at("exposure_times");
  triplet.degradation.gain = meta.at("gain");
  triplet.degradation.offset = meta.at("offset");
  triplet.degradation.sigma = meta.at("sigma");
  triplet.degradation.seed = meta.at("seed");
  triplet.degradation.validate();

  const std::array<const char*, 3> names{"short.pfm", "medium.pfm", "long.pfm"};
  for (int f = 0; f < 3; ++f) {
    triplet.frames[f] = read_pfm((fs::path(dir) / names[f]).string());
    triplet.evs[f] = triplet.degradation.ev(f + 1);
  }
  triplet.ground_truth = read_pfm((fs::path(dir) / "gt.pfm").string());
  return triplet;
}

}  // namespace eapnet
