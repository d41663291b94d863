#include "eapnet/model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rng.hpp"

namespace eapnet {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::Standard: return "standard";
    case Variant::Lightweight: return "lightweight";
    case Variant::TinyTest: return "tiny-test";
  }
  return "unknown";
}

ModelConfig ModelConfig::preset(Variant v) {
  ModelConfig c;
  c.variant = v;
  switch (v) {
    case Variant::Standard:
      c.num_blocks = 4;
      c.align_resolution = AlignRes::Half;
      c.upsample = UpsampleKind::TransposedConv;
      break;
    case Variant::Lightweight:
      c.num_blocks = 3;
      c.align_resolution = AlignRes::Full;
      c.upsample = UpsampleKind::Bilinear;
      break;
    case Variant::TinyTest:
      c.encoder_channels = 8;
      c.trunk_channels = 16;
      c.num_blocks = 2;
      c.weight_sharing = true;
      c.align_resolution = AlignRes::Full;
      c.upsample = UpsampleKind::Bilinear;
      c.pdub_widths = {16, 16, 16};
      c.align_mid_channels = 8;
      c.drdb_growth = 8;
      break;
  }
  return c;
}

void ModelConfig::validate() const {
  if (encoder_channels < 1 || trunk_channels < 1) {
    throw std::invalid_argument("model config: channel widths must be positive");
  }
  if (trunk_channels != 2 * encoder_channels) {
    throw std::invalid_argument(
        "model config: trunk channels must be twice the encoder channels (multi-scale "
        "concatenation), got " +
        std::to_string(trunk_channels) + " vs " + std::to_string(encoder_channels));
  }
  if (num_blocks < 1) throw std::invalid_argument("model config: need at least one block");
  for (int w : pdub_widths) {
    if (w < 1) throw std::invalid_argument("model config: block widths must be positive");
  }
  for (int d : pdub_dilations) {
    if (d < 1) throw std::invalid_argument("model config: dilations must be positive");
  }
  if (align_mid_channels < 1) {
    throw std::invalid_argument("model config: alignment width must be positive");
  }
  if (drdb_growth < 1 || drdb_layers < 1) {
    throw std::invalid_argument("model config: dense block growth/depth must be positive");
  }
}

namespace {

std::string frame_tag(const ModelConfig& c, int frame) {
  return c.weight_sharing ? std::string("s") : "f" + std::to_string(frame);
}

}  // namespace

std::string enc_prefix(const ModelConfig& c, int frame) { return "enc." + frame_tag(c, frame); }
std::string hired_prefix(const ModelConfig& c, int frame) {
  return "hired." + frame_tag(c, frame);
}
std::string att_prefix(const ModelConfig& c, int frame, bool high) {
  return "att." + frame_tag(c, frame) + (high ? ".high" : ".low");
}
std::string align_prefix(const ModelConfig& c, int frame, bool high) {
  return "align." + frame_tag(c, frame) + (high ? ".high" : ".low");
}

namespace {

LayerSpec make_layer(std::string name, LayerKind kind, ConvSpec spec, int in_div, int runs,
                     WeightInit init) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = kind;
  l.conv = spec;
  l.in_div = in_div;
  l.runs = runs;
  l.init = init;
  return l;
}

// Depthwise k x k followed by a pointwise fusion; the bias lives on the
// pointwise half only.
void add_ds(std::vector<LayerSpec>& out, const std::string& base, int cin, int cout, int stride,
            int dilation, int in_div, int runs, WeightInit pw_init = WeightInit::FanIn,
            bool pw_bias = true) {
  const int pad = stride == 2 ? 1 : dilation;
  out.push_back(make_layer(base + ".dw", LayerKind::Conv,
                           depthwise_spec(cin, 3, stride, stride == 2 ? 1 : dilation, pad),
                           in_div, runs, WeightInit::FanIn));
  out.push_back(make_layer(base + ".pw", LayerKind::Conv, pointwise_spec(cin, cout, pw_bias),
                           stride == 2 ? in_div * 2 : in_div, runs, pw_init));
}

ConvSpec tconv_spec(int tconv_in, int tconv_out, int kernel, int padding, bool bias,
                    int groups = 1) {
  // conv_transpose2d consumes spec.out_channels and produces spec.in_channels.
  ConvSpec s;
  s.in_channels = tconv_out;
  s.out_channels = tconv_in;
  s.kernel = kernel;
  s.stride = 2;
  s.padding = padding;
  s.groups = groups;
  s.has_bias = bias;
  return s;
}

}  // namespace

std::vector<LayerSpec> model_layers(const ModelConfig& c) {
  c.validate();
  std::vector<LayerSpec> L;
  const int C = c.encoder_channels;
  const int T = c.trunk_channels;
  const int Am = c.align_mid_channels;
  const bool half = c.align_resolution == AlignRes::Half;
  const bool tconv = c.upsample == UpsampleKind::TransposedConv;

  auto add_encoder = [&](const std::string& pre, int runs) {
    ConvSpec first;
    first.in_channels = 6;
    first.out_channels = C;
    first.kernel = 3;
    first.padding = 1;
    L.push_back(make_layer(pre + ".first", LayerKind::Conv, first, 1, runs, WeightInit::FanIn));
    add_ds(L, pre + ".high", C, C, 1, 1, 1, runs);
    add_ds(L, pre + ".low", C, C, 2, 1, 1, runs);
  };
  auto add_att_align = [&](const std::string& att, const std::string& align, int base_div,
                           int runs) {
    const int pred_div = half ? base_div * 2 : base_div;
    add_ds(L, att, 2 * C, C, 1, 1, pred_div, runs);
    if (half && tconv) {
      L.push_back(make_layer(att + ".up", LayerKind::ConvTranspose, tconv_spec(C, C, 2, 0, true),
                             pred_div, runs, WeightInit::NearestNeighborUp));
    }
    add_ds(L, align + ".l1", 2 * C, Am, 1, 1, pred_div, runs);
    add_ds(L, align + ".l2", Am, Am, 1, 1, pred_div, runs);
    add_ds(L, align + ".l3", Am, 2 * C, 1, 1, pred_div, runs, WeightInit::Zero);
    if (half && tconv) {
      L.push_back(make_layer(align + ".up", LayerKind::ConvTranspose,
                             tconv_spec(2 * C, 2 * C, 2, 0, true), pred_div, runs,
                             WeightInit::NearestNeighborUp));
    }
  };

  if (c.weight_sharing) {
    add_encoder("enc.s", 3);
    add_att_align("att.s.high", "align.s.high", 1, 2);
    add_att_align("att.s.low", "align.s.low", 2, 2);
    add_ds(L, "hired.s", C, C, 2, 1, 1, 3);
    add_ds(L, "merge.ref", T, T, 1, 1, 2, 1);
    add_ds(L, "merge.nr", T, T, 1, 1, 2, 2, WeightInit::FanIn, /*pw_bias=*/false);
  } else {
    for (int f = 1; f <= 3; ++f) add_encoder(enc_prefix(c, f), 1);
    for (int f : {1, 3}) {
      add_att_align(att_prefix(c, f, true), align_prefix(c, f, true), 1, 1);
      add_att_align(att_prefix(c, f, false), align_prefix(c, f, false), 2, 1);
    }
    for (int f = 1; f <= 3; ++f) add_ds(L, hired_prefix(c, f), C, C, 2, 1, 1, 1);
    add_ds(L, "merge", 3 * T, T, 1, 1, 2, 1);
  }

  for (int b = 0; b < c.num_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b);
    if (c.block_kind == BlockKind::Pdub) {
      const auto [w1, w2, w3] = std::tuple{c.pdub_widths[0], c.pdub_widths[1], c.pdub_widths[2]};
      const auto [d1, d2, d3] =
          std::tuple{c.pdub_dilations[0], c.pdub_dilations[1], c.pdub_dilations[2]};
      add_ds(L, pre + ".e1", T, w1, 1, d1, 2, 1);
      add_ds(L, pre + ".down1", w1, w2, 2, 1, 2, 1);
      add_ds(L, pre + ".e2", w2, w2, 1, d2, 4, 1);
      add_ds(L, pre + ".down2", w2, w3, 2, 1, 4, 1);
      add_ds(L, pre + ".e3", w3, w3, 1, d3, 8, 1);
      if (tconv) {
        L.push_back(make_layer(pre + ".up2", LayerKind::ConvTranspose,
                               tconv_spec(w3, w3, 2, 0, false, w3), 8, 1, WeightInit::FanIn));
      }
      L.push_back(make_layer(pre + ".m2", LayerKind::Conv, pointwise_spec(w3 + w2, w2, true), 4,
                             1, WeightInit::FanIn));
      if (tconv) {
        L.push_back(make_layer(pre + ".up1", LayerKind::ConvTranspose,
                               tconv_spec(w2, w2, 2, 0, false, w2), 4, 1, WeightInit::FanIn));
      }
      L.push_back(make_layer(pre + ".m1", LayerKind::Conv, pointwise_spec(w2 + w1, w1, true), 2,
                             1, WeightInit::FanIn));
      L.push_back(make_layer(pre + ".out", LayerKind::Conv, pointwise_spec(w1, T, true), 2, 1,
                             WeightInit::Zero));
    } else {
      for (int j = 0; j < c.drdb_layers; ++j) {
        add_ds(L, pre + ".dense" + std::to_string(j), T + j * c.drdb_growth, c.drdb_growth, 1,
               2, 2, 1);
      }
      L.push_back(make_layer(pre + ".lff", LayerKind::Conv,
                             pointwise_spec(T + c.drdb_layers * c.drdb_growth, T, true), 2, 1,
                             WeightInit::Zero));
    }
  }

  L.push_back(make_layer("gff", LayerKind::Conv, pointwise_spec(c.num_blocks * T, T, true), 2, 1,
                         WeightInit::Zero));

  if (tconv) {
    L.push_back(make_layer("up.tconv", LayerKind::ConvTranspose, tconv_spec(T, C, 4, 1, true), 2,
                           1, WeightInit::FanIn));
  } else {
    L.push_back(make_layer("up.pw", LayerKind::Conv, pointwise_spec(T, C, true), 2, 1,
                           WeightInit::FanIn));
  }

  ConvSpec h1;
  h1.in_channels = C;
  h1.out_channels = C;
  h1.kernel = 3;
  h1.padding = 1;
  L.push_back(make_layer("head.conv1", LayerKind::Conv, h1, 1, 1, WeightInit::FanIn));
  ConvSpec h2;
  h2.in_channels = C;
  h2.out_channels = 3;
  h2.kernel = 3;
  h2.padding = 1;
  L.push_back(make_layer("head.conv2", LayerKind::Conv, h2, 1, 1, WeightInit::FanIn));
  return L;
}

int64_t ParamStore::total_count() const {
  int64_t total = 0;
  for (const auto& [name, t] : tensors) total += t.numel();
  return total;
}

ParamStore init_params(const ModelConfig& config) {
  ParamStore store;
  for (const LayerSpec& l : model_layers(config)) {
    Tensor w(l.conv.weight_shape());
    switch (l.init) {
      case WeightInit::FanIn: {
        detail::SplitMix rng(config.seed ^ detail::fnv1a(l.name));
        const double bound =
            1.0 / std::sqrt(static_cast<double>((l.conv.in_channels / l.conv.groups) *
                                                l.conv.kernel * l.conv.kernel));
        for (auto& v : w.data) v = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
      case WeightInit::Zero:
        break;
      case WeightInit::NearestNeighborUp: {
        // duplication stencil: each input value copied to its k x k block
        const int64_t c = std::min<int64_t>(w.shape.n, w.shape.c);
        for (int64_t i = 0; i < c; ++i) {
          for (int64_t kh = 0; kh < w.shape.h; ++kh) {
            for (int64_t kw = 0; kw < w.shape.w; ++kw) w.at(i, i, kh, kw) = 1.0f;
          }
        }
        break;
      }
    }
    store.tensors.emplace(l.name + ".w", std::move(w));
    if (l.conv.has_bias) {
      const int bc = l.kind == LayerKind::ConvTranspose ? l.conv.in_channels
                                                        : l.conv.out_channels;
      store.tensors.emplace(l.name + ".b", Tensor(Shape4{1, bc, 1, 1}));
    }
  }
  return store;
}

template <typename T>
ParamVars<T> params_as_constants(const ParamStore& store) {
  ParamVars<T> out;
  for (const auto& [name, tensor] : store.tensors) {
    out.emplace(name, ad::constant(tensor.template cast<T>()));
  }
  return out;
}

template <typename T>
ParamVars<T> params_as_leaves(ad::Tape<T>& tape, const ParamStore& store) {
  ParamVars<T> out;
  for (const auto& [name, tensor] : store.tensors) {
    out.emplace(name, tape.leaf(tensor.template cast<T>(), name));
  }
  return out;
}

namespace {

template <typename T>
struct Net {
  const ModelConfig& cfg;
  const ParamVars<T>& params;
  std::map<std::string, LayerSpec> layers;

  Net(const ModelConfig& c, const ParamVars<T>& p) : cfg(c), params(p) {
    for (LayerSpec& l : model_layers(c)) layers.emplace(l.name, std::move(l));
  }

  const LayerSpec& layer(const std::string& name) const {
    auto it = layers.find(name);
    if (it == layers.end()) {
      throw std::invalid_argument("model: unknown layer \"" + name + "\"");
    }
    return it->second;
  }
  const ad::Var<T>& param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) {
      throw std::invalid_argument("model: missing parameter \"" + name + "\"");
    }
    return it->second;
  }
  const ad::Var<T>* param_opt(const std::string& name) const {
    auto it = params.find(name);
    return it == params.end() ? nullptr : &it->second;
  }

  ad::Var<T> run(const std::string& name, const ad::Var<T>& x) const {
    const LayerSpec& l = layer(name);
    const ad::Var<T>* b = param_opt(name + ".b");
    if (l.kind == LayerKind::ConvTranspose) {
      return ad::conv_transpose2d(x, l.conv, param(name + ".w"), b);
    }
    return ad::conv2d(x, l.conv, param(name + ".w"), b);
  }

  ad::Var<T> ds(const std::string& base, const ad::Var<T>& x) const {
    return run(base + ".pw", run(base + ".dw", x));
  }

  // Attention/alignment predictors pad by reflection so constant feature maps
  // stay constant up to the borders (which makes the half-resolution mode
  // exactly agree with the full one on constants).
  ad::Var<T> ds_reflect(const std::string& base, const ad::Var<T>& x) const {
    const LayerSpec& l = layer(base + ".dw");
    const int64_t pad = l.conv.padding;
    ConvSpec spec = l.conv;
    spec.padding = 0;
    ad::Var<T> padded = ad::pad_reflect(x, pad, pad, pad, pad);
    ad::Var<T> dw = ad::conv2d(padded, spec, param(base + ".dw.w"), param_opt(base + ".dw.b"));
    return run(base + ".pw", dw);
  }

  ad::Var<T> act(const ad::Var<T>& x) const { return ad::leaky_relu(x, static_cast<T>(0.1)); }

  // upsample a predictor output back to (h, w) in half mode
  ad::Var<T> up_to(const std::string& name, const ad::Var<T>& x, int64_t h, int64_t w) const {
    if (cfg.upsample == UpsampleKind::TransposedConv) {
      ad::Var<T> u = run(name, x);
      if (u.shape().h != h || u.shape().w != w) u = ad::crop(u, 0, 0, h, w);
      return u;
    }
    return ad::bilinear_resize(x, h, w);
  }
};

template <typename T>
FramePyramid<T> msenc_impl(const Net<T>& net, const ad::Var<T>& input, int frame) {
  if (input.shape().c != 6) {
    throw std::invalid_argument("msenc: expected 6-channel input, got " + input.shape().str());
  }
  if (input.shape().h % 2 != 0 || input.shape().w % 2 != 0) {
    throw std::invalid_argument("msenc: spatial extents must be even, got " +
                                input.shape().str());
  }
  const std::string pre = enc_prefix(net.cfg, frame);
  ad::Var<T> x0 = net.act(net.run(pre + ".first", input));
  ad::Var<T> high = net.act(net.ds(pre + ".high", x0));
  ad::Var<T> low = net.act(net.ds(pre + ".low", high));
  return {high, low};
}

template <typename T>
ad::Var<T> attention_impl(const Net<T>& net, const ad::Var<T>& f_i, const ad::Var<T>& f_ref,
                          const std::string& prefix) {
  if (!(f_i.shape() == f_ref.shape())) {
    throw std::invalid_argument("attention: feature shapes " + f_i.shape().str() + " and " +
                                f_ref.shape().str() + " differ");
  }
  const int64_t h = f_i.shape().h;
  const int64_t w = f_i.shape().w;
  ad::Var<T> pin = ad::concat_channels<T>({f_i, f_ref});
  const bool half = net.cfg.align_resolution == AlignRes::Half;
  if (half) pin = ad::bilinear_resize(pin, (h + 1) / 2, (w + 1) / 2);
  ad::Var<T> logits = net.ds_reflect(prefix, pin);
  if (half) logits = net.up_to(prefix + ".up", logits, h, w);
  return ad::mul(ad::sigmoid(logits), f_i);
}

template <typename T>
ad::Var<T> align_impl(const Net<T>& net, const ad::Var<T>& f_i, const ad::Var<T>& f_ref,
                      const std::string& prefix) {
  if (!(f_i.shape() == f_ref.shape())) {
    throw std::invalid_argument("align: feature shapes " + f_i.shape().str() + " and " +
                                f_ref.shape().str() + " differ");
  }
  const int64_t h = f_i.shape().h;
  const int64_t w = f_i.shape().w;
  const int64_t c = f_i.shape().c;
  ad::Var<T> pin = ad::concat_channels<T>({f_i, f_ref});
  const bool half = net.cfg.align_resolution == AlignRes::Half;
  if (half) pin = ad::bilinear_resize(pin, (h + 1) / 2, (w + 1) / 2);
  ad::Var<T> h1 = net.act(net.ds_reflect(prefix + ".l1", pin));
  ad::Var<T> h2 = net.act(net.ds_reflect(prefix + ".l2", h1));
  ad::Var<T> sb = net.ds_reflect(prefix + ".l3", h2);
  if (half) sb = net.up_to(prefix + ".up", sb, h, w);
  ad::Var<T> scale = ad::slice_channels(sb, 0, c);
  ad::Var<T> bias = ad::slice_channels(sb, c, c);
  return ad::add(ad::mul(ad::add_scalar(scale, T(1)), f_i), bias);
}

template <typename T>
ad::Var<T> pdub_impl(const Net<T>& net, const ad::Var<T>& x, const std::string& pre) {
  if (x.shape().h % 4 != 0 || x.shape().w % 4 != 0) {
    throw std::invalid_argument("pdub: spatial extents must be divisible by 4, got " +
                                x.shape().str());
  }
  ad::Var<T> e1 = net.act(net.ds(pre + ".e1", x));
  ad::Var<T> d1 = net.act(net.ds(pre + ".down1", e1));
  ad::Var<T> e2 = net.act(net.ds(pre + ".e2", d1));
  ad::Var<T> d2 = net.act(net.ds(pre + ".down2", e2));
  ad::Var<T> e3 = net.act(net.ds(pre + ".e3", d2));
  ad::Var<T> u2 = net.up_to(pre + ".up2", e3, e2.shape().h, e2.shape().w);
  ad::Var<T> m2 = net.act(net.run(pre + ".m2", ad::concat_channels<T>({u2, e2})));
  ad::Var<T> u1 = net.up_to(pre + ".up1", m2, e1.shape().h, e1.shape().w);
  ad::Var<T> m1 = net.act(net.run(pre + ".m1", ad::concat_channels<T>({u1, e1})));
  return ad::add(x, net.run(pre + ".out", m1));
}

template <typename T>
ad::Var<T> drdb_impl(const Net<T>& net, const ad::Var<T>& x, const std::string& pre) {
  ad::Var<T> feats = x;
  for (int j = 0; j < net.cfg.drdb_layers; ++j) {
    ad::Var<T> d = net.act(net.ds(pre + ".dense" + std::to_string(j), feats));
    feats = ad::concat_channels<T>({feats, d});
  }
  return ad::add(x, net.run(pre + ".lff", feats));
}

}  // namespace

template <typename T>
FramePyramid<T> msenc_forward(const ad::Var<T>& input, const ModelConfig& config,
                              const ParamVars<T>& params, int frame) {
  Net<T> net(config, params);
  return msenc_impl(net, input, frame);
}

template <typename T>
ad::Var<T> attention_forward(const ad::Var<T>& f_i, const ad::Var<T>& f_ref,
                             const ModelConfig& config, const ParamVars<T>& params,
                             const std::string& prefix) {
  Net<T> net(config, params);
  return attention_impl(net, f_i, f_ref, prefix);
}

template <typename T>
ad::Var<T> align_forward(const ad::Var<T>& f_i, const ad::Var<T>& f_ref,
                         const ModelConfig& config, const ParamVars<T>& params,
                         const std::string& prefix) {
  Net<T> net(config, params);
  return align_impl(net, f_i, f_ref, prefix);
}

template <typename T>
ad::Var<T> pdub_forward(const ad::Var<T>& x, const ModelConfig& config,
                        const ParamVars<T>& params, const std::string& prefix) {
  Net<T> net(config, params);
  return pdub_impl(net, x, prefix);
}

template <typename T>
ad::Var<T> drdb_forward(const ad::Var<T>& x, const ModelConfig& config,
                        const ParamVars<T>& params, const std::string& prefix) {
  Net<T> net(config, params);
  return drdb_impl(net, x, prefix);
}

template <typename T>
ad::Var<T> model_forward(const std::array<ad::Var<T>, 3>& inputs, const ModelConfig& config,
                         const ParamVars<T>& params) {
  Net<T> net(config, params);
  const Shape4 s = inputs[0].shape();
  for (const auto& in : inputs) {
    if (!(in.shape() == s)) {
      throw std::invalid_argument("model: frame shapes differ, " + in.shape().str() + " vs " +
                                  s.str());
    }
  }
  if (s.c != 6) throw std::invalid_argument("model: expected 6-channel inputs, got " + s.str());
  if (s.h % 4 != 0 || s.w % 4 != 0) {
    throw std::invalid_argument(
        "model: spatial extents must be divisible by 4 (pad upstream), got " + s.str());
  }

  std::array<FramePyramid<T>, 3> enc;
  for (int f = 1; f <= 3; ++f) enc[f - 1] = msenc_impl(net, inputs[f - 1], f);

  // Non-reference frames are attended then aligned against the reference on
  // both scales; the reference passes through untouched.
  std::array<ad::Var<T>, 3> high = {enc[0].high, enc[1].high, enc[2].high};
  std::array<ad::Var<T>, 3> low = {enc[0].low, enc[1].low, enc[2].low};
  for (int f : {1, 3}) {
    const int i = f - 1;
    ad::Var<T> hm = attention_impl(net, high[i], enc[1].high, att_prefix(config, f, true));
    high[i] = align_impl(net, hm, enc[1].high, align_prefix(config, f, true));
    ad::Var<T> lm = attention_impl(net, low[i], enc[1].low, att_prefix(config, f, false));
    low[i] = align_impl(net, lm, enc[1].low, align_prefix(config, f, false));
  }

  // Reduce the high branch to half resolution and stack with the low branch.
  std::array<ad::Var<T>, 3> fused;
  for (int f = 1; f <= 3; ++f) {
    const int i = f - 1;
    ad::Var<T> hr = net.act(net.ds(hired_prefix(config, f), high[i]));
    fused[i] = ad::concat_channels<T>({hr, low[i]});
  }

  ad::Var<T> merged;
  if (config.weight_sharing) {
    merged = net.act(ad::add(ad::add(net.ds("merge.ref", fused[1]), net.ds("merge.nr", fused[0])),
                             net.ds("merge.nr", fused[2])));
  } else {
    merged = net.act(net.ds("merge", ad::concat_channels<T>({fused[0], fused[1], fused[2]})));
  }

  std::vector<ad::Var<T>> block_outs;
  ad::Var<T> cur = merged;
  for (int b = 0; b < config.num_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b);
    cur = config.block_kind == BlockKind::Pdub ? pdub_impl(net, cur, pre)
                                               : drdb_impl(net, cur, pre);
    block_outs.push_back(cur);
  }

  ad::Var<T> gff = net.run("gff", ad::concat_channels(block_outs));
  ad::Var<T> trunk = ad::add(gff, fused[1]);

  ad::Var<T> up;
  if (config.upsample == UpsampleKind::TransposedConv) {
    up = net.act(net.run("up.tconv", trunk));
  } else {
    up = ad::bilinear_resize(net.act(net.run("up.pw", trunk)), s.h, s.w);
  }

  ad::Var<T> skip = ad::add(up, enc[1].high);
  ad::Var<T> head = net.act(net.run("head.conv1", skip));
  return net.run("head.conv2", head);
}

ad::GradCheckReport model_grad_check(const ModelConfig& config, int64_t h, int64_t w,
                                     double eps, uint64_t seed) {
  ParamStore store = init_params(config);
  detail::SplitMix noise(seed ^ 0x3f84d5b5d7c1a0e9ULL);
  std::vector<std::string> names;
  std::vector<Tensor64> values;
  for (const auto& [name, tensor] : store.tensors) {
    Tensor64 v = tensor.cast<double>();
    for (auto& x : v.data) x += noise.uniform(-0.05, 0.05);
    names.push_back(name);
    values.push_back(std::move(v));
  }

  detail::SplitMix input_rng(seed ^ 0xa1b2c3d4e5f60718ULL);
  std::array<Tensor64, 3> frames;
  for (auto& f : frames) {
    f = Tensor64(Shape4{1, 6, h, w});
    for (auto& x : f.data) x = input_rng.uniform(0.0, 1.0);
  }
  Tensor64 projection(Shape4{1, 3, h, w});
  for (auto& x : projection.data) x = input_rng.uniform(-1.0, 1.0);

  ad::RecordedFn<double> fn = [&](ad::Tape<double>&,
                                  const std::vector<ad::Var<double>>& leaves) {
    ParamVars<double> vars;
    for (size_t i = 0; i < names.size(); ++i) vars.emplace(names[i], leaves[i]);
    std::array<ad::Var<double>, 3> inputs = {ad::constant(frames[0]), ad::constant(frames[1]),
                                             ad::constant(frames[2])};
    ad::Var<double> out = model_forward<double>(inputs, config, vars);
    return ad::mean(ad::mul(out, ad::constant(projection)));
  };
  return ad::grad_check(fn, values, eps);
}

#define EAPNET_INSTANTIATE_MODEL(T)                                                          \
  template ParamVars<T> params_as_constants<T>(const ParamStore&);                           \
  template ParamVars<T> params_as_leaves<T>(ad::Tape<T>&, const ParamStore&);                \
  template FramePyramid<T> msenc_forward<T>(const ad::Var<T>&, const ModelConfig&,           \
                                            const ParamVars<T>&, int);                       \
  template ad::Var<T> attention_forward<T>(const ad::Var<T>&, const ad::Var<T>&,             \
                                           const ModelConfig&, const ParamVars<T>&,          \
                                           const std::string&);                              \
  template ad::Var<T> align_forward<T>(const ad::Var<T>&, const ad::Var<T>&,                 \
                                       const ModelConfig&, const ParamVars<T>&,              \
                                       const std::string&);                                  \
  template ad::Var<T> pdub_forward<T>(const ad::Var<T>&, const ModelConfig&,                 \
                                      const ParamVars<T>&, const std::string&);              \
  template ad::Var<T> drdb_forward<T>(const ad::Var<T>&, const ModelConfig&,                 \
                                      const ParamVars<T>&, const std::string&);              \
  template ad::Var<T> model_forward<T>(const std::array<ad::Var<T>, 3>&, const ModelConfig&, \
                                       const ParamVars<T>&);

EAPNET_INSTANTIATE_MODEL(float)
EAPNET_INSTANTIATE_MODEL(double)

#undef EAPNET_INSTANTIATE_MODEL

}  // namespace eapnet
