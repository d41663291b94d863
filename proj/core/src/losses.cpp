#include "eapnet/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "eapnet/kernels.hpp"

namespace eapnet {

void LossConfig::validate() const {
  if (!(mu > 0.0)) throw std::invalid_argument("loss config: mu must be positive");
  if (alpha < 0.0 || beta < 0.0) {
    throw std::invalid_argument("loss config: alpha and beta must be non-negative");
  }
  if (!(normalization_percentile > 0.0 && normalization_percentile <= 100.0)) {
    throw std::invalid_argument("loss config: percentile must be in (0, 100]");
  }
}

namespace {

template <typename T>
T gt_normalizer(const TensorT<T>& gt, const LossConfig& cfg) {
  const T norm = percentile(gt, cfg.normalization_percentile);
  if (!(norm > T(0))) {
    throw std::invalid_argument(
        "mu_law_l1: ground-truth percentile normalizer must be positive");
  }
  return norm;
}

template <typename T>
TensorT<T> normalized_tonemap(const TensorT<T>& x, T inv_norm, const LossConfig& cfg) {
  const TensorT<T> scaled = clamp_min0(mul_scalar(x, inv_norm));
  return cfg.linear_denominator
             ? mu_tonemap_linear_denominator(scaled, static_cast<T>(cfg.mu))
             : mu_tonemap(scaled, static_cast<T>(cfg.mu));
}

}  // namespace

template <typename T>
ad::Var<T> mu_law_l1(const ad::Var<T>& pred, const TensorT<T>& gt, const LossConfig& cfg) {
  cfg.validate();
  if (!(pred.shape() == gt.shape)) {
    throw std::invalid_argument("mu_law_l1: shapes " + pred.shape().str() + " and " +
                                gt.shape.str() + " differ");
  }
  const T inv_norm = T(1) / gt_normalizer(gt, cfg);
  ad::Var<T> scaled = ad::clamp_min0(ad::mul_scalar(pred, inv_norm));
  ad::Var<T> toned = cfg.linear_denominator
                         ? ad::mu_tonemap_linear_denominator(scaled, static_cast<T>(cfg.mu))
                         : ad::mu_tonemap(scaled, static_cast<T>(cfg.mu));
  TensorT<T> gt_toned = normalized_tonemap(gt, inv_norm, cfg);
  return ad::mean(ad::abs(ad::sub(toned, ad::constant(std::move(gt_toned)))));
}

template <typename T>
ad::Var<T> tanh_l1(const ad::Var<T>& pred, const TensorT<T>& gt) {
  if (!(pred.shape() == gt.shape)) {
    throw std::invalid_argument("tanh_l1: shapes " + pred.shape().str() + " and " +
                                gt.shape.str() + " differ");
  }
  return ad::mean(ad::abs(ad::sub(ad::tanh(pred), ad::constant(eapnet::tanh(gt)))));
}

template <typename T>
ad::Var<T> combined_loss(const ad::Var<T>& pred, const TensorT<T>& gt, const LossConfig& cfg) {
  ad::Var<T> l = mu_law_l1(pred, gt, cfg);
  ad::Var<T> g = tanh_l1(pred, gt);
  return ad::add(ad::mul_scalar(l, static_cast<T>(cfg.alpha)),
                 ad::mul_scalar(g, static_cast<T>(cfg.beta)));
}

template <typename T>
T mu_law_l1(const TensorT<T>& pred, const TensorT<T>& gt, const LossConfig& cfg) {
  return mu_law_l1(ad::constant(pred), gt, cfg).val().data[0];
}

template <typename T>
T tanh_l1(const TensorT<T>& pred, const TensorT<T>& gt) {
  return tanh_l1(ad::constant(pred), gt).val().data[0];
}

template <typename T>
T combined_loss(const TensorT<T>& pred, const TensorT<T>& gt, const LossConfig& cfg) {
  return combined_loss(ad::constant(pred), gt, cfg).val().data[0];
}

template <typename T>
double psnr(const TensorT<T>& pred, const TensorT<T>& gt, double peak, double cap_db) {
  if (!(pred.shape == gt.shape)) {
    throw std::invalid_argument("psnr: shapes " + pred.shape.str() + " and " + gt.shape.str() +
                                " differ");
  }
  double mse = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(gt.data[i]);
    mse += d * d;
  }
  mse /= static_cast<double>(pred.numel());
  if (mse == 0.0) return cap_db;
  const double value = 10.0 * std::log10(peak * peak / mse);
  return std::min(value, cap_db);
}

template <typename T>
double psnr_mu(const TensorT<T>& pred, const TensorT<T>& gt, const LossConfig& cfg) {
  cfg.validate();
  if (!(pred.shape == gt.shape)) {
    throw std::invalid_argument("psnr_mu: shapes " + pred.shape.str() + " and " +
                                gt.shape.str() + " differ");
  }
  const T inv_norm = T(1) / gt_normalizer(gt, cfg);
  const TensorT<T> a = normalized_tonemap(pred, inv_norm, cfg);
  const TensorT<T> b = normalized_tonemap(gt, inv_norm, cfg);
  return psnr(a, b, cfg.psnr_peak, cfg.psnr_cap_db);
}

#define EAPNET_INSTANTIATE_LOSSES(T)                                                         \
  template T mu_law_l1<T>(const TensorT<T>&, const TensorT<T>&, const LossConfig&);          \
  template T tanh_l1<T>(const TensorT<T>&, const TensorT<T>&);                               \
  template T combined_loss<T>(const TensorT<T>&, const TensorT<T>&, const LossConfig&);      \
  template ad::Var<T> mu_law_l1<T>(const ad::Var<T>&, const TensorT<T>&, const LossConfig&); \
  template ad::Var<T> tanh_l1<T>(const ad::Var<T>&, const TensorT<T>&);                      \
  template ad::Var<T> combined_loss<T>(const ad::Var<T>&, const TensorT<T>&,                 \
                                       const LossConfig&);                                   \
  template double psnr<T>(const TensorT<T>&, const TensorT<T>&, double, double);             \
  template double psnr_mu<T>(const TensorT<T>&, const TensorT<T>&, const LossConfig&);

EAPNET_INSTANTIATE_LOSSES(float)
EAPNET_INSTANTIATE_LOSSES(double)

#undef EAPNET_INSTANTIATE_LOSSES

}  // namespace eapnet
