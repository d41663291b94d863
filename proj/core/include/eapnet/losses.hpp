#pragma once

#include "eapnet/autodiff.hpp"
#include "eapnet/tensor.hpp"

namespace eapnet {

struct LossConfig {
  double mu = 5000.0;
  double alpha = 0.5;
  double beta = 0.5;
  double normalization_percentile = 99.0;
  double psnr_peak = 1.0;
  double psnr_cap_db = 100.0;
  // log(1 + mu*x) / (1 + mu) instead of / log(1 + mu); kept behind a flag for
  // fidelity experiments, off by default because it breaks T(1) = 1.
  bool linear_denominator = false;

  void validate() const;
};

// mu-law L1: both operands are divided by the ground-truth percentile,
// clamped to >= 0 and tonemapped, then compared by mean absolute difference.
// Rejects an all-zero ground truth (non-positive normalizer).
template <typename T>
T mu_law_l1(const TensorT<T>& pred, const TensorT<T>& gt, const LossConfig& cfg);
template <typename T>
T tanh_l1(const TensorT<T>& pred, const TensorT<T>& gt);
template <typename T>
T combined_loss(const TensorT<T>& pred, const TensorT<T>& gt, const LossConfig& cfg);

// Differentiable variants; the ground truth enters as a constant, so the
// percentile normalizer contributes no gradient.
template <typename T>
ad::Var<T> mu_law_l1(const ad::Var<T>& pred, const TensorT<T>& gt, const LossConfig& cfg);
template <typename T>
ad::Var<T> tanh_l1(const ad::Var<T>& pred, const TensorT<T>& gt);
template <typename T>
ad::Var<T> combined_loss(const ad::Var<T>& pred, const TensorT<T>& gt, const LossConfig& cfg);

// 10*log10(peak^2 / MSE), capped at cap_db when the error is exactly zero.
template <typename T>
double psnr(const TensorT<T>& pred, const TensorT<T>& gt, double peak, double cap_db = 100.0);
// PSNR after percentile normalization by the ground truth and mu-law
// tonemapping of both operands.
template <typename T>
double psnr_mu(const TensorT<T>& pred, const TensorT<T>& gt, const LossConfig& cfg);

}  // namespace eapnet
