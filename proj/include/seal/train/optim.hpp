#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "seal/autodiff/tape.hpp"
#include "seal/core/errors.hpp"

namespace seal::train {

// lr(step) = lr0 * (1 + cos(pi * step / total)) / 2
inline double cosine_anneal(long long step, long long total_steps,
                            double lr0) {
  if (total_steps <= 0) throw DataError("cosine_anneal: total_steps <= 0");
  if (step < 0) step = 0;
  if (step > total_steps) step = total_steps;
  return lr0 * 0.5 *
         (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) /
                         static_cast<double>(total_steps)));
}

// Rescales all trainable gradients so their global L2 norm is at most
// max_norm. Returns the pre-clip norm.
inline double clip_global_norm(const std::vector<ad::Param*>& params,
                               double max_norm) {
  double sq = 0.0;
  for (ad::Param* p : params)
    if (p->trainable && p->grad.size() > 0) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (ad::Param* p : params)
      if (p->trainable && p->grad.size() > 0) p->grad *= scale;
  }
  return norm;
}

// AdamW with decoupled weight decay. Decay skips bias/norm-style params
// (decay == false); per-param lr_scale carries the layer decay.
class AdamW {
 public:
  explicit AdamW(std::vector<ad::Param*> params, double weight_decay = 0.0,
                 double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)),
        weight_decay_(weight_decay),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {}

  void zero_grad() {
    for (ad::Param* p : params_) p->zero_grad();
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (ad::Param* p : params_) {
      if (!p->trainable || p->grad.size() == 0) continue;
      if (p->m.size() == 0) {
        p->m = ad::Mat::Zero(p->value.rows(), p->value.cols());
        p->v = ad::Mat::Zero(p->value.rows(), p->value.cols());
      }
      p->m = beta1_ * p->m + (1.0 - beta1_) * p->grad;
      p->v = beta2_ * p->v +
             (1.0 - beta2_) * p->grad.cwiseProduct(p->grad);
      const double plr = lr * p->lr_scale;
      const ad::Mat update =
          (p->m / bc1).array() / ((p->v / bc2).array().sqrt() + eps_);
      if (weight_decay_ > 0.0 && p->decay)
        p->value -= plr * weight_decay_ * p->value;
      p->value -= plr * update.matrix();
    }
  }

  const std::vector<ad::Param*>& params() const { return params_; }

 private:
  std::vector<ad::Param*> params_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  long long t_ = 0;
};

}  // namespace seal::train
