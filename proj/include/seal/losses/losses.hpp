#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "seal/autodiff/nn.hpp"
#include "seal/autodiff/tape.hpp"
#include "seal/core/errors.hpp"

namespace seal::losses {

using ad::Mat;
using ad::Tape;
using ad::Var;

inline constexpr double kCrossCorrEps = 1e-8;

struct CorrelationMatrix {
  Mat C;
};

struct LossWeights {
  // Stage I reconstruction mix.
  double lambda_inv = 1.0;
  double lambda_red = 5e-3;
  double lambda_mse = 1.0;
  // Stage II composite.
  double lambda_contrast = 1.0;
  double lambda_rec_img = 1.0;
  double lambda_rec_gene = 1.0;
  double lambda_da = 0.001;
  double tau = 0.05;

  void validate() const {
    if (lambda_inv < 0 || lambda_red < 0 || lambda_mse < 0 ||
        lambda_contrast < 0 || lambda_rec_img < 0 || lambda_rec_gene < 0 ||
        lambda_da < 0)
      throw DataError("LossWeights: weights must be non-negative");
    if (tau <= 0) throw DataError("LossWeights: tau must be positive");
  }
};

// --- mean squared error ---

inline double mse_loss(const Mat& x, const Mat& y) {
  if (x.rows() != y.rows() || x.cols() != y.cols())
    throw DataError("mse_loss: shape mismatch");
  return (x - y).array().square().mean();
}

inline Var mse_loss_t(Tape& t, Var x, Var y) {
  return t.mean_all(t.square(t.sub(x, y)));
}

// --- uncentered batch cross-correlation (Eq. form C_ij over column norms) ---

inline CorrelationMatrix cross_correlation(const Mat& x, const Mat& y,
                                           double eps = kCrossCorrEps) {
  if (x.rows() != y.rows()) throw DataError("cross_correlation: batch mismatch");
  if (x.rows() < 1) throw DataError("cross_correlation: empty batch");
  if (eps <= 0) throw DataError("cross_correlation: eps must be positive");
  Mat xn = x, yn = y;
  for (Eigen::Index c = 0; c < xn.cols(); ++c)
    xn.col(c) /= std::max(x.col(c).norm(), eps);
  for (Eigen::Index c = 0; c < yn.cols(); ++c)
    yn.col(c) /= std::max(y.col(c).norm(), eps);
  return CorrelationMatrix{xn.transpose() * yn};
}

inline Var cross_correlation_t(Tape& t, Var x, Var y,
                               double eps = kCrossCorrEps) {
  return t.matmul(t.normalize_cols_eps(x, eps), t.normalize_cols_eps(y, eps),
                  /*ta=*/true, /*tb=*/false);
}

// --- Barlow-Twins-style invariance / redundancy terms ---

inline double invariance_loss(const CorrelationMatrix& corr) {
  return (1.0 - corr.C.diagonal().array()).square().sum();
}

inline Var invariance_loss_t(Tape& t, Var corr) {
  Var diag = t.take_diag(corr);
  return t.sum_all(t.square(t.add_scalar(t.scale(diag, -1.0), 1.0)));
}

inline double redundancy_loss(const CorrelationMatrix& corr) {
  return corr.C.array().square().sum() -
         corr.C.diagonal().array().square().sum();
}

inline Var redundancy_loss_t(Tape& t, Var corr) {
  Var all = t.sum_all(t.square(corr));
  Var diag = t.sum_all(t.square(t.take_diag(corr)));
  return t.sub(all, diag);
}

// --- composite reconstruction loss (invariance + redundancy + mse) ---

inline double reconstruction_loss(const Mat& x, const Mat& y,
                                  const LossWeights& w,
                                  double eps = kCrossCorrEps) {
  const CorrelationMatrix corr = cross_correlation(x, y, eps);
  return w.lambda_inv * invariance_loss(corr) +
         w.lambda_red * redundancy_loss(corr) + w.lambda_mse * mse_loss(x, y);
}

inline Var reconstruction_loss_t(Tape& t, Var x, Var y, const LossWeights& w,
                                 double eps = kCrossCorrEps) {
  Var corr = cross_correlation_t(t, x, y, eps);
  Var total = t.scale(invariance_loss_t(t, corr), w.lambda_inv);
  total = t.add(total, t.scale(redundancy_loss_t(t, corr), w.lambda_red));
  total = t.add(total, t.scale(mse_loss_t(t, x, y), w.lambda_mse));
  return total;
}

// --- symmetric InfoNCE over cosine similarities ---

inline Var info_nce_t(Tape& t, Var zp, Var zg, double tau) {
  if (tau <= 0) throw DataError("info_nce: tau must be positive");
  if (t.val(zp).rows() != t.val(zg).rows())
    throw DataError("info_nce: pair count mismatch");
  Var sims = t.scale(
      t.matmul(t.normalize_rows(zp), t.normalize_rows(zg), false, true),
      1.0 / tau);
  Var row_terms = t.take_diag(t.log_softmax_rows(sims));
  Var col_terms = t.take_diag(t.log_softmax_rows(t.transpose(sims)));
  return t.scale(t.mean_all(t.add(row_terms, col_terms)), -1.0);
}

inline double info_nce(const Mat& zp, const Mat& zg, double tau) {
  Tape t;
  return t.val(info_nce_t(t, t.input(zp), t.input(zg), tau))(0, 0);
}

// --- domain-adversarial head ---

// Two-layer perceptron over embeddings whose upstream gradient is reversed
// by the gradient reversal layer inserted at its input.
struct DomainHead {
  ad::Linear fc1;
  ad::Linear fc2;
  int n_domains = 1;
  double grl_lambda = 1.0;

  DomainHead() = default;
  DomainHead(Eigen::Index dim, int domains, Rng& rng, double lambda = 1.0)
      : fc1("domain_head.fc1", dim, dim, rng),
        fc2("domain_head.fc2", dim, domains, rng),
        n_domains(domains),
        grl_lambda(lambda) {}

  Var logits(Tape& t, Var z) { return fc2.forward(t, t.relu(fc1.forward(t, z))); }

  void collect(std::vector<ad::Param*>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

// Mean cross-entropy of the head over both modality batches. The caller is
// responsible for having routed both streams through grl().
inline Var domain_loss_t(Tape& t, DomainHead& head, Var zp_rev, Var zg_rev,
                         const std::vector<int>& domains) {
  std::vector<int> labels(domains);
  labels.insert(labels.end(), domains.begin(), domains.end());
  for (int d : labels)
    if (d < 0 || d >= head.n_domains)
      throw DataError("domain_loss: label " + std::to_string(d) +
                      " outside [0, " + std::to_string(head.n_domains) + ")");
  Var both = t.concat_rows({zp_rev, zg_rev});
  return t.cross_entropy_rows(head.logits(t, both), labels);
}

inline double domain_loss(DomainHead& head, const Mat& zp, const Mat& zg,
                          const std::vector<int>& domains) {
  Tape t;
  Var zp_rev = t.grl(t.input(zp), head.grl_lambda);
  Var zg_rev = t.grl(t.input(zg), head.grl_lambda);
  return t.val(domain_loss_t(t, head, zp_rev, zg_rev, domains))(0, 0);
}

// --- Stage II composite ---

struct Stage2Parts {
  double infonce = 0.0;
  double rec_img = 0.0;
  double rec_gene = 0.0;
  double da = 0.0;
};

struct Stage2Loss {
  double total = 0.0;
  std::map<std::string, double> breakdown;
};

inline Stage2Loss stage2_loss(const Stage2Parts& parts, const LossWeights& w) {
  Stage2Loss out;
  out.breakdown["infonce"] = parts.infonce;
  out.breakdown["rec_img"] = parts.rec_img;
  out.breakdown["rec_gene"] = parts.rec_gene;
  out.breakdown["da"] = parts.da;
  out.total = w.lambda_contrast * parts.infonce +
              w.lambda_rec_img * parts.rec_img +
              w.lambda_rec_gene * parts.rec_gene + w.lambda_da * parts.da;
  return out;
}

inline Var stage2_loss_t(Tape& t, Var infonce, Var rec_img, Var rec_gene,
                         Var da, const LossWeights& w) {
  Var total = t.scale(infonce, w.lambda_contrast);
  total = t.add(total, t.scale(rec_img, w.lambda_rec_img));
  total = t.add(total, t.scale(rec_gene, w.lambda_rec_gene));
  total = t.add(total, t.scale(da, w.lambda_da));
  return total;
}

}  // namespace seal::losses
