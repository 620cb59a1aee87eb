#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"

namespace seal::evalsuite {

inline Eigen::VectorXd mean_pool(const Eigen::MatrixXd& bag) {
  if (bag.rows() == 0) throw DataError("mean_pool: empty bag");
  return bag.colwise().mean().transpose();
}

// Gated-attention MIL pooling parameters: a_k proportional to
// exp(w' (tanh(V h_k) .* sigmoid(U h_k))).
struct AttentionPool {
  Eigen::MatrixXd V;  // [L x d]
  Eigen::MatrixXd U;  // [L x d]
  Eigen::VectorXd w;  // [L]

  static AttentionPool seeded(Eigen::Index dim, Eigen::Index hidden,
                              std::uint64_t seed) {
    Rng rng(seed);
    AttentionPool pool;
    pool.V.resize(hidden, dim);
    pool.U.resize(hidden, dim);
    pool.w.resize(hidden);
    const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
    for (Eigen::Index r = 0; r < hidden; ++r) {
      for (Eigen::Index c = 0; c < dim; ++c) {
        pool.V(r, c) = rng.normal(0.0, sd);
        pool.U(r, c) = rng.normal(0.0, sd);
      }
      pool.w(r) = rng.normal(0.0, sd);
    }
    return pool;
  }
};

struct AbmilResult {
  Eigen::VectorXd pooled;  // [d]
  Eigen::VectorXd scores;  // [M], sums to 1
};

inline AbmilResult abmil_pool(const Eigen::MatrixXd& bag,
                              const AttentionPool& params) {
  const auto m = bag.rows();
  if (m == 0) throw DataError("abmil_pool: empty bag");
  if (params.V.cols() != bag.cols() || params.U.cols() != bag.cols() ||
      params.w.size() != params.V.rows() || params.U.rows() != params.V.rows())
    throw DataError("abmil_pool: parameter shape mismatch");

  Eigen::VectorXd logits(m);
  for (Eigen::Index k = 0; k < m; ++k) {
    const Eigen::VectorXd h = bag.row(k).transpose();
    const Eigen::ArrayXd gate_t = (params.V * h).array().tanh();
    const Eigen::ArrayXd gate_s =
        1.0 / (1.0 + (-(params.U * h).array()).exp());
    logits(k) = params.w.dot((gate_t * gate_s).matrix());
  }
  const double mx = logits.maxCoeff();
  Eigen::VectorXd scores = (logits.array() - mx).exp();
  scores /= scores.sum();

  AbmilResult out;
  out.scores = scores;
  out.pooled = bag.transpose() * scores;
  return out;
}

}  // namespace seal::evalsuite
