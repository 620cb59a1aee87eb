#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <vector>

#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"
#include "seal/evalsuite/metrics.hpp"

namespace seal::evalsuite {

struct PcaProjection {
  Eigen::RowVectorXd mean;
  Eigen::MatrixXd components;      // [d x c], orthonormal columns
  Eigen::VectorXd explained_var;   // eigenvalues, descending
};

// PCA via eigendecomposition of the covariance. Deterministic sign: the
// largest-magnitude loading of each component is positive (first index on
// magnitude ties).
inline PcaProjection pca_fit(const Eigen::MatrixXd& x, int n_components) {
  const auto n = x.rows();
  const auto d = x.cols();
  if (n_components < 1 || n_components > std::min(n, d))
    throw DataError("pca_fit: n_components outside [1, min(N, d)]");
  PcaProjection proj;
  proj.mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - proj.mean;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = centered.transpose() * centered / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success)
    throw NumericError("pca_fit: eigendecomposition failed");

  proj.components.resize(d, n_components);
  proj.explained_var.resize(n_components);
  for (int c = 0; c < n_components; ++c) {
    const auto src = d - 1 - c;  // solver returns ascending eigenvalues
    Eigen::VectorXd v = solver.eigenvectors().col(src);
    Eigen::Index max_idx = 0;
    v.cwiseAbs().maxCoeff(&max_idx);
    if (v(max_idx) < 0.0) v = -v;
    proj.components.col(c) = v;
    proj.explained_var(c) = solver.eigenvalues()(src);
  }
  return proj;
}

inline Eigen::MatrixXd pca_transform(const Eigen::MatrixXd& x,
                                     const PcaProjection& proj) {
  if (x.cols() != proj.components.rows())
    throw DataError("pca_transform: width mismatch");
  return (x.rowwise() - proj.mean) * proj.components;
}

struct RidgeWeights {
  Eigen::MatrixXd coef;       // [c x G]
  Eigen::RowVectorXd intercept;  // [1 x G]
};

// Closed-form ridge with an unpenalized intercept via column augmentation:
// (Z'Z + alpha*I~)^{-1} Z'Y with the intercept row of I~ zeroed.
inline RidgeWeights ridge_fit(const Eigen::MatrixXd& z,
                              const Eigen::MatrixXd& y, double alpha) {
  if (z.rows() != y.rows()) throw DataError("ridge_fit: row mismatch");
  if (alpha < 0.0) throw DataError("ridge_fit: alpha must be >= 0");
  const auto n = z.rows();
  const auto c = z.cols();
  Eigen::MatrixXd zt(n, c + 1);
  zt.leftCols(c) = z;
  zt.col(c).setOnes();

  if (alpha == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(zt);
    if (qr.rank() < c + 1)
      throw NumericError(
          "ridge_fit: singular system at alpha=0 (rank-deficient design)");
    Eigen::MatrixXd w = qr.solve(y);
    return RidgeWeights{w.topRows(c), w.row(c)};
  }

  Eigen::MatrixXd gram = zt.transpose() * zt;
  for (Eigen::Index i = 0; i < c; ++i) gram(i, i) += alpha;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
  if (ldlt.info() != Eigen::Success)
    throw NumericError("ridge_fit: factorization failed");
  Eigen::MatrixXd w = ldlt.solve(zt.transpose() * y);
  return RidgeWeights{w.topRows(c), w.row(c)};
}

inline Eigen::MatrixXd ridge_predict(const Eigen::MatrixXd& z,
                                     const RidgeWeights& weights) {
  if (z.cols() != weights.coef.rows())
    throw DataError("ridge_predict: width mismatch");
  return (z * weights.coef).rowwise() + weights.intercept;
}

struct ProbeResult {
  Eigen::VectorXd pcc_mean, pcc_sd;
  Eigen::VectorXd mse_mean, mse_sd;
  Eigen::VectorXd spearman_mean, spearman_sd;
  std::vector<int> fold_of;  // per spot
  double summary_pcc = 0.0, summary_pcc_sd = 0.0;
  double summary_mse = 0.0, summary_spearman = 0.0;
  long long degenerate_genes = 0;
};

// K-fold linear probe: seeded shuffle into folds; per fold fit PCA (plus
// per-component z-scoring) and ridge on the train part, score held-out
// spots; per-gene metrics are averaged over folds.
inline ProbeResult kfold_probe(const Eigen::MatrixXd& embeddings,
                               const Eigen::MatrixXd& targets, int k,
                               int n_components, double alpha,
                               std::uint64_t seed) {
  const auto n = embeddings.rows();
  const auto genes = targets.cols();
  if (targets.rows() != n) throw DataError("kfold_probe: row mismatch");
  if (k < 2) throw DataError("kfold_probe: k must be >= 2");
  if (k > n) throw DataError("kfold_probe: k exceeds spot count");

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);

  ProbeResult result;
  result.fold_of.assign(static_cast<std::size_t>(n), 0);
  for (std::size_t i = 0; i < order.size(); ++i)
    result.fold_of[static_cast<std::size_t>(order[i])] =
        static_cast<int>(i % static_cast<std::size_t>(k));

  Eigen::MatrixXd pcc(genes, k), mse(genes, k), spear(genes, k);
  for (int fold = 0; fold < k; ++fold) {
    std::vector<Eigen::Index> train_idx, test_idx;
    for (Eigen::Index i = 0; i < n; ++i)
      (result.fold_of[static_cast<std::size_t>(i)] == fold ? test_idx
                                                           : train_idx)
          .push_back(i);
    auto take = [](const Eigen::MatrixXd& m,
                   const std::vector<Eigen::Index>& idx) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
      for (std::size_t i = 0; i < idx.size(); ++i)
        out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
      return out;
    };
    const Eigen::MatrixXd xtr = take(embeddings, train_idx);
    const Eigen::MatrixXd xte = take(embeddings, test_idx);
    const Eigen::MatrixXd ytr = take(targets, train_idx);
    const Eigen::MatrixXd yte = take(targets, test_idx);

    int c = n_components;
    const int c_max =
        static_cast<int>(std::min(xtr.rows(), xtr.cols()));
    if (c > c_max) {
      std::cerr << "[probe] clamping n_components " << c << " -> " << c_max
                << " (train fold is " << xtr.rows() << "x" << xtr.cols()
                << ")\n";
      c = c_max;
    }
    const PcaProjection proj = pca_fit(xtr, c);
    Eigen::MatrixXd ztr = pca_transform(xtr, proj);
    Eigen::MatrixXd zte = pca_transform(xte, proj);
    // z-score components on train statistics
    const Eigen::RowVectorXd zmean = ztr.colwise().mean();
    Eigen::RowVectorXd zsd =
        ((ztr.rowwise() - zmean).array().square().colwise().sum() /
         std::max<double>(1.0, static_cast<double>(ztr.rows() - 1)))
            .sqrt();
    for (Eigen::Index i = 0; i < zsd.size(); ++i)
      if (zsd(i) <= 0.0) zsd(i) = 1.0;
    ztr = (ztr.rowwise() - zmean).array().rowwise() / zsd.array();
    zte = (zte.rowwise() - zmean).array().rowwise() / zsd.array();

    const RidgeWeights w = ridge_fit(ztr, ytr, alpha);
    const Eigen::MatrixXd pred = ridge_predict(zte, w);
    for (Eigen::Index g = 0; g < genes; ++g) {
      bool degenerate = false;
      pcc(g, fold) = metric_pcc(pred.col(g), yte.col(g), &degenerate);
      if (degenerate) ++result.degenerate_genes;
      mse(g, fold) = metric_mse(pred.col(g), yte.col(g));
      spear(g, fold) = metric_spearman(pred.col(g), yte.col(g));
    }
  }

  auto fold_stats = [&](const Eigen::MatrixXd& m, Eigen::VectorXd& mean,
                        Eigen::VectorXd& sd) {
    mean = m.rowwise().mean();
    sd.resize(m.rows());
    for (Eigen::Index g = 0; g < m.rows(); ++g) {
      const double mu = mean(g);
      sd(g) = std::sqrt((m.row(g).array() - mu).square().sum() /
                        std::max<double>(1.0, static_cast<double>(k - 1)));
    }
  };
  fold_stats(pcc, result.pcc_mean, result.pcc_sd);
  fold_stats(mse, result.mse_mean, result.mse_sd);
  fold_stats(spear, result.spearman_mean, result.spearman_sd);
  result.summary_pcc = result.pcc_mean.mean();
  result.summary_mse = result.mse_mean.mean();
  result.summary_spearman = result.spearman_mean.mean();
  const double sp = result.summary_pcc;
  result.summary_pcc_sd = std::sqrt(
      (result.pcc_mean.array() - sp).square().sum() /
      std::max<double>(1.0, static_cast<double>(genes - 1)));
  return result;
}

}  // namespace seal::evalsuite
