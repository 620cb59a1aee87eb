#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "seal/core/errors.hpp"

namespace seal::evalsuite {

// Pearson correlation; zero-variance input is defined as 0 with the
// degenerate flag raised.
inline double metric_pcc(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                         bool* degenerate = nullptr) {
  if (a.size() != b.size() || a.size() == 0)
    throw DataError("metric_pcc: length mismatch or empty input");
  if (degenerate) *degenerate = false;
  const Eigen::ArrayXd ac = a.array() - a.mean();
  const Eigen::ArrayXd bc = b.array() - b.mean();
  const double va = ac.square().sum();
  const double vb = bc.square().sum();
  if (va <= 0.0 || vb <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return (ac * bc).sum() / std::sqrt(va * vb);
}

inline double metric_mse(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size() || a.size() == 0)
    throw DataError("metric_mse: length mismatch or empty input");
  return (a - b).array().square().mean();
}

// Average ranks with ties sharing the mean rank.
inline Eigen::VectorXd average_ranks(const Eigen::VectorXd& v) {
  const auto n = v.size();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index a, Eigen::Index b) { return v(a) < v(b); });
  Eigen::VectorXd ranks(n);
  Eigen::Index i = 0;
  while (i < n) {
    Eigen::Index j = i;
    while (j + 1 < n && v(order[static_cast<std::size_t>(j + 1)]) ==
                            v(order[static_cast<std::size_t>(i)]))
      ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (Eigen::Index k = i; k <= j; ++k)
      ranks(order[static_cast<std::size_t>(k)]) = avg;
    i = j + 1;
  }
  return ranks;
}

inline double metric_spearman(const Eigen::VectorXd& a,
                              const Eigen::VectorXd& b,
                              bool* degenerate = nullptr) {
  if (a.size() != b.size() || a.size() == 0)
    throw DataError("metric_spearman: length mismatch or empty input");
  return metric_pcc(average_ranks(a), average_ranks(b), degenerate);
}

// Mann-Whitney AUC with ties counting one half.
inline double metric_auc(const Eigen::VectorXd& scores,
                         const std::vector<int>& labels) {
  if (static_cast<Eigen::Index>(labels.size()) != scores.size())
    throw DataError("metric_auc: label count mismatch");
  Eigen::Index n_pos = 0, n_neg = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("metric_auc: labels must be 0/1");
    y == 1 ? ++n_pos : ++n_neg;
  }
  if (n_pos == 0 || n_neg == 0)
    throw DataError("metric_auc: need both classes");
  const Eigen::VectorXd ranks = average_ranks(scores);
  double rank_sum_pos = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (labels[static_cast<std::size_t>(i)] == 1) rank_sum_pos += ranks(i);
  const double u = rank_sum_pos -
                   static_cast<double>(n_pos) *
                       (static_cast<double>(n_pos) + 1.0) / 2.0;
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace seal::evalsuite
