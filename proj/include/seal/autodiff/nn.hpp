#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "seal/autodiff/tape.hpp"
#include "seal/core/rng.hpp"

namespace seal::ad {

inline Mat randn_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                        double sd) {
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal(0.0, sd);
  return m;
}

// y = x W + b with activations as rows. W has shape [in x out].
struct Linear {
  Param weight;
  Param bias;

  Linear() = default;
  Linear(const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng)
      : weight(name + ".weight",
               randn_matrix(rng, in, out,
                            std::sqrt(2.0 / static_cast<double>(in + out)))),
        bias(name + ".bias", Mat::Zero(1, out), /*decay=*/false) {}

  Var forward(Tape& t, Var x) {
    return t.add_row_broadcast(t.matmul(x, t.param(weight)), t.param(bias));
  }

  Eigen::Index in_dim() const { return weight.value.rows(); }
  Eigen::Index out_dim() const { return weight.value.cols(); }

  void collect(std::vector<Param*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

struct LayerNorm {
  Param gamma;
  Param beta;
  double eps = 1e-6;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Eigen::Index dim)
      : gamma(name + ".gamma", Mat::Ones(1, dim), /*decay=*/false),
        beta(name + ".beta", Mat::Zero(1, dim), /*decay=*/false) {}

  Var forward(Tape& t, Var x) {
    return t.layer_norm(x, t.param(gamma), t.param(beta), eps);
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

struct BatchNorm {
  Param gamma;
  Param beta;
  BnStats stats;
  double momentum = 0.1;
  double eps = 1e-5;

  BatchNorm() = default;
  BatchNorm(const std::string& name, Eigen::Index dim)
      : gamma(name + ".gamma", Mat::Ones(1, dim), /*decay=*/false),
        beta(name + ".beta", Mat::Zero(1, dim), /*decay=*/false) {}

  Var forward(Tape& t, Var x, bool training) {
    return t.batch_norm(x, t.param(gamma), t.param(beta), stats, training,
                        momentum, eps);
  }

  void collect(std::vector<Param*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

}  // namespace seal::ad
