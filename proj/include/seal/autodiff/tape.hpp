#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"

namespace seal::ad {

using Mat = Eigen::MatrixXd;

// Named trainable array with gradient accumulator and AdamW moments.
// Frozen params keep grad empty: nothing ever accumulates into them.
struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat m;
  Mat v;
  bool trainable = true;
  bool decay = true;      // weight decay applies (off for biases/norm params)
  double lr_scale = 1.0;  // per-block layer decay multiplier

  Param() = default;
  Param(std::string n, Mat init, bool decay_flag = true)
      : name(std::move(n)), value(std::move(init)), decay(decay_flag) {}

  void ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols())
      grad = Mat::Zero(value.rows(), value.cols());
  }
  void zero_grad() {
    if (grad.size() > 0) grad.setZero();
  }
  void freeze() {
    trainable = false;
    grad.resize(0, 0);
    m.resize(0, 0);
    v.resize(0, 0);
  }
};

struct Var {
  int idx = -1;
  bool valid() const { return idx >= 0; }
};

// Per-column running statistics for batch normalization. Owned by the layer,
// updated during training forwards, serialized with the model.
struct BnStats {
  Eigen::VectorXd mean;
  Eigen::VectorXd var;
  bool initialized = false;
};

// Reverse-mode tape over dense matrices. Forward values are computed eagerly;
// backward closures run in reverse creation order.
class Tape {
 public:
  Var input(Mat value, bool needs_grad = false) {
    return push(std::move(value), needs_grad, {});
  }

  Var param(Param& p) {
    Param* ptr = &p;
    Var out = push(p.value, p.trainable, {});
    if (p.trainable) {
      node(out).back = [ptr](Tape& t, int self) {
        ptr->ensure_grad();
        ptr->grad += t.nodes_[self].grad;
      };
    }
    return out;
  }

  const Mat& val(Var v) const { return nodes_[v.idx].value; }
  const Mat& grad_of(Var v) const { return nodes_[v.idx].grad; }

  // --- arithmetic ---

  Var add(Var a, Var b) {
    check_same_shape(a, b, "add");
    Var out = push(val(a) + val(b), tracked(a) || tracked(b), {a, b});
    set_back(out, [a, b](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(a, g);
      t.accum(b, g);
    });
    return out;
  }

  Var sub(Var a, Var b) {
    check_same_shape(a, b, "sub");
    Var out = push(val(a) - val(b), tracked(a) || tracked(b), {a, b});
    set_back(out, [a, b](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(a, g);
      t.accum(b, -g);
    });
    return out;
  }

  Var mul(Var a, Var b) {
    check_same_shape(a, b, "mul");
    Var out =
        push(val(a).cwiseProduct(val(b)), tracked(a) || tracked(b), {a, b});
    set_back(out, [a, b](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(a, g.cwiseProduct(t.val(b)));
      t.accum(b, g.cwiseProduct(t.val(a)));
    });
    return out;
  }

  Var scale(Var a, double c) {
    Var out = push(val(a) * c, tracked(a), {a});
    set_back(out, [a, c](Tape& t, int self) {
      t.accum(a, t.nodes_[self].grad * c);
    });
    return out;
  }

  Var add_scalar(Var a, double c) {
    Var out = push(val(a).array() + c, tracked(a), {a});
    set_back(out,
             [a](Tape& t, int self) { t.accum(a, t.nodes_[self].grad); });
    return out;
  }

  // y = a / s where s is a tracked 1x1 scalar node.
  Var div_scalar_node(Var a, Var s) {
    if (val(s).rows() != 1 || val(s).cols() != 1)
      throw NumericError("div_scalar_node: divisor must be 1x1");
    const double sv = val(s)(0, 0);
    Var out = push(val(a) / sv, tracked(a) || tracked(s), {a, s});
    set_back(out, [a, s, sv](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(a, g / sv);
      Mat gs(1, 1);
      gs(0, 0) = -(g.cwiseProduct(t.val(a))).sum() / (sv * sv);
      t.accum(s, gs);
    });
    return out;
  }

  Var matmul(Var a, Var b, bool ta = false, bool tb = false) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    Mat value;
    if (!ta && !tb)
      value = A * B;
    else if (ta && !tb)
      value = A.transpose() * B;
    else if (!ta && tb)
      value = A * B.transpose();
    else
      value = A.transpose() * B.transpose();
    Var out = push(std::move(value), tracked(a) || tracked(b), {a, b});
    set_back(out, [a, b, ta, tb](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      const Mat& A = t.val(a);
      const Mat& B = t.val(b);
      if (!ta && !tb) {
        t.accum(a, g * B.transpose());
        t.accum(b, A.transpose() * g);
      } else if (ta && !tb) {
        t.accum(a, B * g.transpose());
        t.accum(b, A * g);
      } else if (!ta && tb) {
        t.accum(a, g * B);
        t.accum(b, g.transpose() * A);
      } else {
        t.accum(a, B.transpose() * g.transpose());
        t.accum(b, g.transpose() * A.transpose());
      }
    });
    return out;
  }

  // x [n x m] + row [1 x m], broadcast over rows.
  Var add_row_broadcast(Var x, Var row) {
    if (val(row).rows() != 1 || val(row).cols() != val(x).cols())
      throw NumericError("add_row_broadcast: shape mismatch");
    Mat value = val(x);
    value.rowwise() += val(row).row(0);
    Var out = push(std::move(value), tracked(x) || tracked(row), {x, row});
    set_back(out, [x, row](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(x, g);
      t.accum(row, g.colwise().sum());
    });
    return out;
  }

  // x [B*T x d] + pos [T x d], broadcast per group of T consecutive rows.
  Var add_group_broadcast(Var x, Var pos, int groups) {
    const int t_rows = static_cast<int>(val(pos).rows());
    if (val(x).rows() != static_cast<Eigen::Index>(groups) * t_rows ||
        val(x).cols() != val(pos).cols())
      throw NumericError("add_group_broadcast: shape mismatch");
    Mat value = val(x);
    for (int g = 0; g < groups; ++g)
      value.middleRows(g * t_rows, t_rows) += val(pos);
    Var out = push(std::move(value), tracked(x) || tracked(pos), {x, pos});
    set_back(out, [x, pos, groups, t_rows](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(x, g);
      Mat gp = Mat::Zero(t_rows, g.cols());
      for (int b = 0; b < groups; ++b) gp += g.middleRows(b * t_rows, t_rows);
      t.accum(pos, gp);
    });
    return out;
  }

  // Inserts `row` before each group of T rows: [B*T x d] -> [B*(T+1) x d].
  Var prepend_row_per_group(Var x, Var row, int groups) {
    const auto d = val(x).cols();
    const int t_in = static_cast<int>(val(x).rows()) / groups;
    Mat value(static_cast<Eigen::Index>(groups) * (t_in + 1), d);
    for (int b = 0; b < groups; ++b) {
      value.row(b * (t_in + 1)) = val(row).row(0);
      value.middleRows(b * (t_in + 1) + 1, t_in) =
          val(x).middleRows(b * t_in, t_in);
    }
    Var out = push(std::move(value), tracked(x) || tracked(row), {x, row});
    set_back(out, [x, row, groups, t_in](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      Mat gx(static_cast<Eigen::Index>(groups) * t_in, g.cols());
      Mat gr = Mat::Zero(1, g.cols());
      for (int b = 0; b < groups; ++b) {
        gr += g.row(b * (t_in + 1));
        gx.middleRows(b * t_in, t_in) =
            g.middleRows(b * (t_in + 1) + 1, t_in);
      }
      t.accum(x, gx);
      t.accum(row, gr);
    });
    return out;
  }

  // --- elementwise nonlinearities ---

  Var relu(Var a) {
    Var out = push(val(a).cwiseMax(0.0), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      const Mat mask = (t.val(a).array() > 0.0).cast<double>();
      t.accum(a, t.nodes_[self].grad.cwiseProduct(mask));
    });
    return out;
  }

  Var gelu(Var a) {
    const Mat& x = val(a);
    Mat value = x.unaryExpr([](double v) {
      return 0.5 * v * (1.0 + std::erf(v / std::numbers::sqrt2));
    });
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      const Mat deriv = t.val(a).unaryExpr([](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v / std::numbers::sqrt2));
        const double pdf =
            std::exp(-0.5 * v * v) / std::sqrt(2.0 * std::numbers::pi);
        return cdf + v * pdf;
      });
      t.accum(a, t.nodes_[self].grad.cwiseProduct(deriv));
    });
    return out;
  }

  Var tanh_of(Var a) {
    Mat value = val(a).array().tanh();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, out](Tape& t, int self) {
      const Mat& y = t.val(out);
      t.accum(a, t.nodes_[self].grad.cwiseProduct(
                     (1.0 - y.array().square()).matrix()));
    });
    return out;
  }

  Var sigmoid(Var a) {
    Mat value = val(a).unaryExpr([](double v) {
      return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                      : std::exp(v) / (1.0 + std::exp(v));
    });
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, out](Tape& t, int self) {
      const Mat& y = t.val(out);
      t.accum(a, t.nodes_[self].grad.cwiseProduct(
                     y.cwiseProduct((1.0 - y.array()).matrix())));
    });
    return out;
  }

  Var softplus(Var a) {
    Mat value = val(a).unaryExpr([](double v) {
      return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
    });
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      const Mat deriv = t.val(a).unaryExpr([](double v) {
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
      });
      t.accum(a, t.nodes_[self].grad.cwiseProduct(deriv));
    });
    return out;
  }

  Var exp_of(Var a) {
    Mat value = val(a).array().exp();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, out](Tape& t, int self) {
      t.accum(a, t.nodes_[self].grad.cwiseProduct(t.val(out)));
    });
    return out;
  }

  Var square(Var a) {
    Var out = push(val(a).array().square(), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      t.accum(a, 2.0 * t.nodes_[self].grad.cwiseProduct(t.val(a)));
    });
    return out;
  }

  // log|x|; throws when any entry is within `guard` of zero.
  Var log_abs(Var a, double guard = 1e-12) {
    if ((val(a).array().abs() < guard).any())
      throw NumericError("log_abs: argument within " + std::to_string(guard) +
                         " of zero (singular flow)");
    Mat value = val(a).array().abs().log();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      t.accum(a, t.nodes_[self].grad.cwiseQuotient(t.val(a)));
    });
    return out;
  }

  // --- reductions / reshapes ---

  Var sum_all(Var a) {
    Mat value(1, 1);
    value(0, 0) = val(a).sum();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      t.accum(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(),
                               t.nodes_[self].grad(0, 0)));
    });
    return out;
  }

  Var mean_all(Var a) {
    const double n = static_cast<double>(val(a).size());
    Mat value(1, 1);
    value(0, 0) = val(a).sum() / n;
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, n](Tape& t, int self) {
      t.accum(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(),
                               t.nodes_[self].grad(0, 0) / n));
    });
    return out;
  }

  Var row_sum(Var a) {  // [n x m] -> [n x 1]
    Mat value = val(a).rowwise().sum();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(a, g.replicate(1, t.val(a).cols()));
    });
    return out;
  }

  Var col_mean(Var a) {  // [n x m] -> [1 x m]
    const double n = static_cast<double>(val(a).rows());
    Mat value = val(a).colwise().mean();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, n](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      t.accum(a, g.replicate(t.val(a).rows(), 1) / n);
    });
    return out;
  }

  Var transpose(Var a) {
    Var out = push(val(a).transpose(), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      t.accum(a, t.nodes_[self].grad.transpose());
    });
    return out;
  }

  Var slice_rows(Var a, int r0, int n) {
    Var out = push(val(a).middleRows(r0, n), tracked(a), {a});
    set_back(out, [a, r0, n](Tape& t, int self) {
      Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      g.middleRows(r0, n) = t.nodes_[self].grad;
      t.accum(a, g);
    });
    return out;
  }

  Var slice_cols(Var a, int c0, int n) {
    Var out = push(val(a).middleCols(c0, n), tracked(a), {a});
    set_back(out, [a, c0, n](Tape& t, int self) {
      Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      g.middleCols(c0, n) = t.nodes_[self].grad;
      t.accum(a, g);
    });
    return out;
  }

  Var gather_rows(Var a, std::vector<int> rows) {
    Mat value(static_cast<Eigen::Index>(rows.size()), val(a).cols());
    for (std::size_t i = 0; i < rows.size(); ++i)
      value.row(static_cast<Eigen::Index>(i)) = val(a).row(rows[i]);
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, rows = std::move(rows)](Tape& t, int self) {
      Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      for (std::size_t i = 0; i < rows.size(); ++i)
        g.row(rows[i]) += t.nodes_[self].grad.row(static_cast<Eigen::Index>(i));
      t.accum(a, g);
    });
    return out;
  }

  Var concat_rows(const std::vector<Var>& parts) {
    Eigen::Index rows = 0;
    bool track = false;
    for (Var p : parts) {
      rows += val(p).rows();
      track = track || tracked(p);
    }
    Mat value(rows, val(parts.front()).cols());
    Eigen::Index at = 0;
    for (Var p : parts) {
      value.middleRows(at, val(p).rows()) = val(p);
      at += val(p).rows();
    }
    Var out = push(std::move(value), track, parts);
    set_back(out, [parts](Tape& t, int self) {
      Eigen::Index at = 0;
      for (Var p : parts) {
        const auto n = t.val(p).rows();
        t.accum(p, t.nodes_[self].grad.middleRows(at, n));
        at += n;
      }
    });
    return out;
  }

  Var take_diag(Var a) {  // [n x n] -> [n x 1]
    Mat value = val(a).diagonal();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a](Tape& t, int self) {
      Mat g = Mat::Zero(t.val(a).rows(), t.val(a).cols());
      g.diagonal() = t.nodes_[self].grad.col(0);
      t.accum(a, g);
    });
    return out;
  }

  // --- softmax family ---

  Var softmax_rows(Var a) {
    Mat value = val(a);
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      const double mx = value.row(r).maxCoeff();
      value.row(r) = (value.row(r).array() - mx).exp();
      value.row(r) /= value.row(r).sum();
    }
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, out](Tape& t, int self) {
      const Mat& y = t.val(out);
      const Mat& g = t.nodes_[self].grad;
      Mat gx(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        gx.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
      }
      t.accum(a, gx);
    });
    return out;
  }

  Var log_softmax_rows(Var a) {
    Mat value = val(a);
    for (Eigen::Index r = 0; r < value.rows(); ++r) {
      const double mx = value.row(r).maxCoeff();
      const double lse =
          mx + std::log((value.row(r).array() - mx).exp().sum());
      value.row(r).array() -= lse;
    }
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, out](Tape& t, int self) {
      const Mat& y = t.val(out);
      const Mat& g = t.nodes_[self].grad;
      Mat gx(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double gsum = g.row(r).sum();
        gx.row(r) = g.row(r) - gsum * y.row(r).array().exp().matrix();
      }
      t.accum(a, gx);
    });
    return out;
  }

  // Mean cross-entropy of row logits against integer labels.
  Var cross_entropy_rows(Var logits, const std::vector<int>& labels) {
    const Mat& x = val(logits);
    if (static_cast<Eigen::Index>(labels.size()) != x.rows())
      throw DataError("cross_entropy_rows: label count mismatch");
    for (int y : labels)
      if (y < 0 || y >= x.cols())
        throw DataError("cross_entropy_rows: label " + std::to_string(y) +
                        " outside [0, " + std::to_string(x.cols()) + ")");
    const double n = static_cast<double>(x.rows());
    Mat probs = x;
    double loss = 0.0;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const double mx = x.row(r).maxCoeff();
      const double lse = mx + std::log((x.row(r).array() - mx).exp().sum());
      probs.row(r) = (x.row(r).array() - lse).exp();
      loss -= x(r, labels[static_cast<std::size_t>(r)]) - lse;
    }
    Mat value(1, 1);
    value(0, 0) = loss / n;
    Var out = push(std::move(value), tracked(logits), {logits});
    set_back(out, [logits, labels, probs = std::move(probs), n](Tape& t,
                                                                int self) {
      Mat g = probs;
      for (Eigen::Index r = 0; r < g.rows(); ++r)
        g(r, labels[static_cast<std::size_t>(r)]) -= 1.0;
      t.accum(logits, g * (t.nodes_[self].grad(0, 0) / n));
    });
    return out;
  }

  // --- normalizations ---

  // Rows scaled to unit L2 norm; a zero-norm row is an error.
  Var normalize_rows(Var a, double min_norm = 1e-12) {
    const Mat& x = val(a);
    Eigen::VectorXd norms(x.rows());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      norms(r) = x.row(r).norm();
      if (norms(r) < min_norm)
        throw NumericError("normalize_rows: zero-norm row " +
                           std::to_string(r));
    }
    Mat value = norms.cwiseInverse().asDiagonal() * x;
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, out, norms = std::move(norms)](Tape& t, int self) {
      const Mat& y = t.val(out);
      const Mat& g = t.nodes_[self].grad;
      Mat gx(y.rows(), y.cols());
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = g.row(r).dot(y.row(r));
        gx.row(r) = (g.row(r) - dot * y.row(r)) / norms(r);
      }
      t.accum(a, gx);
    });
    return out;
  }

  // Columns divided by max(||col||, eps); the clamp absorbs degenerate
  // columns instead of erroring.
  Var normalize_cols_eps(Var a, double eps) {
    const Mat& x = val(a);
    Eigen::VectorXd norms(x.cols());
    Eigen::VectorXd dens(x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      norms(c) = x.col(c).norm();
      dens(c) = std::max(norms(c), eps);
    }
    Mat value = x * dens.cwiseInverse().asDiagonal();
    Var out = push(std::move(value), tracked(a), {a});
    set_back(out, [a, out, norms = std::move(norms), dens = std::move(dens),
                   eps](Tape& t, int self) {
      const Mat& y = t.val(out);
      const Mat& g = t.nodes_[self].grad;
      Mat gx(y.rows(), y.cols());
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        if (norms(c) > eps) {
          const double dot = g.col(c).dot(y.col(c));
          gx.col(c) = (g.col(c) - dot * y.col(c)) / norms(c);
        } else {
          gx.col(c) = g.col(c) / eps;
        }
      }
      t.accum(a, gx);
    });
    return out;
  }

  // Row-wise layer norm with learned affine.
  Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-6) {
    const Mat& xin = val(x);
    const auto m = xin.cols();
    Mat xhat(xin.rows(), m);
    Eigen::VectorXd inv_sd(xin.rows());
    for (Eigen::Index r = 0; r < xin.rows(); ++r) {
      const double mu = xin.row(r).mean();
      const double var =
          (xin.row(r).array() - mu).square().sum() / static_cast<double>(m);
      inv_sd(r) = 1.0 / std::sqrt(var + eps);
      xhat.row(r) = (xin.row(r).array() - mu) * inv_sd(r);
    }
    Mat value = xhat;
    value.array().rowwise() *= val(gamma).row(0).array();
    value.rowwise() += val(beta).row(0);
    const bool track = tracked(x) || tracked(gamma) || tracked(beta);
    Var out = push(std::move(value), track, {x, gamma, beta});
    set_back(out, [x, gamma, beta, xhat = std::move(xhat),
                   inv_sd = std::move(inv_sd)](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      const auto m = static_cast<double>(g.cols());
      Mat dxhat = g;
      dxhat.array().rowwise() *= t.val(gamma).row(0).array();
      Mat gx(g.rows(), g.cols());
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const double mean_d = dxhat.row(r).sum() / m;
        const double mean_dx = dxhat.row(r).dot(xhat.row(r)) / m;
        gx.row(r) = inv_sd(r) * (dxhat.row(r).array() - mean_d -
                                 xhat.row(r).array() * mean_dx);
      }
      t.accum(x, gx);
      t.accum(gamma, (g.cwiseProduct(xhat)).colwise().sum());
      t.accum(beta, g.colwise().sum());
    });
    return out;
  }

  // Column-wise batch norm. Training mode uses batch statistics and updates
  // the running stats; eval mode reads them.
  Var batch_norm(Var x, Var gamma, Var beta, BnStats& stats, bool training,
                 double momentum = 0.1, double eps = 1e-5) {
    const Mat& xin = val(x);
    const auto n = xin.rows();
    const auto m = xin.cols();
    if (!stats.initialized) {
      stats.mean = Eigen::VectorXd::Zero(m);
      stats.var = Eigen::VectorXd::Ones(m);
      stats.initialized = true;
    }
    Eigen::VectorXd mu(m), var(m);
    if (training) {
      for (Eigen::Index c = 0; c < m; ++c) {
        mu(c) = xin.col(c).mean();
        var(c) =
            (xin.col(c).array() - mu(c)).square().sum() / static_cast<double>(n);
      }
      const double unbias =
          n > 1 ? static_cast<double>(n) / static_cast<double>(n - 1) : 1.0;
      stats.mean = (1.0 - momentum) * stats.mean + momentum * mu;
      stats.var = (1.0 - momentum) * stats.var + momentum * (var * unbias);
    } else {
      mu = stats.mean;
      var = stats.var;
    }
    Eigen::VectorXd inv_sd = (var.array() + eps).rsqrt();
    Mat xhat = (xin.rowwise() - mu.transpose());
    xhat.array().rowwise() *= inv_sd.transpose().array();
    Mat value = xhat;
    value.array().rowwise() *= val(gamma).row(0).array();
    value.rowwise() += val(beta).row(0);
    const bool track = tracked(x) || tracked(gamma) || tracked(beta);
    Var out = push(std::move(value), track, {x, gamma, beta});
    set_back(out, [x, gamma, beta, xhat = std::move(xhat),
                   inv_sd = std::move(inv_sd), training](Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      const auto n = static_cast<double>(g.rows());
      Mat dxhat = g;
      dxhat.array().rowwise() *= t.val(gamma).row(0).array();
      Mat gx(g.rows(), g.cols());
      if (training) {
        for (Eigen::Index c = 0; c < g.cols(); ++c) {
          const double mean_d = dxhat.col(c).sum() / n;
          const double mean_dx = dxhat.col(c).dot(xhat.col(c)) / n;
          gx.col(c) = inv_sd(c) * (dxhat.col(c).array() - mean_d -
                                   xhat.col(c).array() * mean_dx);
        }
      } else {
        gx = dxhat;
        gx.array().rowwise() *= inv_sd.transpose().array();
      }
      t.accum(x, gx);
      t.accum(gamma, (g.cwiseProduct(xhat)).colwise().sum());
      t.accum(beta, g.colwise().sum());
    });
    return out;
  }

  Var dropout(Var x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (p >= 1.0) throw NumericError("dropout: p must be < 1");
    const double keep = 1.0 - p;
    Mat mask(val(x).rows(), val(x).cols());
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        mask(r, c) = rng.uniform() < p ? 0.0 : 1.0 / keep;
    Var out = push(val(x).cwiseProduct(mask), tracked(x), {x});
    set_back(out, [x, mask = std::move(mask)](Tape& t, int self) {
      t.accum(x, t.nodes_[self].grad.cwiseProduct(mask));
    });
    return out;
  }

  // Gradient reversal: identity forward, upstream gradient is -lambda times
  // the incoming gradient.
  Var grl(Var x, double lambda) {
    Var out = push(val(x), tracked(x), {x});
    set_back(out, [x, lambda](Tape& t, int self) {
      t.accum(x, -lambda * t.nodes_[self].grad);
    });
    return out;
  }

  // Batched multi-head self-attention core. q, k, v are [B*T x d] with d
  // split evenly into `heads`; attention is computed within each group of T
  // rows (one image), never across groups.
  Var attention(Var q, Var k, Var v, int groups, int heads) {
    const Mat& Q = val(q);
    const auto d = Q.cols();
    const int t_rows = static_cast<int>(Q.rows()) / groups;
    if (d % heads != 0)
      throw NumericError("attention: width not divisible by heads");
    const int dh = static_cast<int>(d) / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<Mat>>();
    probs->reserve(static_cast<std::size_t>(groups) * heads);
    Mat value(Q.rows(), d);
    for (int b = 0; b < groups; ++b) {
      for (int h = 0; h < heads; ++h) {
        const auto Qb = val(q).block(b * t_rows, h * dh, t_rows, dh);
        const auto Kb = val(k).block(b * t_rows, h * dh, t_rows, dh);
        const auto Vb = val(v).block(b * t_rows, h * dh, t_rows, dh);
        Mat s = (Qb * Kb.transpose()) * scale;
        for (Eigen::Index r = 0; r < s.rows(); ++r) {
          const double mx = s.row(r).maxCoeff();
          s.row(r) = (s.row(r).array() - mx).exp();
          s.row(r) /= s.row(r).sum();
        }
        value.block(b * t_rows, h * dh, t_rows, dh) = s * Vb;
        probs->push_back(std::move(s));
      }
    }
    const bool track = tracked(q) || tracked(k) || tracked(v);
    Var out = push(std::move(value), track, {q, k, v});
    set_back(out, [q, k, v, groups, heads, t_rows, dh, scale, probs](
                      Tape& t, int self) {
      const Mat& g = t.nodes_[self].grad;
      Mat gq = Mat::Zero(t.val(q).rows(), t.val(q).cols());
      Mat gk = gq, gv = gq;
      for (int b = 0; b < groups; ++b) {
        for (int h = 0; h < heads; ++h) {
          const Mat& P = (*probs)[static_cast<std::size_t>(b) * heads + h];
          const auto Qb = t.val(q).block(b * t_rows, h * dh, t_rows, dh);
          const auto Kb = t.val(k).block(b * t_rows, h * dh, t_rows, dh);
          const auto Vb = t.val(v).block(b * t_rows, h * dh, t_rows, dh);
          const auto gO = g.block(b * t_rows, h * dh, t_rows, dh);
          gv.block(b * t_rows, h * dh, t_rows, dh) += P.transpose() * gO;
          Mat dP = gO * Vb.transpose();
          Mat dS(P.rows(), P.cols());
          for (Eigen::Index r = 0; r < P.rows(); ++r) {
            const double dot = dP.row(r).dot(P.row(r));
            dS.row(r) =
                P.row(r).cwiseProduct((dP.row(r).array() - dot).matrix());
          }
          gq.block(b * t_rows, h * dh, t_rows, dh) += (dS * Kb) * scale;
          gk.block(b * t_rows, h * dh, t_rows, dh) +=
              (dS.transpose() * Qb) * scale;
        }
      }
      t.accum(q, gq);
      t.accum(k, gk);
      t.accum(v, gv);
    });
    return out;
  }

  // Runs the reverse sweep from a 1x1 loss node.
  void backward(Var loss) {
    if (val(loss).rows() != 1 || val(loss).cols() != 1)
      throw NumericError("backward: loss must be a 1x1 node");
    for (auto& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[loss.idx].grad(0, 0) = 1.0;
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i)
      if (nodes_[static_cast<std::size_t>(i)].back && nodes_[static_cast<std::size_t>(i)].needs_grad)
        nodes_[static_cast<std::size_t>(i)].back(*this, i);
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void(Tape&, int)> back;
  };

  friend struct NodeAccess;

  Node& node(Var v) { return nodes_[static_cast<std::size_t>(v.idx)]; }

  bool tracked(Var v) const {
    return nodes_[static_cast<std::size_t>(v.idx)].needs_grad;
  }

  Var push(Mat value, bool needs_grad, const std::vector<Var>&) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void set_back(Var v, std::function<void(Tape&, int)> fn) {
    if (node(v).needs_grad) node(v).back = std::move(fn);
  }

  void accum(Var v, const Mat& g) {
    Node& n = node(v);
    if (!n.needs_grad) return;
    n.grad += g;
  }

  void check_same_shape(Var a, Var b, const char* op) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw NumericError(std::string(op) + ": shape mismatch " +
                         std::to_string(val(a).rows()) + "x" +
                         std::to_string(val(a).cols()) + " vs " +
                         std::to_string(val(b).rows()) + "x" +
                         std::to_string(val(b).cols()));
  }

  std::vector<Node> nodes_;
};

}  // namespace seal::ad
