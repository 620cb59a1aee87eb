#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "seal/autodiff/nn.hpp"
#include "seal/autodiff/tape.hpp"
#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"

namespace seal::omics {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct VaeConfig {
  int input_dim = 0;                      // gene panel width G
  std::vector<int> hidden_dims = {1024};  // encoder stack; decoder mirrors it
  int latent_dim = 64;                    // d, matches the vision width
  int n_flows = 4;
  double encoder_dropout = 0.0;
  double decoder_dropout = 0.0;
  double beta_kl = 1e-2;

  void validate() const {
    if (input_dim < 1) throw DataError("VaeConfig: input_dim must be >= 1");
    if (latent_dim < 1) throw DataError("VaeConfig: latent_dim must be >= 1");
    if (n_flows < 0) throw DataError("VaeConfig: n_flows must be >= 0");
    for (int h : hidden_dims)
      if (h < 1) throw DataError("VaeConfig: hidden width must be >= 1");
    if (encoder_dropout < 0 || encoder_dropout >= 1 || decoder_dropout < 0 ||
        decoder_dropout >= 1)
      throw DataError("VaeConfig: dropout must lie in [0, 1)");
    if (beta_kl < 0) throw DataError("VaeConfig: beta_kl must be >= 0");
  }
};

struct GaussianPosterior {
  Eigen::VectorXd mu;
  Eigen::VectorXd log_var;
};

struct PlanarFlowParams {
  Eigen::VectorXd u;
  Eigen::VectorXd w;
  double b = 0.0;
};

struct FlowResult {
  Eigen::VectorXd z_k;
  double sum_log_det = 0.0;
  int n_flows = 0;
};

// z0 = mu + sigma .* eps with the caller supplying eps.
inline Eigen::VectorXd reparameterize(const GaussianPosterior& p,
                                      const Eigen::VectorXd& eps) {
  return p.mu + (0.5 * p.log_var.array()).exp().matrix().cwiseProduct(eps);
}

// u_hat = u + (softplus(w'u) - 1 - w'u) * w / ||w||^2, which guarantees
// w'u_hat >= -1 and therefore an invertible flow step.
inline Eigen::VectorXd project_planar_u(const Eigen::VectorXd& u,
                                        const Eigen::VectorXd& w) {
  const double wu = w.dot(u);
  const double sp = wu > 0.0 ? wu + std::log1p(std::exp(-wu))
                             : std::log1p(std::exp(wu));
  const double wnorm2 = w.squaredNorm();
  if (wnorm2 <= 0.0) return u;
  return u + ((sp - 1.0 - wu) / wnorm2) * w;
}

struct FlowStepResult {
  Eigen::VectorXd z_next;
  double log_det = 0.0;
};

// One planar step z' = z + u tanh(w'z + b). Assumes params were already
// constraint-projected; log_det = log|1 + u'psi(z)|.
inline FlowStepResult planar_flow_step(const Eigen::VectorXd& z,
                                       const PlanarFlowParams& p) {
  const double act = std::tanh(p.w.dot(z) + p.b);
  FlowStepResult out;
  out.z_next = z + p.u * act;
  const double det = 1.0 + (1.0 - act * act) * p.w.dot(p.u);
  if (std::abs(det) < 1e-12)
    throw NumericError("planar_flow_step: singular flow (|det| < 1e-12)");
  out.log_det = std::log(std::abs(det));
  return out;
}

inline FlowResult apply_flows(const Eigen::VectorXd& z0,
                              const std::vector<PlanarFlowParams>& flows) {
  FlowResult result;
  result.z_k = z0;
  result.n_flows = static_cast<int>(flows.size());
  for (const auto& p : flows) {
    FlowStepResult step = planar_flow_step(result.z_k, p);
    result.z_k = std::move(step.z_next);
    result.sum_log_det += step.log_det;
  }
  return result;
}

// Variational regularizer. Without flows this is the analytic KL to N(0, I);
// with flows it is the single-sample free energy
//   log q0(z0) - sum_log_det - log N(z_K; 0, I),
// with normalizing constants on both sides so the branches agree at u = 0 in
// expectation over eps.
inline double variational_regularizer(const GaussianPosterior& p,
                                      const FlowResult& fr,
                                      const Eigen::VectorXd& z0) {
  if (fr.n_flows == 0)
    return -0.5 * (1.0 + p.log_var.array() - p.mu.array().square() -
                   p.log_var.array().exp())
                      .sum();
  const double d = static_cast<double>(p.mu.size());
  const double log2pi = std::log(2.0 * std::numbers::pi);
  const Eigen::ArrayXd eps =
      (z0 - p.mu).array() / (0.5 * p.log_var.array()).exp();
  const double log_q0 =
      -0.5 * (d * log2pi + p.log_var.sum() + eps.square().sum());
  const double log_prior =
      -0.5 * (d * log2pi + fr.z_k.array().square().sum());
  return log_q0 - fr.sum_log_det - log_prior;
}

// --- tape building blocks used during training ---

// Batched projection of u given w; u, w are [1 x d] nodes.
inline Var project_planar_u_t(Tape& t, Var u, Var w) {
  Var wu = t.matmul(w, u, false, true);                    // [1 x 1]
  Var coef = t.sub(t.softplus(wu), t.add_scalar(wu, 1.0));  // sp(wu) - 1 - wu
  Var wnorm2 = t.sum_all(t.square(w));
  Var correction = t.div_scalar_node(t.matmul(coef, w), wnorm2);
  return t.add(u, correction);
}

struct FlowStepVars {
  Var z_next;
  Var log_det;  // [B x 1]
};

// Batched planar step on z [B x d] with already-projected u.
inline FlowStepVars planar_flow_step_t(Tape& t, Var z, Var u_hat, Var w,
                                       Var b) {
  Var pre = t.add_row_broadcast(t.matmul(z, w, false, true), b);  // [B x 1]
  Var act = t.tanh_of(pre);
  FlowStepVars out;
  out.z_next = t.add(z, t.matmul(act, u_hat));
  Var wu = t.matmul(w, u_hat, false, true);  // [1 x 1]
  Var hprime = t.add_scalar(t.scale(t.square(act), -1.0), 1.0);
  Var det = t.add_scalar(t.matmul(hprime, wu), 1.0);  // [B x 1]
  out.log_det = t.log_abs(det);
  return out;
}

// Gaussian posterior + flow stack + mirrored decoder over a gene panel.
class OmicsVae {
 public:
  struct FlowLayer {
    ad::Param u;
    ad::Param w;
    ad::Param b;
  };

  OmicsVae() = default;

  OmicsVae(VaeConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.latent_dim;

    int in = cfg_.input_dim;
    for (std::size_t i = 0; i < cfg_.hidden_dims.size(); ++i) {
      const int out = cfg_.hidden_dims[i];
      const std::string name = "omics.enc" + std::to_string(i);
      enc_linears_.emplace_back(name, in, out, rng);
      enc_bns_.emplace_back(name + ".bn", out);
      in = out;
    }
    mu_head_ = ad::Linear("omics.mu_head", in, d, rng);
    logvar_head_ = ad::Linear("omics.logvar_head", in, d, rng);

    for (int k = 0; k < cfg_.n_flows; ++k) {
      const std::string name = "omics.flow" + std::to_string(k);
      FlowLayer layer;
      layer.u = ad::Param(name + ".u", ad::randn_matrix(rng, 1, d, 0.01));
      layer.w = ad::Param(name + ".w", ad::randn_matrix(rng, 1, d, 0.01));
      layer.b = ad::Param(name + ".b", Mat::Zero(1, 1), /*decay=*/false);
      flows_.push_back(std::move(layer));
    }

    // Mirror: d -> reverse(hidden) -> G, batch-norm + relu on hiddens only.
    std::vector<int> widths;
    widths.push_back(d);
    for (auto it = cfg_.hidden_dims.rbegin(); it != cfg_.hidden_dims.rend();
         ++it)
      widths.push_back(*it);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
      const std::string name = "omics.dec" + std::to_string(i);
      dec_linears_.emplace_back(name, widths[i], widths[i + 1], rng);
      dec_bns_.emplace_back(name + ".bn", widths[i + 1]);
    }
    dec_out_ = ad::Linear("omics.dec_out", widths.back(), cfg_.input_dim, rng);
  }

  const VaeConfig& config() const { return cfg_; }

  struct EncodeVars {
    Var mu;
    Var log_var;
    Var h;  // pre-latent activation
  };

  EncodeVars encode_t(Tape& t, Var x, bool training, Rng* dropout_rng) {
    if (t.val(x).cols() != cfg_.input_dim)
      throw DataError("OmicsVae::encode: input width " +
                      std::to_string(t.val(x).cols()) + " != " +
                      std::to_string(cfg_.input_dim));
    Var h = x;
    for (std::size_t i = 0; i < enc_linears_.size(); ++i) {
      h = t.relu(enc_bns_[i].forward(t, enc_linears_[i].forward(t, h), training));
      if (training && cfg_.encoder_dropout > 0.0 && dropout_rng)
        h = t.dropout(h, cfg_.encoder_dropout, *dropout_rng, true);
    }
    return EncodeVars{mu_head_.forward(t, h), logvar_head_.forward(t, h), h};
  }

  Var decode_t(Tape& t, Var z, bool training, Rng* dropout_rng) {
    Var h = z;
    for (std::size_t i = 0; i < dec_linears_.size(); ++i) {
      h = t.relu(dec_bns_[i].forward(t, dec_linears_[i].forward(t, h), training));
      if (training && cfg_.decoder_dropout > 0.0 && dropout_rng)
        h = t.dropout(h, cfg_.decoder_dropout, *dropout_rng, true);
    }
    return dec_out_.forward(t, h);  // unconstrained linear output
  }

  struct FlowVars {
    Var z_k;
    Var sum_log_det;  // [B x 1]
    bool has_flows = false;
  };

  // Projection is applied to the raw flow parameters on every forward, so
  // gradients pass through the constraint.
  FlowVars apply_flows_t(Tape& t, Var z0) {
    FlowVars out;
    out.z_k = z0;
    out.has_flows = !flows_.empty();
    if (flows_.empty()) return out;
    Var sum_ld;
    for (auto& layer : flows_) {
      Var u = t.param(layer.u);
      Var w = t.param(layer.w);
      Var b = t.param(layer.b);
      Var u_hat = project_planar_u_t(t, u, w);
      FlowStepVars step = planar_flow_step_t(t, out.z_k, u_hat, w, b);
      out.z_k = step.z_next;
      sum_ld = sum_ld.valid() ? t.add(sum_ld, step.log_det) : step.log_det;
    }
    out.sum_log_det = sum_ld;
    return out;
  }

  // Mean over the batch of the per-sample regularizer. eps is the noise used
  // to draw z0 (constant w.r.t. the graph).
  Var regularizer_t(Tape& t, Var mu, Var log_var, const Mat& eps,
                    const FlowVars& flow) {
    if (!flow.has_flows) {
      Var term = t.add_scalar(
          t.sub(t.sub(log_var, t.square(mu)), t.exp_of(log_var)), 1.0);
      return t.mean_all(t.scale(t.row_sum(term), -0.5));
    }
    Var eps_sq = t.input(eps.array().square());
    Var term = t.sub(t.sub(t.square(flow.z_k), log_var), eps_sq);
    Var per_sample = t.sub(t.scale(t.row_sum(term), 0.5), flow.sum_log_det);
    return t.mean_all(per_sample);
  }

  struct ForwardVars {
    EncodeVars enc;
    Var z0;
    FlowVars flow;
    Var recon;
    Var regularizer;
  };

  // Full training forward on a batch x [B x G] with supplied noise eps.
  ForwardVars forward_t(Tape& t, Var x, const Mat& eps, bool training,
                        Rng* dropout_rng) {
    ForwardVars out;
    out.enc = encode_t(t, x, training, dropout_rng);
    Var sigma = t.exp_of(t.scale(out.enc.log_var, 0.5));
    out.z0 = t.add(out.enc.mu, t.mul(sigma, t.input(eps)));
    out.flow = apply_flows_t(t, out.z0);
    out.recon = decode_t(t, out.flow.z_k, training, dropout_rng);
    out.regularizer =
        regularizer_t(t, out.enc.mu, out.enc.log_var, eps, out.flow);
    return out;
  }

  // --- deterministic eval helpers ---

  struct EncodeEval {
    Mat mu;
    Mat log_var;
  };

  EncodeEval encode_eval(const Mat& x) {
    Tape t;
    auto enc = encode_t(t, t.input(x), /*training=*/false, nullptr);
    return EncodeEval{t.val(enc.mu), t.val(enc.log_var)};
  }

  // Eval embedding: the posterior mean pushed through the flow stack.
  Mat embed_eval(const Mat& x) {
    Tape t;
    auto enc = encode_t(t, t.input(x), /*training=*/false, nullptr);
    auto flow = apply_flows_t(t, enc.mu);
    return t.val(flow.z_k);
  }

  Mat decode_eval(const Mat& z) {
    Tape t;
    return t.val(decode_t(t, t.input(z), /*training=*/false, nullptr));
  }

  // Current flow parameters after constraint projection.
  std::vector<PlanarFlowParams> projected_flows() const {
    std::vector<PlanarFlowParams> out;
    for (const auto& layer : flows_) {
      PlanarFlowParams p;
      p.w = layer.w.value.row(0).transpose();
      p.u = project_planar_u(layer.u.value.row(0).transpose(), p.w);
      p.b = layer.b.value(0, 0);
      out.push_back(std::move(p));
    }
    return out;
  }

  std::vector<ad::Param*> params() {
    std::vector<ad::Param*> out;
    for (auto& l : enc_linears_) l.collect(out);
    for (auto& b : enc_bns_) b.collect(out);
    mu_head_.collect(out);
    logvar_head_.collect(out);
    for (auto& f : flows_) {
      out.push_back(&f.u);
      out.push_back(&f.w);
      out.push_back(&f.b);
    }
    for (auto& l : dec_linears_) l.collect(out);
    for (auto& b : dec_bns_) b.collect(out);
    dec_out_.collect(out);
    return out;
  }

  std::vector<ad::BatchNorm*> batch_norms() {
    std::vector<ad::BatchNorm*> out;
    for (auto& b : enc_bns_) out.push_back(&b);
    for (auto& b : dec_bns_) out.push_back(&b);
    return out;
  }

 private:
  VaeConfig cfg_;
  std::vector<ad::Linear> enc_linears_;
  std::vector<ad::BatchNorm> enc_bns_;
  ad::Linear mu_head_;
  ad::Linear logvar_head_;
  std::vector<FlowLayer> flows_;
  std::vector<ad::Linear> dec_linears_;
  std::vector<ad::BatchNorm> dec_bns_;
  ad::Linear dec_out_;
};

}  // namespace seal::omics
