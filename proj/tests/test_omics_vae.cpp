#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "seal/core/rng.hpp"
#include "seal/omics/vae.hpp"

using namespace seal;
using omics::FlowResult;
using omics::GaussianPosterior;
using omics::OmicsVae;
using omics::PlanarFlowParams;
using omics::VaeConfig;
using seal::ad::Mat;
using seal::ad::Tape;
using seal::ad::Var;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, sd);
  return m;
}

VaeConfig small_config(int g, int d, int flows) {
  VaeConfig cfg;
  cfg.input_dim = g;
  cfg.hidden_dims = {6};
  cfg.latent_dim = d;
  cfg.n_flows = flows;
  return cfg;
}

}  // namespace

TEST_CASE("reparameterize is mu + sigma .* eps") {
  GaussianPosterior p;
  p.mu = Eigen::Vector2d(0.5, -1.0);
  p.log_var = Eigen::Vector2d::Zero();

  SECTION("eps zero returns mu") {
    REQUIRE((omics::reparameterize(p, Eigen::Vector2d::Zero()) - p.mu)
                .norm() == 0.0);
  }
  SECTION("unit sigma adds eps") {
    const Eigen::Vector2d eps(0.3, -0.7);
    REQUIRE((omics::reparameterize(p, eps) - (p.mu + eps)).norm() == 0.0);
  }
  SECTION("log_var 2 ln 2 gives sigma 2") {
    GaussianPosterior q;
    q.mu = Eigen::Vector2d::Zero();
    q.log_var = Eigen::Vector2d::Constant(2.0 * std::log(2.0));
    const Eigen::Vector2d eps(1.0, -1.0);
    const Eigen::Vector2d z = omics::reparameterize(q, eps);
    REQUIRE(z(0) == Catch::Approx(2.0));
    REQUIRE(z(1) == Catch::Approx(-2.0));
  }
}

TEST_CASE("planar_flow_step matches the analytic log-determinant") {
  SECTION("u = 0 is the identity with zero log-det") {
    PlanarFlowParams p;
    p.u = Eigen::Vector3d::Zero();
    p.w = Eigen::Vector3d(0.3, -1.0, 0.2);
    p.b = 0.4;
    const Eigen::Vector3d z(1.0, 2.0, -0.5);
    const auto step = omics::planar_flow_step(z, p);
    REQUIRE((step.z_next - z).norm() == 0.0);
    REQUIRE(step.log_det == 0.0);
  }
  SECTION("hand value log(1.5) at the origin") {
    PlanarFlowParams p;
    p.u = Eigen::Vector2d(0.5, 0.0);
    p.w = Eigen::Vector2d(1.0, 0.0);
    p.b = 0.0;
    const auto step = omics::planar_flow_step(Eigen::Vector2d::Zero(), p);
    REQUIRE((step.z_next - Eigen::Vector2d::Zero()).norm() == 0.0);
    REQUIRE(step.log_det == Catch::Approx(std::log(1.5)).epsilon(1e-12));
    REQUIRE(step.log_det == Catch::Approx(0.405465).margin(1e-6));
  }
  SECTION("log-det equals the numerical Jacobian determinant") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      const auto d = static_cast<Eigen::Index>(2 + rng.below(4));  // d <= 5
      PlanarFlowParams p;
      p.u = random_mat(rng, d, 1, 0.8);
      p.w = random_mat(rng, d, 1, 0.8);
      p.b = rng.normal(0.0, 0.5);
      p.u = omics::project_planar_u(p.u, p.w);
      const Eigen::VectorXd z = random_mat(rng, d, 1);
      const auto step = omics::planar_flow_step(z, p);
      const double numeric = oracles::numerical_jacobian_absdet(
          [&](const Eigen::VectorXd& zz) {
            return omics::planar_flow_step(zz, p).z_next;
          },
          z);
      REQUIRE(std::exp(step.log_det) ==
              Catch::Approx(numeric).epsilon(1e-5));
    }
  }
  SECTION("projection guarantees w'u >= -1") {
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
      const Eigen::VectorXd u = random_mat(rng, 4, 1, 3.0);
      const Eigen::VectorXd w = random_mat(rng, 4, 1, 3.0);
      // softplus(w'u) - 1 >= -1 analytically; allow fp rounding at the bound
      REQUIRE(w.dot(omics::project_planar_u(u, w)) >= -1.0 - 1e-9);
    }
  }
}

TEST_CASE("apply_flows composes steps and sums log-dets") {
  Rng rng(13);
  const Eigen::VectorXd z0 = random_mat(rng, 3, 1);

  SECTION("empty list returns the input") {
    const auto out = omics::apply_flows(z0, {});
    REQUIRE((out.z_k - z0).norm() == 0.0);
    REQUIRE(out.sum_log_det == 0.0);
    REQUIRE(out.n_flows == 0);
  }
  SECTION("one step equals planar_flow_step") {
    PlanarFlowParams p;
    p.u = omics::project_planar_u(random_mat(rng, 3, 1), random_mat(rng, 3, 1));
    p.w = random_mat(rng, 3, 1);
    p.b = 0.2;
    p.u = omics::project_planar_u(p.u, p.w);
    const auto one = omics::apply_flows(z0, {p});
    const auto direct = omics::planar_flow_step(z0, p);
    REQUIRE((one.z_k - direct.z_next).norm() == 0.0);
    REQUIRE(one.sum_log_det == direct.log_det);
  }
  SECTION("two identity flows") {
    PlanarFlowParams id;
    id.u = Eigen::Vector3d::Zero();
    id.w = Eigen::Vector3d::Ones();
    id.b = 0.0;
    const auto out = omics::apply_flows(z0, {id, id});
    REQUIRE((out.z_k - z0).norm() == 0.0);
    REQUIRE(out.sum_log_det == 0.0);
  }
}

TEST_CASE("variational_regularizer branches agree") {
  SECTION("standard normal posterior without flows is zero") {
    GaussianPosterior p;
    p.mu = Eigen::Vector3d::Zero();
    p.log_var = Eigen::Vector3d::Zero();
    FlowResult fr;
    fr.z_k = p.mu;
    fr.n_flows = 0;
    REQUIRE(omics::variational_regularizer(p, fr, p.mu) == 0.0);
  }
  SECTION("closed form half mu squared") {
    GaussianPosterior p;
    p.mu = Eigen::Vector2d(1.0, 0.0);
    p.log_var = Eigen::Vector2d::Zero();
    FlowResult fr;
    fr.z_k = p.mu;
    fr.n_flows = 0;
    REQUIRE(omics::variational_regularizer(p, fr, p.mu) ==
            Catch::Approx(0.5).epsilon(1e-12));
  }
  SECTION("identity flow equals the MC estimate of the no-flow branch") {
    Rng rng(17);
    GaussianPosterior p;
    p.mu = random_mat(rng, 4, 1);
    p.log_var = random_mat(rng, 4, 1, 0.3);
    const Eigen::VectorXd eps = random_mat(rng, 4, 1);
    const Eigen::VectorXd z0 = omics::reparameterize(p, eps);

    PlanarFlowParams id;
    id.u = Eigen::VectorXd::Zero(4);
    id.w = Eigen::VectorXd::Ones(4);
    id.b = 0.1;
    const auto fr = omics::apply_flows(z0, {id});
    const double with_flow = omics::variational_regularizer(p, fr, z0);

    // MC estimate of KL at the same z0 sample: log q0(z0) - log p(z0)
    const double log2pi = std::log(2.0 * std::numbers::pi);
    const Eigen::ArrayXd sigma = (0.5 * p.log_var.array()).exp();
    const Eigen::ArrayXd e = (z0 - p.mu).array() / sigma;
    const double log_q0 =
        -0.5 * (4.0 * log2pi + p.log_var.sum() + e.square().sum());
    const double log_prior =
        -0.5 * (4.0 * log2pi + z0.array().square().sum());
    REQUIRE(with_flow == Catch::Approx(log_q0 - log_prior).epsilon(1e-12));
  }
}

TEST_CASE("encoder and decoder contracts") {
  Rng rng(19);
  const int g = 7, d = 3;
  OmicsVae vae(small_config(g, d, 0), rng);

  SECTION("zero heads give zero posterior parameters") {
    for (ad::Param* p : vae.params())
      if (p->name.find("head") != std::string::npos) p->value.setZero();
    const auto out = vae.encode_eval(random_mat(rng, 2, g));
    REQUIRE(out.mu.cwiseAbs().maxCoeff() == 0.0);
    REQUIRE(out.log_var.cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("eval mode is deterministic and batch-consistent") {
    const Mat x = random_mat(rng, 1, g);
    Mat batch(3, g);
    batch << x, x, x;
    const auto out = vae.encode_eval(batch);
    REQUIRE((out.mu.row(0) - out.mu.row(1)).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((out.mu.row(0) - out.mu.row(2)).cwiseAbs().maxCoeff() == 0.0);
    const auto again = vae.encode_eval(batch);
    REQUIRE((again.mu - out.mu).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("shapes: posterior is d wide, reconstruction is G wide") {
    const auto enc = vae.encode_eval(random_mat(rng, 4, g));
    REQUIRE(enc.mu.cols() == d);
    REQUIRE(enc.log_var.cols() == d);
    REQUIRE(vae.decode_eval(random_mat(rng, 4, d)).cols() == g);
  }
  SECTION("zero-weight decoder returns its bias") {
    for (ad::Param* p : vae.params())
      if (p->name.find("dec") != std::string::npos &&
          p->name.find("weight") != std::string::npos)
        p->value.setZero();
    const Mat out = vae.decode_eval(random_mat(rng, 2, d));
    REQUIRE((out.row(0) - out.row(1)).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("dimension mismatch errors") {
    Tape t;
    REQUIRE_THROWS_AS(
        vae.encode_t(t, t.input(random_mat(rng, 2, g + 1)), false, nullptr),
        DataError);
  }
}

TEST_CASE("no flows reduces to the plain diagonal-Gaussian VAE") {
  Rng rng(23);
  OmicsVae vae(small_config(5, 3, 0), rng);
  Tape t;
  Var z0 = t.input(random_mat(rng, 4, 3), true);
  const auto flow = vae.apply_flows_t(t, z0);
  // bit-identical passthrough
  REQUIRE(&t.val(flow.z_k) == &t.val(z0));
  REQUIRE_FALSE(flow.has_flows);
}

TEST_CASE("projected flows are numerically injective") {
  Rng rng(29);
  OmicsVae vae(small_config(5, 4, 3), rng);
  // push flow parameters away from the identity
  for (ad::Param* p : vae.params())
    if (p->name.find("flow") != std::string::npos &&
        p->name.find(".b") == std::string::npos)
      p->value = random_mat(rng, p->value.rows(), p->value.cols(), 1.2);

  const Mat z = random_mat(rng, 64, 4);
  Tape t;
  const Mat out = t.val(vae.apply_flows_t(t, t.input(z)).z_k);
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index j = i + 1; j < z.rows(); ++j) {
      if ((z.row(i) - z.row(j)).norm() > 1e-6)
        REQUIRE((out.row(i) - out.row(j)).norm() > 1e-9);
    }
}

TEST_CASE("regularizer and flow gradients match finite differences") {
  Rng rng(31);
  const int d = 4, batch = 3;
  const Mat mu0 = random_mat(rng, batch, d, 0.7);
  const Mat logvar0 = random_mat(rng, batch, d, 0.4);
  const Mat eps = random_mat(rng, batch, d);
  const Mat u0 = random_mat(rng, 1, d, 0.8);
  const Mat w0 = random_mat(rng, 1, d, 0.8);
  const Mat b0 = random_mat(rng, 1, 1, 0.3);

  // Free-energy pipeline on raw vars: z0 = mu + sigma.*eps, one projected
  // flow, then the flow-branch regularizer plus a reconstruction-like term
  // so every input influences the loss through multiple paths.
  auto build = [&](Tape& t, Var mu, Var logvar, Var u, Var w, Var b) {
    Var sigma = t.exp_of(t.scale(logvar, 0.5));
    Var z0 = t.add(mu, t.mul(sigma, t.input(eps)));
    Var u_hat = omics::project_planar_u_t(t, u, w);
    auto step = omics::planar_flow_step_t(t, z0, u_hat, w, b);
    Var eps_sq = t.input(eps.array().square());
    Var term = t.sub(t.sub(t.square(step.z_next), logvar), eps_sq);
    Var per_sample = t.sub(t.scale(t.row_sum(term), 0.5), step.log_det);
    return t.add(t.mean_all(per_sample), t.mean_all(t.square(step.z_next)));
  };

  Tape t;
  Var mu = t.input(mu0, true);
  Var logvar = t.input(logvar0, true);
  Var u = t.input(u0, true);
  Var w = t.input(w0, true);
  Var b = t.input(b0, true);
  t.backward(build(t, mu, logvar, u, w, b));

  auto fd_for = [&](int which, const Mat& base) {
    return oracles::fd_gradient(
        [&, which](const Mat& m) {
          Tape tt;
          Var vmu = tt.input(which == 0 ? m : mu0, true);
          Var vlv = tt.input(which == 1 ? m : logvar0, true);
          Var vu = tt.input(which == 2 ? m : u0, true);
          Var vw = tt.input(which == 3 ? m : w0, true);
          Var vb = tt.input(which == 4 ? m : b0, true);
          return tt.val(build(tt, vmu, vlv, vu, vw, vb))(0, 0);
        },
        base);
  };
  REQUIRE(oracles::max_rel_error(t.grad_of(mu), fd_for(0, mu0)) < 1e-4);
  REQUIRE(oracles::max_rel_error(t.grad_of(logvar), fd_for(1, logvar0)) <
          1e-4);
  REQUIRE(oracles::max_rel_error(t.grad_of(u), fd_for(2, u0)) < 1e-4);
  REQUIRE(oracles::max_rel_error(t.grad_of(w), fd_for(3, w0)) < 1e-4);
  REQUIRE(oracles::max_rel_error(t.grad_of(b), fd_for(4, b0)) < 1e-4);
}

TEST_CASE("full model gradient spot-check against finite differences") {
  Rng rng(37);
  const int g = 6, d = 4;
  OmicsVae vae(small_config(g, d, 2), rng);
  const Mat x = random_mat(rng, 5, g);
  const Mat eps = random_mat(rng, 5, d);

  auto loss_value = [&]() {
    Tape t;
    Var xin = t.input(x);
    auto fwd = vae.forward_t(t, xin, eps, /*training=*/true, nullptr);
    return t.val(
        t.add(t.mean_all(t.square(t.sub(fwd.recon, xin))),
              t.scale(fwd.regularizer, 0.01)))(0, 0);
  };

  Tape t;
  Var xin = t.input(x);
  auto fwd = vae.forward_t(t, xin, eps, true, nullptr);
  Var loss = t.add(t.mean_all(t.square(t.sub(fwd.recon, xin))),
                   t.scale(fwd.regularizer, 0.01));
  for (ad::Param* p : vae.params()) p->zero_grad();
  t.backward(loss);

  int checked = 0;
  for (ad::Param* p : vae.params()) {
    if (p->name != "omics.flow0.u" && p->name != "omics.enc0.weight" &&
        p->name != "omics.mu_head.weight" && p->name != "omics.dec_out.bias")
      continue;
    p->ensure_grad();
    const Mat analytic = p->grad;
    Mat numeric(p->value.rows(), p->value.cols());
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        const double v = p->value(r, c);
        const double h = 1e-5 * std::max(1.0, std::abs(v));
        p->value(r, c) = v + h;
        const double fp = loss_value();
        p->value(r, c) = v - h;
        const double fm = loss_value();
        p->value(r, c) = v;
        numeric(r, c) = (fp - fm) / (2.0 * h);
      }
    REQUIRE(oracles::max_rel_error(analytic, numeric) < 1e-4);
    ++checked;
  }
  REQUIRE(checked == 4);
}
