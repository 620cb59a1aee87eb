#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "seal/core/rng.hpp"
#include "seal/losses/losses.hpp"

using namespace seal;
using losses::LossWeights;
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

Mat orthonormal_cols(Eigen::Index n, Eigen::Index k) {
  Mat m = Mat::Zero(n, k);
  for (Eigen::Index j = 0; j < k; ++j) m(j, j) = 1.0;
  return m;
}

}  // namespace

TEST_CASE("mse_loss basics") {
  Mat x = Mat::Zero(3, 4);
  REQUIRE(losses::mse_loss(x, x) == 0.0);
  REQUIRE(losses::mse_loss(x, Mat::Ones(3, 4)) == 1.0);
  // scaling the prediction changes the value (non-invariance witness)
  Mat y = Mat::Ones(3, 4);
  REQUIRE(losses::mse_loss(x, 2.0 * y) != losses::mse_loss(x, y));
  REQUIRE_THROWS_AS(losses::mse_loss(x, Mat::Ones(2, 4)), DataError);
}

TEST_CASE("cross_correlation matches the column-cosine definition") {
  SECTION("identity on orthonormal self-pairs") {
    const Mat x = orthonormal_cols(4, 3);
    const auto corr = losses::cross_correlation(x, x);
    REQUIRE((corr.C - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("orthogonal columns give zero") {
    Mat x(2, 1), y(2, 1);
    x << 1, 0;
    y << 0, 1;
    REQUIRE(losses::cross_correlation(x, y).C(0, 0) == 0.0);
  }
  SECTION("positive column scaling leaves C unchanged") {
    Rng rng(3);
    const Mat x = random_mat(rng, 6, 4);
    const auto base = losses::cross_correlation(x, x);
    REQUIRE((base.C - losses::cross_correlation(x, 3.0 * x).C)
                .cwiseAbs()
                .maxCoeff() < 1e-12);
  }
  SECTION("diagonal is one for self-correlation") {
    Rng rng(5);
    const Mat x = random_mat(rng, 8, 5);
    const auto corr = losses::cross_correlation(x, x);
    REQUIRE((corr.C.diagonal().array() - 1.0).abs().maxCoeff() < 1e-12);
    REQUIRE(corr.C.cwiseAbs().maxCoeff() <= 1.0 + 1e-6);
  }
}

TEST_CASE("invariance and redundancy losses") {
  const Mat eye = Mat::Identity(5, 5);
  REQUIRE(losses::invariance_loss({eye}) == 0.0);
  REQUIRE(losses::redundancy_loss({eye}) == 0.0);
  REQUIRE(losses::invariance_loss({Mat::Zero(5, 5)}) == 5.0);
  REQUIRE(losses::redundancy_loss({Mat::Ones(2, 2)}) == 2.0);
}

TEST_CASE("scale invariance: L_inv and L_red yes, L_mse no") {
  Rng rng(7);
  int mse_changed = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto b = static_cast<Eigen::Index>(3 + rng.below(6));
    const auto g = static_cast<Eigen::Index>(3 + rng.below(6));
    const Mat x = random_mat(rng, b, g);
    const Mat y = random_mat(rng, b, g);
    Mat scaled = y;
    for (Eigen::Index j = 0; j < g; ++j)
      scaled.col(j) *= rng.uniform(0.1, 10.0);

    const auto c0 = losses::cross_correlation(x, y);
    const auto c1 = losses::cross_correlation(x, scaled);
    REQUIRE(std::abs(losses::invariance_loss(c0) -
                     losses::invariance_loss(c1)) <= 1e-9);
    REQUIRE(std::abs(losses::redundancy_loss(c0) -
                     losses::redundancy_loss(c1)) <= 1e-9);
    if (losses::mse_loss(x, y) != losses::mse_loss(x, scaled)) ++mse_changed;
  }
  REQUIRE(mse_changed >= 99);
}

TEST_CASE("reconstruction_loss combines the three terms") {
  LossWeights w;
  SECTION("perfect reconstruction with orthonormal columns is zero") {
    const Mat x = orthonormal_cols(4, 3);
    REQUIRE(losses::reconstruction_loss(x, x, w) ==
            Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("zero correlation weights reduce to weighted mse") {
    Rng rng(9);
    const Mat x = random_mat(rng, 5, 4);
    const Mat y = random_mat(rng, 5, 4);
    LossWeights only_mse = w;
    only_mse.lambda_inv = 0.0;
    only_mse.lambda_red = 0.0;
    only_mse.lambda_mse = 2.5;
    REQUIRE(losses::reconstruction_loss(x, y, only_mse) ==
            Catch::Approx(2.5 * losses::mse_loss(x, y)));
  }
  SECTION("linear in the weights") {
    Rng rng(11);
    const Mat x = random_mat(rng, 5, 4);
    const Mat y = random_mat(rng, 5, 4);
    LossWeights wa = w;
    wa.lambda_red = 1.0;
    LossWeights wb = w;
    wb.lambda_red = 0.005;
    const auto corr = losses::cross_correlation(x, y);
    const double delta = losses::reconstruction_loss(x, y, wa) -
                         losses::reconstruction_loss(x, y, wb);
    REQUIRE(delta ==
            Catch::Approx((1.0 - 0.005) * losses::redundancy_loss(corr)));
  }
}

TEST_CASE("info_nce follows the symmetric softmax form") {
  SECTION("single pair is zero") {
    Mat z(1, 3);
    z << 1, 2, 3;
    REQUIRE(losses::info_nce(z, z, 0.05) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("orthonormal pair at tau 0.05 matches the hand-expanded value") {
    Mat z(2, 2);
    z << 1, 0, 0, 1;
    const double expected = 2.0 * std::log1p(std::exp(-20.0));
    REQUIRE(losses::info_nce(z, z, 0.05) ==
            Catch::Approx(expected).margin(1e-12));
  }
  SECTION("argument order does not matter") {
    Rng rng(13);
    const Mat a = random_mat(rng, 5, 4);
    const Mat b = random_mat(rng, 5, 4);
    REQUIRE(losses::info_nce(a, b, 0.1) ==
            Catch::Approx(losses::info_nce(b, a, 0.1)).epsilon(1e-12));
  }
  SECTION("zero-norm row errors") {
    Mat a = Mat::Ones(2, 3);
    Mat b = a;
    b.row(1).setZero();
    REQUIRE_THROWS_AS(losses::info_nce(a, b, 0.1), NumericError);
  }
  SECTION("matched pairs beat every row permutation (N <= 5, brute force)") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
      const auto n = static_cast<Eigen::Index>(2 + rng.below(4));
      const Mat z = random_mat(rng, n, n + 1);
      const double matched = losses::info_nce(z, z, 0.2);
      std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
      std::iota(perm.begin(), perm.end(), 0);
      do {
        bool displaced = false;
        for (Eigen::Index i = 0; i < n; ++i)
          displaced |= perm[static_cast<std::size_t>(i)] != i;
        if (!displaced) continue;
        Mat pz(n, z.cols());
        for (Eigen::Index i = 0; i < n; ++i)
          pz.row(i) = z.row(perm[static_cast<std::size_t>(i)]);
        REQUIRE(matched <= losses::info_nce(z, pz, 0.2) + 1e-12);
      } while (std::next_permutation(perm.begin(), perm.end()));
    }
  }
}

TEST_CASE("grl composes to minus lambda times the plain gradient") {
  Rng rng(19);
  const Mat z = random_mat(rng, 4, 3);
  const Mat head = random_mat(rng, 3, 2);
  const std::vector<int> labels = {0, 1, 0, 1};

  for (double lambda : {0.0, 0.001, 1.0}) {
    Tape with;
    Var zin_w = with.input(z, true);
    Var logits_w =
        with.matmul(with.grl(zin_w, lambda), with.input(head, false));
    with.backward(with.cross_entropy_rows(logits_w, labels));

    Tape without;
    Var zin = without.input(z, true);
    Var logits = without.matmul(zin, without.input(head, false));
    without.backward(without.cross_entropy_rows(logits, labels));

    const Mat expected = -lambda * without.grad_of(zin);
    REQUIRE((with.grad_of(zin_w) - expected).cwiseAbs().maxCoeff() <= 1e-7);
  }
}

TEST_CASE("domain_loss is the mean cross entropy over both streams") {
  Rng rng(23);
  SECTION("uniform logits give ln(n_domains)") {
    losses::DomainHead head(3, 4, rng);
    head.fc1.weight.value.setZero();
    head.fc1.bias.value.setZero();
    head.fc2.weight.value.setZero();
    head.fc2.bias.value.setZero();
    const Mat z = random_mat(rng, 5, 3);
    const std::vector<int> domains = {0, 1, 2, 3, 0};
    REQUIRE(losses::domain_loss(head, z, z, domains) ==
            Catch::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SECTION("confident correct logits drive the loss to zero") {
    losses::DomainHead head(2, 2, rng);
    head.fc1.weight.value = Mat::Identity(2, 2) * 50.0;
    head.fc1.bias.value.setZero();
    head.fc2.weight.value = Mat::Identity(2, 2) * 50.0;
    head.fc2.bias.value.setZero();
    Mat z(2, 2);
    z << 1, 0, 0, 1;
    REQUIRE(losses::domain_loss(head, z, z, {0, 1}) < 1e-6);
  }
  SECTION("single-domain dataset yields exactly zero") {
    losses::DomainHead head(3, 1, rng);
    const Mat z = random_mat(rng, 4, 3);
    REQUIRE(losses::domain_loss(head, z, z, {0, 0, 0, 0}) == 0.0);
  }
  SECTION("label outside range errors") {
    losses::DomainHead head(3, 2, rng);
    const Mat z = random_mat(rng, 2, 3);
    REQUIRE_THROWS_AS(losses::domain_loss(head, z, z, {0, 2}), DataError);
  }
}

TEST_CASE("stage2_loss composes the weighted total with a breakdown") {
  losses::Stage2Parts parts{0.7, 1.3, 0.4, 2.0};
  SECTION("all weights zero") {
    LossWeights w;
    w.lambda_contrast = w.lambda_rec_img = w.lambda_rec_gene = w.lambda_da = 0;
    REQUIRE(losses::stage2_loss(parts, w).total == 0.0);
  }
  SECTION("published defaults") {
    LossWeights w;
    REQUIRE(w.lambda_contrast == 1.0);
    REQUIRE(w.lambda_rec_img == 1.0);
    REQUIRE(w.lambda_rec_gene == 1.0);
    REQUIRE(w.lambda_da == 0.001);
    REQUIRE(w.tau == 0.05);
  }
  SECTION("breakdown recombines to the total") {
    LossWeights w;
    w.lambda_contrast = 0.5;
    w.lambda_rec_img = 2.0;
    w.lambda_rec_gene = 0.25;
    w.lambda_da = 0.125;
    const auto out = losses::stage2_loss(parts, w);
    const double recombined = w.lambda_contrast * out.breakdown.at("infonce") +
                              w.lambda_rec_img * out.breakdown.at("rec_img") +
                              w.lambda_rec_gene * out.breakdown.at("rec_gene") +
                              w.lambda_da * out.breakdown.at("da");
    REQUIRE(std::abs(out.total - recombined) <= 1e-9);
  }
}

TEST_CASE("loss gradients match finite differences on small shapes") {
  Rng rng(29);
  const Mat x = random_mat(rng, 5, 4);
  const Mat y = random_mat(rng, 5, 4);
  LossWeights w;

  auto check_xy = [&](auto builder, double tol = 1e-4) {
    Tape t;
    Var xv = t.input(x, true);
    Var yv = t.input(y, true);
    t.backward(builder(t, xv, yv));
    const Mat gx = t.grad_of(xv);
    const Mat gy = t.grad_of(yv);
    auto value_x = [&](const Mat& m) {
      Tape tt;
      return tt.val(builder(tt, tt.input(m, true), tt.input(y, true)))(0, 0);
    };
    auto value_y = [&](const Mat& m) {
      Tape tt;
      return tt.val(builder(tt, tt.input(x, true), tt.input(m, true)))(0, 0);
    };
    REQUIRE(oracles::max_rel_error(gx, oracles::fd_gradient(value_x, x)) <
            tol);
    REQUIRE(oracles::max_rel_error(gy, oracles::fd_gradient(value_y, y)) <
            tol);
  };

  check_xy([&](Tape& t, Var a, Var b) { return losses::mse_loss_t(t, a, b); });
  check_xy([&](Tape& t, Var a, Var b) {
    return losses::invariance_loss_t(t, losses::cross_correlation_t(t, a, b));
  });
  check_xy([&](Tape& t, Var a, Var b) {
    return losses::redundancy_loss_t(t, losses::cross_correlation_t(t, a, b));
  });
  check_xy([&](Tape& t, Var a, Var b) {
    return losses::reconstruction_loss_t(t, a, b, w);
  });
  check_xy([&](Tape& t, Var a, Var b) {
    return losses::info_nce_t(t, a, b, 0.3);
  });

  // domain loss gradient through the head (the grl modification is checked
  // separately: finite differences see the forward value, which grl leaves
  // untouched by design)
  losses::DomainHead head(4, 3, rng);
  const std::vector<int> domains = {0, 2, 1, 0, 2};
  auto da_builder = [&](Tape& t, Var a, Var b) {
    return losses::domain_loss_t(t, head, a, b, domains);
  };
  check_xy(da_builder);

  // all losses are non-negative on these inputs
  REQUIRE(losses::mse_loss(x, y) >= 0.0);
  REQUIRE(losses::invariance_loss(losses::cross_correlation(x, y)) >= 0.0);
  REQUIRE(losses::redundancy_loss(losses::cross_correlation(x, y)) >= 0.0);
  REQUIRE(losses::info_nce(x, y, 0.3) >= 0.0);
}
