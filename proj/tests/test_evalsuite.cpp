#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oracles.hpp"
#include "seal/core/rng.hpp"
#include "seal/evalsuite/linear_probe.hpp"
#include "seal/evalsuite/metrics.hpp"
#include "seal/evalsuite/pooling.hpp"
#include "seal/evalsuite/retrieval.hpp"

using namespace seal;
using Mat = Eigen::MatrixXd;

namespace {

Mat random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double sd = 1.0) {
  Mat m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal(0.0, sd);
  return m;
}

}  // namespace

TEST_CASE("pca_fit recovers structure deterministically") {
  Rng rng(3);

  SECTION("data already in a low-dimensional subspace reconstructs exactly") {
    const Mat basis = random_mat(rng, 2, 6);
    const Mat coef = random_mat(rng, 20, 2);
    const Mat x = coef * basis;
    const auto proj = evalsuite::pca_fit(x, 2);
    const Mat z = evalsuite::pca_transform(x, proj);
    const Mat back = (z * proj.components.transpose()).rowwise() + proj.mean;
    REQUIRE((back - x).cwiseAbs().maxCoeff() < 1e-9);
  }
  SECTION("components are orthonormal") {
    const Mat x = random_mat(rng, 15, 6);
    const auto proj = evalsuite::pca_fit(x, 4);
    const Mat gram = proj.components.transpose() * proj.components;
    REQUIRE((gram - Mat::Identity(4, 4)).cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("explained variance matches the Jacobi eigensolver oracle") {
    const Mat x = random_mat(rng, 10, 6);
    const auto proj = evalsuite::pca_fit(x, 6);
    const Mat centered = x.rowwise() - x.colwise().mean();
    const Mat cov = centered.transpose() * centered / 9.0;
    const Eigen::VectorXd oracle = oracles::jacobi_eigenvalues(cov);
    REQUIRE((proj.explained_var - oracle).cwiseAbs().maxCoeff() < 1e-8);
  }
  SECTION("sign convention makes the fit reproducible") {
    const Mat x = random_mat(rng, 12, 5);
    const auto a = evalsuite::pca_fit(x, 3);
    const auto b = evalsuite::pca_fit(x, 3);
    REQUIRE((a.components - b.components).cwiseAbs().maxCoeff() == 0.0);
    for (int c = 0; c < 3; ++c) {
      Eigen::Index idx;
      a.components.col(c).cwiseAbs().maxCoeff(&idx);
      REQUIRE(a.components(idx, c) > 0.0);
    }
  }
  SECTION("n_components too large errors") {
    const Mat x = random_mat(rng, 4, 6);
    REQUIRE_THROWS_AS(evalsuite::pca_fit(x, 5), DataError);
  }
}

TEST_CASE("ridge_fit matches closed form and the CG oracle") {
  Rng rng(7);

  SECTION("alpha 0 on exactly linear data leaves no residual") {
    const Mat z = random_mat(rng, 12, 3);
    const Mat w_true = random_mat(rng, 3, 2);
    const Mat y = (z * w_true).rowwise() + Eigen::RowVector2d(0.5, -1.0);
    const auto w = evalsuite::ridge_fit(z, y, 0.0);
    const Mat pred = evalsuite::ridge_predict(z, w);
    REQUIRE((pred - y).cwiseAbs().maxCoeff() < 1e-9);
  }
  SECTION("alpha to infinity shrinks weights to zero, prediction to mean") {
    const Mat z = random_mat(rng, 15, 3);
    const Mat y = random_mat(rng, 15, 2);
    const auto w = evalsuite::ridge_fit(z, y, 1e12);
    REQUIRE(w.coef.cwiseAbs().maxCoeff() < 1e-6);
    const Mat pred = evalsuite::ridge_predict(z, w);
    for (int c = 0; c < 2; ++c)
      REQUIRE(pred(0, c) == Catch::Approx(y.col(c).mean()).margin(1e-5));
  }
  SECTION("agrees with the conjugate-gradient oracle on 20x3 -> 2") {
    const Mat z = random_mat(rng, 20, 3);
    const Mat y = random_mat(rng, 20, 2);
    const double alpha = 0.7;
    const auto w = evalsuite::ridge_fit(z, y, alpha);
    const Mat oracle = oracles::cg_ridge(z, y, alpha);
    REQUIRE((w.coef - oracle.topRows(3)).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE((w.intercept - oracle.row(3)).cwiseAbs().maxCoeff() < 1e-6);
  }
  SECTION("singular system at alpha 0 errors") {
    Mat z = random_mat(rng, 10, 3);
    z.col(2) = z.col(0);  // rank-deficient
    const Mat y = random_mat(rng, 10, 1);
    REQUIRE_THROWS_AS(evalsuite::ridge_fit(z, y, 0.0), NumericError);
  }
}

TEST_CASE("kfold_probe") {
  Rng rng(11);

  SECTION("perfectly linear targets probe above 0.999") {
    const Mat emb = random_mat(rng, 60, 8);
    const Mat w = random_mat(rng, 8, 5);
    const Mat targets = emb * w;
    const auto result = evalsuite::kfold_probe(emb, targets, 5, 8, 1e-6, 1);
    REQUIRE(result.summary_pcc > 0.999);
  }
  SECTION("leave-one-out runs and returns finite metrics") {
    const Mat emb = random_mat(rng, 12, 4);
    const Mat targets = random_mat(rng, 12, 3);
    const auto result = evalsuite::kfold_probe(emb, targets, 12, 3, 1.0, 2);
    REQUIRE(std::isfinite(result.summary_pcc));
    REQUIRE(std::isfinite(result.summary_mse));
  }
  SECTION("mean PCC decreases monotonically with target noise") {
    std::vector<double> sigmas = {0.0, 0.5, 2.0};
    std::vector<double> mean_pcc(3, 0.0);
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      Rng data_rng(seed);
      const Mat emb = random_mat(data_rng, 80, 6);
      const Mat w = random_mat(data_rng, 6, 4);
      const Mat clean = emb * w;
      for (std::size_t s = 0; s < sigmas.size(); ++s) {
        Mat noisy = clean;
        for (Eigen::Index i = 0; i < noisy.rows(); ++i)
          for (Eigen::Index j = 0; j < noisy.cols(); ++j)
            noisy(i, j) += sigmas[s] * data_rng.normal();
        mean_pcc[s] +=
            evalsuite::kfold_probe(emb, noisy, 5, 6, 1.0, seed).summary_pcc /
            3.0;
      }
    }
    REQUIRE(mean_pcc[0] > mean_pcc[1]);
    REQUIRE(mean_pcc[1] > mean_pcc[2]);
  }
  SECTION("k larger than the spot count errors") {
    const Mat emb = random_mat(rng, 5, 3);
    REQUIRE_THROWS_AS(evalsuite::kfold_probe(emb, emb, 6, 2, 1.0, 0),
                      DataError);
  }
}

TEST_CASE("correlation and ranking metrics") {
  Rng rng(13);

  SECTION("pcc of a vector with itself is one") {
    Eigen::VectorXd x(5);
    x << 1, 3, 2, 5, 4;
    REQUIRE(evalsuite::metric_pcc(x, x) == Catch::Approx(1.0));
  }
  SECTION("zero variance defines pcc 0 with the degenerate flag") {
    Eigen::VectorXd x = Eigen::VectorXd::Ones(4);
    Eigen::VectorXd y(4);
    y << 1, 2, 3, 4;
    bool degenerate = false;
    REQUIRE(evalsuite::metric_pcc(x, y, &degenerate) == 0.0);
    REQUIRE(degenerate);
  }
  SECTION("spearman is invariant under strictly monotone transforms") {
    Eigen::VectorXd a(6), b(6);
    for (int i = 0; i < 6; ++i) {
      a(i) = rng.normal();
      b(i) = rng.normal();
    }
    const double base = evalsuite::metric_spearman(a, b);
    Eigen::VectorXd cubed = a.array().pow(3).matrix() * 2.5;
    cubed.array() += 7.0;
    REQUIRE(evalsuite::metric_spearman(cubed, b) ==
            Catch::Approx(base).epsilon(1e-12));
  }
  SECTION("auc on the worked example is 0.75") {
    Eigen::VectorXd scores(4);
    scores << 0.1, 0.4, 0.35, 0.8;
    REQUIRE(evalsuite::metric_auc(scores, {0, 0, 1, 1}) ==
            Catch::Approx(0.75));
  }
  SECTION("auc equals the brute-force pair count with ties") {
    for (int trial = 0; trial < 30; ++trial) {
      const auto n = static_cast<Eigen::Index>(5 + rng.below(46));
      Eigen::VectorXd scores(n);
      std::vector<int> labels;
      int n_pos = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        scores(i) = std::round(rng.normal() * 4.0) / 4.0;  // force ties
        labels.push_back(rng.uniform() < 0.5 ? 0 : 1);
        n_pos += labels.back();
      }
      if (n_pos == 0) labels[0] = 1;
      if (n_pos == static_cast<int>(n)) labels[0] = 0;
      REQUIRE(evalsuite::metric_auc(scores, labels) ==
              Catch::Approx(oracles::brute_force_auc(scores, labels))
                  .epsilon(1e-12));
    }
  }
  SECTION("auc without both classes errors") {
    Eigen::VectorXd scores(3);
    scores << 1, 2, 3;
    REQUIRE_THROWS_AS(evalsuite::metric_auc(scores, {1, 1, 1}), DataError);
  }
}

TEST_CASE("mean_pool") {
  Rng rng(17);
  SECTION("single-item bag returns the item") {
    const Mat bag = random_mat(rng, 1, 5);
    REQUIRE((evalsuite::mean_pool(bag) - bag.row(0).transpose()).norm() ==
            0.0);
  }
  SECTION("permutation invariant") {
    const Mat bag = random_mat(rng, 6, 4);
    Mat shuffled = bag;
    shuffled.row(0) = bag.row(5);
    shuffled.row(5) = bag.row(0);
    REQUIRE((evalsuite::mean_pool(bag) - evalsuite::mean_pool(shuffled))
                .cwiseAbs()
                .maxCoeff() < 1e-15);
  }
  SECTION("opposite vectors cancel") {
    Mat bag(2, 3);
    bag << 1, -2, 3, -1, 2, -3;
    REQUIRE(evalsuite::mean_pool(bag).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("abmil_pool gated attention") {
  Rng rng(19);
  const auto params = evalsuite::AttentionPool::seeded(5, 8, 3);

  SECTION("single item gets weight one") {
    const Mat bag = random_mat(rng, 1, 5);
    const auto out = evalsuite::abmil_pool(bag, params);
    REQUIRE(out.scores(0) == Catch::Approx(1.0));
    REQUIRE((out.pooled - bag.row(0).transpose()).cwiseAbs().maxCoeff() <
            1e-12);
  }
  SECTION("identical items share uniform scores") {
    Mat bag(4, 5);
    const Mat item = random_mat(rng, 1, 5);
    for (int i = 0; i < 4; ++i) bag.row(i) = item;
    const auto out = evalsuite::abmil_pool(bag, params);
    for (int i = 0; i < 4; ++i)
      REQUIRE(out.scores(i) == Catch::Approx(0.25).epsilon(1e-12));
  }
  SECTION("scores sum to one and output stays in the bag box") {
    const Mat bag = random_mat(rng, 7, 5);
    const auto out = evalsuite::abmil_pool(bag, params);
    REQUIRE(out.scores.sum() == Catch::Approx(1.0).margin(1e-6));
    for (Eigen::Index c = 0; c < 5; ++c) {
      REQUIRE(out.pooled(c) >= bag.col(c).minCoeff() - 1e-12);
      REQUIRE(out.pooled(c) <= bag.col(c).maxCoeff() + 1e-12);
    }
  }
  SECTION("permutation moves the scores with the items") {
    const Mat bag = random_mat(rng, 5, 5);
    Mat perm = bag;
    perm.row(1) = bag.row(3);
    perm.row(3) = bag.row(1);
    const auto a = evalsuite::abmil_pool(bag, params);
    const auto b = evalsuite::abmil_pool(perm, params);
    REQUIRE((a.pooled - b.pooled).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(a.scores(1) == Catch::Approx(b.scores(3)));
  }
  SECTION("empty bag errors") {
    REQUIRE_THROWS_AS(evalsuite::abmil_pool(Mat(0, 5), params), DataError);
  }
}

TEST_CASE("i2g_retrieve weights panels by cosine similarity") {
  Rng rng(23);
  const Mat refs = random_mat(rng, 10, 6);
  const Mat panels = random_mat(rng, 10, 4);

  SECTION("K=1 returns the nearest reference panel exactly") {
    const Eigen::VectorXd query = refs.row(3).transpose() * 2.0;
    const Eigen::VectorXd out =
        evalsuite::i2g_retrieve(query, refs, panels, 1);
    REQUIRE((out - panels.row(3).transpose()).cwiseAbs().maxCoeff() == 0.0);

    // nearest-neighbor oracle
    Eigen::Index best = 0;
    double best_sim = -2.0;
    for (Eigen::Index i = 0; i < refs.rows(); ++i) {
      const double s = evalsuite::cosine_similarity(
          query, refs.row(i).transpose());
      if (s > best_sim) {
        best_sim = s;
        best = i;
      }
    }
    REQUIRE(best == 3);
  }
  SECTION("equal similarities average the K panels") {
    Mat clones(4, 3);
    for (int i = 0; i < 4; ++i) clones.row(i) = Eigen::RowVector3d(1, 0, 0);
    const Mat cpanels = random_mat(rng, 4, 5);
    const Eigen::VectorXd out = evalsuite::i2g_retrieve(
        Eigen::Vector3d(2, 0, 0), clones, cpanels, 3);
    const Eigen::VectorXd mean =
        (cpanels.row(0) + cpanels.row(1) + cpanels.row(2)).transpose() / 3.0;
    REQUIRE((out - mean).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("K equal to the reference count with uniform sims is the mean") {
    Mat clones(5, 3);
    for (int i = 0; i < 5; ++i) clones.row(i) = Eigen::RowVector3d(0, 1, 0);
    const Mat cpanels = random_mat(rng, 5, 4);
    const Eigen::VectorXd out = evalsuite::i2g_retrieve(
        Eigen::Vector3d(0, 5, 0), clones, cpanels, 5);
    REQUIRE((out - cpanels.colwise().mean().transpose()).cwiseAbs()
                .maxCoeff() < 1e-7);
  }
  SECTION("singular weight sum errors") {
    Mat two(2, 2);
    two << 1, 0, -1, 0;
    Mat p2 = random_mat(rng, 2, 3);
    REQUIRE_THROWS_AS(
        evalsuite::i2g_retrieve(Eigen::Vector2d(0, 1), two, p2, 2),
        NumericError);
  }
  SECTION("K out of range errors") {
    REQUIRE_THROWS_AS(
        evalsuite::i2g_retrieve(Eigen::VectorXd::Ones(6), refs, panels, 11),
        DataError);
    REQUIRE_THROWS_AS(
        evalsuite::i2g_retrieve(Eigen::VectorXd::Ones(6), refs, panels, 0),
        DataError);
  }
}

TEST_CASE("g2i_build_query expands, filters, and averages") {
  const int n = 100;
  std::vector<std::string> genes = {"KLK3", "FRIEND", "NOISE", "FLAT"};
  Mat values(n, 4);
  Rng rng(29);
  for (int i = 0; i < n; ++i) {
    values(i, 0) = i + 1.0;               // active: 1..100
    values(i, 1) = 2.0 * (i + 1.0);       // perfectly correlated
    values(i, 2) = rng.normal(0.0, 1.0);  // uncorrelated
    values(i, 3) = 1.0;                   // constant
  }

  auto embed = [](const Mat& x) { return Mat(2.0 * x.leftCols(2)); };

  const auto query =
      evalsuite::g2i_build_query({"KLK3"}, values, genes, embed, 0.3, 0.75,
                                 0.5);

  SECTION("perfect correlation expands the active set to two") {
    REQUIRE(query.expanded_genes.size() == 2);
    REQUIRE(query.expanded_genes[0] == "KLK3");
    REQUIRE(query.expanded_genes[1] == "FRIEND");
  }
  SECTION("the 75th percentile keeps spots above 75") {
    // both expanded genes exceed their percentile on the same spots: 76..100
    REQUIRE(query.kept_spots.size() == 25);
    REQUIRE(query.kept_spots.front() == 75);  // value 76 > 75
  }
  SECTION("query embedding equals the recomputed mean of kept embeddings") {
    Mat kept(static_cast<Eigen::Index>(query.kept_spots.size()), 4);
    for (std::size_t i = 0; i < query.kept_spots.size(); ++i)
      kept.row(static_cast<Eigen::Index>(i)) = values.row(query.kept_spots[i]);
    const Mat kept_emb = embed(kept);
    const Eigen::VectorXd mean = kept_emb.colwise().mean().transpose();
    REQUIRE((query.query_embedding - mean).cwiseAbs().maxCoeff() < 1e-7);
    const Eigen::VectorXd vmean = kept.colwise().mean().transpose();
    REQUIRE((query.query_vector - vmean).cwiseAbs().maxCoeff() < 1e-7);
  }
  SECTION("no passing spot errors") {
    Mat flat = Mat::Ones(10, 4);
    REQUIRE_THROWS_AS(
        evalsuite::g2i_build_query({"KLK3"}, flat, genes, embed, 0.3, 0.75,
                                   0.5),
        DataError);
  }
  SECTION("unknown active gene errors") {
    REQUIRE_THROWS_AS(
        evalsuite::g2i_build_query({"MISSING"}, values, genes, embed),
        DataError);
  }
}

TEST_CASE("g2i_similarity_map scores patches by cosine") {
  Rng rng(31);
  const Mat patches = random_mat(rng, 8, 5);

  SECTION("query equal to a patch scores one there") {
    const auto map = evalsuite::g2i_similarity_map(
        patches.row(2).transpose(), patches);
    REQUIRE(map.scores(2) == Catch::Approx(1.0).epsilon(1e-12));
    REQUIRE(map.scores.minCoeff() >= -1.0 - 1e-12);
    REQUIRE(map.scores.maxCoeff() <= 1.0 + 1e-12);
  }
  SECTION("ranking is invariant under positive query rescaling") {
    const Eigen::VectorXd q = random_mat(rng, 5, 1);
    const auto a = evalsuite::g2i_similarity_map(q, patches);
    const auto b = evalsuite::g2i_similarity_map(7.5 * q, patches);
    REQUIRE((a.scores - b.scores).cwiseAbs().maxCoeff() < 1e-12);
  }
  SECTION("zero-norm embedding errors") {
    REQUIRE_THROWS_AS(
        evalsuite::g2i_similarity_map(Eigen::VectorXd::Zero(5), patches),
        NumericError);
  }
}
