#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "seal/core/errors.hpp"
#include "seal/core/tsv.hpp"

namespace seal::evalsuite {

inline double cosine_similarity(const Eigen::VectorXd& a,
                                const Eigen::VectorXd& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na < 1e-12 || nb < 1e-12)
    throw NumericError("cosine_similarity: zero-norm embedding");
  return a.dot(b) / (na * nb);
}

// Image-to-gene retrieval: similarity-weighted average of the top-K
// reference panels. Negative similarities enter the weights verbatim; a
// weight sum within 1e-12 of zero is a singular-sum error.
// clamp_negative=true replaces negative weights by zero (off by default).
inline Eigen::VectorXd i2g_retrieve(const Eigen::VectorXd& query,
                                    const Eigen::MatrixXd& ref_embeddings,
                                    const Eigen::MatrixXd& ref_panels, int k,
                                    bool clamp_negative = false) {
  const auto m = ref_embeddings.rows();
  if (m == 0) throw DataError("i2g_retrieve: empty reference set");
  if (ref_panels.rows() != m)
    throw DataError("i2g_retrieve: embeddings / panels row mismatch");
  if (k < 1 || k > m)
    throw DataError("i2g_retrieve: K outside [1, reference count]");

  Eigen::VectorXd sims(m);
  for (Eigen::Index i = 0; i < m; ++i)
    sims(i) = cosine_similarity(query, ref_embeddings.row(i).transpose());

  std::vector<Eigen::Index> order(static_cast<std::size_t>(m));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (sims(a) != sims(b)) return sims(a) > sims(b);
    return a < b;
  });

  Eigen::VectorXd acc = Eigen::VectorXd::Zero(ref_panels.cols());
  double weight_sum = 0.0;
  for (int i = 0; i < k; ++i) {
    const Eigen::Index idx = order[static_cast<std::size_t>(i)];
    double s = sims(idx);
    if (clamp_negative && s < 0.0) s = 0.0;
    acc += s * ref_panels.row(idx).transpose();
    weight_sum += s;
  }
  if (std::abs(weight_sum) < 1e-12)
    throw NumericError("i2g_retrieve: singular similarity-weight sum");
  return acc / weight_sum;
}

struct MolecularQuery {
  std::vector<std::string> active_genes;
  std::vector<std::string> expanded_genes;
  Eigen::VectorXd query_vector;     // mean expression of kept spots
  Eigen::VectorXd query_embedding;  // mean omics embedding of kept spots
  std::vector<Eigen::Index> kept_spots;
};

// Nearest-rank percentile: the smallest value with at least q of the mass
// at or below it.
inline double percentile_nearest_rank(Eigen::VectorXd values, double q) {
  std::sort(values.begin(), values.end());
  const auto n = values.size();
  const auto rank = static_cast<Eigen::Index>(
      std::ceil(q * static_cast<double>(n)));
  return values(std::clamp<Eigen::Index>(rank - 1, 0, n - 1));
}

// Builds the in-silico transcriptomic query: expands the active set by
// genes with pooled PCC above pcc_threshold to any active gene, keeps spots
// where at least min_frac of the expanded genes exceed their per-gene
// percentile, then averages expression and omics embeddings of those spots.
inline MolecularQuery g2i_build_query(
    const std::vector<std::string>& active, const Eigen::MatrixXd& values,
    const std::vector<std::string>& gene_names,
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& omics_embed,
    double pcc_threshold = 0.3, double percentile = 0.75,
    double min_frac = 0.5) {
  if (active.empty()) throw DataError("g2i_build_query: no active genes");
  std::vector<Eigen::Index> active_cols;
  for (const auto& gene : active) {
    const auto it = std::find(gene_names.begin(), gene_names.end(), gene);
    if (it == gene_names.end())
      throw DataError("g2i_build_query: active gene not in panel: " + gene);
    active_cols.push_back(it - gene_names.begin());
  }

  const auto n = values.rows();
  const auto g_total = values.cols();
  if (n == 0) throw DataError("g2i_build_query: empty table");

  // Pooled Pearson correlation of every gene against each active gene.
  const Eigen::RowVectorXd mean = values.colwise().mean();
  const Eigen::MatrixXd centered = values.rowwise() - mean;
  const Eigen::VectorXd norms =
      centered.array().square().colwise().sum().sqrt();
  std::vector<bool> in_expanded(static_cast<std::size_t>(g_total), false);
  for (Eigen::Index a : active_cols)
    in_expanded[static_cast<std::size_t>(a)] = true;
  for (Eigen::Index g = 0; g < g_total; ++g) {
    if (in_expanded[static_cast<std::size_t>(g)]) continue;
    if (norms(g) <= 0.0) continue;
    double best = -1.0;
    for (Eigen::Index a : active_cols) {
      if (norms(a) <= 0.0) continue;
      best = std::max(best, centered.col(g).dot(centered.col(a)) /
                                (norms(g) * norms(a)));
    }
    if (best > pcc_threshold) in_expanded[static_cast<std::size_t>(g)] = true;
  }

  MolecularQuery query;
  query.active_genes = active;
  std::vector<Eigen::Index> expanded_cols;
  for (Eigen::Index g = 0; g < g_total; ++g)
    if (in_expanded[static_cast<std::size_t>(g)]) {
      expanded_cols.push_back(g);
      query.expanded_genes.push_back(gene_names[static_cast<std::size_t>(g)]);
    }

  Eigen::VectorXd thresholds(static_cast<Eigen::Index>(expanded_cols.size()));
  for (std::size_t j = 0; j < expanded_cols.size(); ++j)
    thresholds(static_cast<Eigen::Index>(j)) =
        percentile_nearest_rank(values.col(expanded_cols[j]), percentile);

  const double needed =
      min_frac * static_cast<double>(expanded_cols.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    int above = 0;
    for (std::size_t j = 0; j < expanded_cols.size(); ++j)
      if (values(i, expanded_cols[j]) > thresholds(static_cast<Eigen::Index>(j)))
        ++above;
    if (static_cast<double>(above) >= needed) query.kept_spots.push_back(i);
  }
  if (query.kept_spots.empty())
    throw DataError("g2i_build_query: no spot passes the percentile filter");

  Eigen::MatrixXd kept(static_cast<Eigen::Index>(query.kept_spots.size()),
                       g_total);
  for (std::size_t i = 0; i < query.kept_spots.size(); ++i)
    kept.row(static_cast<Eigen::Index>(i)) = values.row(query.kept_spots[i]);
  query.query_vector = kept.colwise().mean().transpose();
  const Eigen::MatrixXd embeddings = omics_embed(kept);
  if (embeddings.rows() != kept.rows())
    throw DataError("g2i_build_query: embedder returned wrong row count");
  query.query_embedding = embeddings.colwise().mean().transpose();
  return query;
}

struct SimilarityMap {
  Eigen::VectorXd scores;  // per patch, in [-1, 1]
};

inline SimilarityMap g2i_similarity_map(const Eigen::VectorXd& query_embedding,
                                        const Eigen::MatrixXd& patch_embeddings) {
  SimilarityMap map;
  map.scores.resize(patch_embeddings.rows());
  for (Eigen::Index i = 0; i < patch_embeddings.rows(); ++i)
    map.scores(i) = cosine_similarity(query_embedding,
                                      patch_embeddings.row(i).transpose());
  return map;
}

inline void write_similarity_tsv(const std::filesystem::path& path,
                                 const std::vector<double>& xs,
                                 const std::vector<double>& ys,
                                 const Eigen::VectorXd& scores) {
  if (xs.size() != ys.size() ||
      static_cast<Eigen::Index>(xs.size()) != scores.size())
    throw DataError("write_similarity_tsv: length mismatch");
  TsvWriter out(path);
  out.row("x", "y", "score");
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    out.row(xs[static_cast<std::size_t>(i)], ys[static_cast<std::size_t>(i)],
            scores(i));
}

// Rasterizes scores onto the bounding grid of the coordinates as a binary
// PGM (P5) image; empty cells render black.
inline void write_similarity_pgm(const std::filesystem::path& path,
                                 const std::vector<double>& xs,
                                 const std::vector<double>& ys,
                                 const Eigen::VectorXd& scores,
                                 int raster_size = 256) {
  if (scores.size() == 0) throw DataError("write_similarity_pgm: no scores");
  const double min_x = *std::min_element(xs.begin(), xs.end());
  const double max_x = *std::max_element(xs.begin(), xs.end());
  const double min_y = *std::min_element(ys.begin(), ys.end());
  const double max_y = *std::max_element(ys.begin(), ys.end());
  const double span_x = std::max(max_x - min_x, 1e-9);
  const double span_y = std::max(max_y - min_y, 1e-9);
  const double lo = scores.minCoeff();
  const double hi = scores.maxCoeff();
  const double span_s = std::max(hi - lo, 1e-12);

  std::vector<unsigned char> pixels(
      static_cast<std::size_t>(raster_size) * raster_size, 0);
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const int px = std::min(
        raster_size - 1,
        static_cast<int>((xs[static_cast<std::size_t>(i)] - min_x) / span_x *
                         (raster_size - 1)));
    const int py = std::min(
        raster_size - 1,
        static_cast<int>((ys[static_cast<std::size_t>(i)] - min_y) / span_y *
                         (raster_size - 1)));
    const auto value = static_cast<unsigned char>(
        std::lround(1.0 + 254.0 * (scores(i) - lo) / span_s));
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int qx = std::clamp(px + dx, 0, raster_size - 1);
        const int qy = std::clamp(py + dy, 0, raster_size - 1);
        pixels[static_cast<std::size_t>(qy) * raster_size + qx] = value;
      }
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write raster: " + path.string());
  out << "P5\n" << raster_size << ' ' << raster_size << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
}

}  // namespace seal::evalsuite
