#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "seal/core/errors.hpp"

namespace seal::ingest {

enum class Stage { raw_counts, normalized, logged, smoothed };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::raw_counts: return "raw_counts";
    case Stage::normalized: return "normalized";
    case Stage::logged: return "logged";
    case Stage::smoothed: return "smoothed";
  }
  return "?";
}

inline Stage stage_from_name(const std::string& s) {
  if (s == "raw_counts") return Stage::raw_counts;
  if (s == "normalized") return Stage::normalized;
  if (s == "logged") return Stage::logged;
  if (s == "smoothed") return Stage::smoothed;
  throw DataError("unknown stage: " + s);
}

struct SpotCoord {
  int row = 0;
  int col = 0;
  double x_um = 0.0;
  double y_um = 0.0;
};

// Dense spot-by-gene expression for one sample. Stage transitions are
// monotone: raw_counts -> normalized -> logged -> smoothed.
struct SpotTable {
  std::string sample_id;
  std::string patient_id;
  std::string organ;
  int domain_id = 0;
  std::vector<std::string> barcodes;
  std::vector<SpotCoord> coords;
  Eigen::MatrixXd values;  // [n_spots x n_genes]
  std::vector<std::string> gene_names;
  Stage stage = Stage::raw_counts;

  Eigen::Index n_spots() const { return values.rows(); }
  Eigen::Index n_genes() const { return values.cols(); }

  void check_consistent() const {
    if (static_cast<Eigen::Index>(barcodes.size()) != n_spots())
      throw DataError(sample_id + ": barcode count != spot count");
    if (static_cast<Eigen::Index>(coords.size()) != n_spots())
      throw DataError(sample_id + ": coord count != spot count");
    if (static_cast<Eigen::Index>(gene_names.size()) != n_genes())
      throw DataError(sample_id + ": gene name count != gene count");
    if (!values.allFinite())
      throw DataError(sample_id + ": non-finite expression value");
  }

  void require_stage(Stage expected, const std::string& op) const {
    if (stage != expected)
      throw DataError(op + ": " + sample_id + " is in stage " +
                      stage_name(stage) + ", expected " +
                      stage_name(expected));
  }
};

enum class GeneProvenance { hvg, supplement };

// Ordered training panel; its order is the canonical column order for every
// downstream matrix.
struct GenePanel {
  std::vector<std::string> genes;
  std::vector<GeneProvenance> provenance;
  int target_size = 0;
};

// Six-neighbor adjacency on the Visium lattice for one sample.
struct HexLattice {
  std::vector<std::vector<int>> neighbors;
  std::string source_sample;
};

enum class Split { train, val, test };

inline const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

inline Split split_from_name(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw DataError("unknown split: " + s);
}

struct SplitManifest {
  std::map<std::string, Split> assignments;  // patient_id -> split
  std::array<double, 3> ratios{0.8, 0.1, 0.1};
  std::string stratify_key = "organ";
};

}  // namespace seal::ingest
