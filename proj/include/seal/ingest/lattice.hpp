#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "seal/ingest/spot_table.hpp"

namespace seal::ingest {

// Visium six-neighbor adjacency: neighbors of (r, c) are (r, c±2) and
// (r±1, c±1). Off-tissue positions are simply absent.
inline HexLattice build_hex_adjacency(const SpotTable& table) {
  std::map<std::pair<int, int>, int> index_of;
  for (Eigen::Index i = 0; i < table.n_spots(); ++i) {
    const auto key = std::make_pair(table.coords[static_cast<std::size_t>(i)].row,
                                    table.coords[static_cast<std::size_t>(i)].col);
    if (!index_of.emplace(key, static_cast<int>(i)).second)
      throw DataError(table.sample_id + ": duplicate lattice position (" +
                      std::to_string(key.first) + ", " +
                      std::to_string(key.second) + ")");
  }

  HexLattice lattice;
  lattice.source_sample = table.sample_id;
  lattice.neighbors.resize(static_cast<std::size_t>(table.n_spots()));
  constexpr int offsets[6][2] = {{0, -2}, {0, 2},  {-1, -1},
                                 {-1, 1}, {1, -1}, {1, 1}};
  for (Eigen::Index i = 0; i < table.n_spots(); ++i) {
    const auto& c = table.coords[static_cast<std::size_t>(i)];
    for (const auto& off : offsets) {
      auto it = index_of.find({c.row + off[0], c.col + off[1]});
      if (it != index_of.end())
        lattice.neighbors[static_cast<std::size_t>(i)].push_back(it->second);
    }
  }
  return lattice;
}

// out_i = (x_i + context_i) / 2 with context_i the mean over lattice
// neighbors; a spot with no neighbors keeps its own value. Single pass over
// the precomputed adjacency; summation order is the neighbor-list order so
// the naive per-spot loop reproduces it exactly.
inline SpotTable smooth_local(const SpotTable& table,
                              const HexLattice& lattice) {
  table.require_stage(Stage::logged, "smooth_local");
  if (static_cast<Eigen::Index>(lattice.neighbors.size()) != table.n_spots())
    throw DataError(table.sample_id + ": lattice size " +
                    std::to_string(lattice.neighbors.size()) +
                    " != spot count " + std::to_string(table.n_spots()));

  SpotTable out = table;
  for (Eigen::Index i = 0; i < table.n_spots(); ++i) {
    const auto& nbrs = lattice.neighbors[static_cast<std::size_t>(i)];
    if (nbrs.empty()) continue;  // context := the spot itself
    Eigen::RowVectorXd context = Eigen::RowVectorXd::Zero(table.n_genes());
    for (int j : nbrs) context += table.values.row(j);
    context /= static_cast<double>(nbrs.size());
    out.values.row(i) = (table.values.row(i) + context) / 2.0;
  }
  out.stage = Stage::smoothed;
  return out;
}

}  // namespace seal::ingest
