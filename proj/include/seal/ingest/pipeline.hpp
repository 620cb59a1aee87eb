#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "seal/core/tsv.hpp"
#include "seal/ingest/spot_table.hpp"

namespace seal::ingest {

// Loads one raw sample directory: genes.tsv (one name per line), spots.tsv
// (header + barcode/array_row/array_col/x_um/y_um), counts.tsv (0-based
// spot_index, gene_index, count triplets). Optional meta.json supplies
// patient/organ/domain metadata.
inline SpotTable load_sample(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  for (const char* name : {"genes.tsv", "spots.tsv", "counts.tsv"})
    if (!fs::exists(dir / name))
      throw DataError("missing file in sample dir " + dir.string() + ": " +
                      name);

  SpotTable table;
  table.sample_id = dir.filename().string();
  table.patient_id = table.sample_id;
  table.organ = "unknown";

  if (fs::exists(dir / "meta.json")) {
    std::ifstream meta_in(dir / "meta.json");
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    if (meta.contains("sample_id")) table.sample_id = meta["sample_id"];
    if (meta.contains("patient_id")) table.patient_id = meta["patient_id"];
    if (meta.contains("organ")) table.organ = meta["organ"];
    if (meta.contains("domain_id")) table.domain_id = meta["domain_id"];
  }

  for (const std::string& line : read_lines(dir / "genes.tsv"))
    if (!line.empty()) table.gene_names.push_back(line);
  if (table.gene_names.empty())
    throw DataError(table.sample_id + ": empty gene panel");

  const auto spot_lines = read_lines(dir / "spots.tsv");
  if (spot_lines.size() < 2)
    throw DataError(table.sample_id + ": spots.tsv has no data rows");
  std::unordered_set<std::string> seen_barcodes;
  for (std::size_t i = 1; i < spot_lines.size(); ++i) {
    const auto fields = split_tab(spot_lines[i]);
    if (fields.size() != 5)
      throw DataError(table.sample_id + ": spots.tsv row " +
                      std::to_string(i) + " has " +
                      std::to_string(fields.size()) + " fields, expected 5");
    if (!seen_barcodes.insert(fields[0]).second)
      throw DataError(table.sample_id + ": duplicate barcode " + fields[0]);
    table.barcodes.push_back(fields[0]);
    SpotCoord c;
    c.row = static_cast<int>(parse_int(fields[1], "array_row"));
    c.col = static_cast<int>(parse_int(fields[2], "array_col"));
    c.x_um = parse_double(fields[3], "x_um");
    c.y_um = parse_double(fields[4], "y_um");
    table.coords.push_back(c);
  }

  const auto n_spots = static_cast<Eigen::Index>(table.barcodes.size());
  const auto n_genes = static_cast<Eigen::Index>(table.gene_names.size());
  table.values = Eigen::MatrixXd::Zero(n_spots, n_genes);
  for (const std::string& line : read_lines(dir / "counts.tsv")) {
    if (line.empty()) continue;
    const auto fields = split_tab(line);
    if (fields.size() != 3)
      throw DataError(table.sample_id + ": counts.tsv triplet has " +
                      std::to_string(fields.size()) + " fields");
    const long long spot = parse_int(fields[0], "spot_index");
    const long long gene = parse_int(fields[1], "gene_index");
    const double count = parse_double(fields[2], "count");
    if (spot < 0 || spot >= n_spots)
      throw DataError(table.sample_id + ": spot index " +
                      std::to_string(spot) + " out of range [0, " +
                      std::to_string(n_spots) + ")");
    if (gene < 0 || gene >= n_genes)
      throw DataError(table.sample_id + ": gene index " +
                      std::to_string(gene) + " out of range [0, " +
                      std::to_string(n_genes) + ")");
    if (count < 0.0 || count != std::floor(count) || !std::isfinite(count))
      throw DataError(table.sample_id + ": count at (" +
                      std::to_string(spot) + ", " + std::to_string(gene) +
                      ") is not a non-negative integer");
    table.values(static_cast<Eigen::Index>(spot),
                 static_cast<Eigen::Index>(gene)) += count;
  }

  table.stage = Stage::raw_counts;
  table.check_consistent();
  return table;
}

// Renames genes via a user-supplied mapping; sources colliding on one target
// have their count columns summed (additive transcript semantics).
inline SpotTable rename_genes(const SpotTable& table,
                              const std::map<std::string, std::string>& mapping) {
  std::vector<std::string> renamed(table.gene_names.size());
  for (std::size_t g = 0; g < table.gene_names.size(); ++g) {
    auto it = mapping.find(table.gene_names[g]);
    renamed[g] = it == mapping.end() ? table.gene_names[g] : it->second;
  }

  std::vector<std::string> out_names;
  std::unordered_map<std::string, Eigen::Index> position;
  std::vector<std::vector<Eigen::Index>> groups;
  for (std::size_t g = 0; g < renamed.size(); ++g) {
    auto it = position.find(renamed[g]);
    if (it == position.end()) {
      position.emplace(renamed[g], static_cast<Eigen::Index>(out_names.size()));
      out_names.push_back(renamed[g]);
      groups.push_back({static_cast<Eigen::Index>(g)});
    } else {
      groups[static_cast<std::size_t>(it->second)].push_back(
          static_cast<Eigen::Index>(g));
    }
  }

  SpotTable out = table;
  out.gene_names = out_names;
  out.values = Eigen::MatrixXd::Zero(table.n_spots(),
                                     static_cast<Eigen::Index>(out_names.size()));
  for (std::size_t j = 0; j < groups.size(); ++j)
    for (Eigen::Index src : groups[j])
      out.values.col(static_cast<Eigen::Index>(j)) += table.values.col(src);
  out.check_consistent();
  return out;
}

inline std::map<std::string, std::string> load_rename_mapping(
    const std::filesystem::path& path) {
  std::map<std::string, std::string> mapping;
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) continue;
    const auto fields = split_tab(line);
    if (fields.size() != 2 || fields[0].empty() || fields[1].empty())
      throw DataError("malformed mapping line: '" + line + "'");
    mapping[fields[0]] = fields[1];
  }
  return mapping;
}

struct HarmonizeResult {
  std::vector<std::string> shared_genes;
  std::vector<SpotTable> kept;
  std::vector<std::string> dropped;
};

// Greedy panel alignment: seed the reference with the largest panel, walk
// samples by descending panel size, keep a sample iff it matches at least
// min_overlap reference genes, and shrink the reference to the intersection
// on every keep. Kept samples are re-ordered to the final shared gene list.
inline HarmonizeResult harmonize_panels(const std::vector<SpotTable>& samples,
                                        int min_overlap) {
  if (samples.empty()) throw DataError("harmonize_panels: no samples");
  if (min_overlap < 1) throw DataError("harmonize_panels: min_overlap < 1");
  for (const auto& s : samples) s.require_stage(Stage::raw_counts, "harmonize_panels");

  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (samples[a].gene_names.size() != samples[b].gene_names.size())
      return samples[a].gene_names.size() > samples[b].gene_names.size();
    return samples[a].sample_id < samples[b].sample_id;
  });

  // Reference kept as an ordered list (initial order from the seed panel);
  // intersections preserve that order.
  std::vector<std::string> reference = samples[order[0]].gene_names;
  std::vector<std::size_t> kept_idx;
  std::vector<std::string> dropped;

  for (std::size_t i : order) {
    std::unordered_set<std::string> panel(samples[i].gene_names.begin(),
                                          samples[i].gene_names.end());
    std::vector<std::string> intersection;
    for (const auto& g : reference)
      if (panel.count(g)) intersection.push_back(g);
    if (static_cast<int>(intersection.size()) >= min_overlap) {
      reference = std::move(intersection);
      kept_idx.push_back(i);
    } else {
      dropped.push_back(samples[i].sample_id);
    }
  }
  if (kept_idx.empty())
    throw DataError("harmonize_panels: every sample dropped (min_overlap=" +
                    std::to_string(min_overlap) + ")");

  HarmonizeResult result;
  result.shared_genes = reference;
  result.dropped = std::move(dropped);
  // Restore input order among kept samples, then project columns.
  std::sort(kept_idx.begin(), kept_idx.end());
  for (std::size_t i : kept_idx) {
    const SpotTable& src = samples[i];
    std::unordered_map<std::string, Eigen::Index> col_of;
    for (std::size_t g = 0; g < src.gene_names.size(); ++g)
      col_of.emplace(src.gene_names[g], static_cast<Eigen::Index>(g));
    SpotTable t = src;
    t.gene_names = reference;
    t.values.resize(src.n_spots(),
                    static_cast<Eigen::Index>(reference.size()));
    for (std::size_t g = 0; g < reference.size(); ++g)
      t.values.col(static_cast<Eigen::Index>(g)) =
          src.values.col(col_of.at(reference[g]));
    result.kept.push_back(std::move(t));
  }
  return result;
}

// Removes genes whose pooled nonzero-spot fraction across all tables falls
// below min_frac; the same genes are removed from every table.
inline std::vector<SpotTable> filter_genes_by_prevalence(
    const std::vector<SpotTable>& tables, double min_frac) {
  if (tables.empty()) throw DataError("filter_genes_by_prevalence: no tables");
  if (min_frac < 0.0 || min_frac > 1.0)
    throw DataError("filter_genes_by_prevalence: min_frac outside [0, 1]");
  const auto& genes = tables.front().gene_names;
  for (const auto& t : tables) {
    t.require_stage(Stage::raw_counts, "filter_genes_by_prevalence");
    if (t.gene_names != genes)
      throw DataError("filter_genes_by_prevalence: panels not harmonized");
  }

  const auto n_genes = static_cast<Eigen::Index>(genes.size());
  Eigen::VectorXd nonzero = Eigen::VectorXd::Zero(n_genes);
  double total_spots = 0.0;
  for (const auto& t : tables) {
    total_spots += static_cast<double>(t.n_spots());
    for (Eigen::Index g = 0; g < n_genes; ++g)
      nonzero(g) += (t.values.col(g).array() != 0.0).count();
  }

  std::vector<Eigen::Index> keep;
  for (Eigen::Index g = 0; g < n_genes; ++g)
    if (nonzero(g) / total_spots >= min_frac) keep.push_back(g);
  if (keep.empty())
    throw DataError("filter_genes_by_prevalence: all genes removed");

  std::vector<SpotTable> out;
  out.reserve(tables.size());
  for (const auto& t : tables) {
    SpotTable nt = t;
    nt.gene_names.clear();
    nt.values.resize(t.n_spots(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t j = 0; j < keep.size(); ++j) {
      nt.gene_names.push_back(genes[static_cast<std::size_t>(keep[j])]);
      nt.values.col(static_cast<Eigen::Index>(j)) = t.values.col(keep[j]);
    }
    out.push_back(std::move(nt));
  }
  return out;
}

// Drops all-zero rows. The caller must rebuild the sample's lattice.
inline SpotTable drop_empty_spots(const SpotTable& table) {
  table.require_stage(Stage::raw_counts, "drop_empty_spots");
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < table.n_spots(); ++i)
    if (table.values.row(i).sum() > 0.0) keep.push_back(i);
  if (keep.empty())
    throw DataError(table.sample_id + ": every spot is empty");
  if (static_cast<Eigen::Index>(keep.size()) == table.n_spots()) return table;

  SpotTable out = table;
  out.barcodes.clear();
  out.coords.clear();
  out.values.resize(static_cast<Eigen::Index>(keep.size()), table.n_genes());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.barcodes.push_back(table.barcodes[static_cast<std::size_t>(keep[i])]);
    out.coords.push_back(table.coords[static_cast<std::size_t>(keep[i])]);
    out.values.row(static_cast<Eigen::Index>(i)) = table.values.row(keep[i]);
  }
  return out;
}

// Scales each row to sum to target_sum.
inline SpotTable count_normalize(const SpotTable& table, double target_sum) {
  table.require_stage(Stage::raw_counts, "count_normalize");
  if (target_sum <= 0.0)
    throw DataError("count_normalize: target_sum must be positive");
  SpotTable out = table;
  for (Eigen::Index i = 0; i < table.n_spots(); ++i) {
    const double row_sum = table.values.row(i).sum();
    if (row_sum <= 0.0)
      throw DataError(table.sample_id + ": zero-sum spot " +
                      table.barcodes[static_cast<std::size_t>(i)] +
                      " (drop empty spots first)");
    out.values.row(i) = table.values.row(i) * (target_sum / row_sum);
  }
  out.stage = Stage::normalized;
  return out;
}

inline SpotTable log1p_transform(const SpotTable& table) {
  table.require_stage(Stage::normalized, "log1p_transform");
  if ((table.values.array() < 0.0).any())
    throw DataError(table.sample_id + ": negative entry before log1p");
  SpotTable out = table;
  out.values = table.values.array().log1p();
  out.stage = Stage::logged;
  return out;
}

// Binned variance-stabilized HVG ranking over pooled spots. Deterministic:
// bins are formed on (mean, name) order and ties in the final ranking break
// by gene name.
inline std::vector<std::string> select_hvg(const std::vector<SpotTable>& tables,
                                           int n_top, int n_bins) {
  if (tables.empty()) throw DataError("select_hvg: no tables");
  if (n_bins < 1) throw DataError("select_hvg: n_bins < 1");
  const auto& genes = tables.front().gene_names;
  for (const auto& t : tables) {
    t.require_stage(Stage::logged, "select_hvg");
    if (t.gene_names != genes)
      throw DataError("select_hvg: panels not harmonized");
  }
  const auto n_genes = static_cast<Eigen::Index>(genes.size());
  if (n_top > n_genes)
    throw DataError("select_hvg: n_top " + std::to_string(n_top) +
                    " exceeds panel size " + std::to_string(n_genes));

  double n_spots = 0.0;
  for (const auto& t : tables) n_spots += static_cast<double>(t.n_spots());

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n_genes);
  for (const auto& t : tables) mean += t.values.colwise().sum().transpose();
  mean /= n_spots;

  Eigen::VectorXd var = Eigen::VectorXd::Zero(n_genes);
  for (const auto& t : tables)
    var += (t.values.rowwise() - mean.transpose()).array().square().colwise().sum().matrix().transpose();
  const double var_den = n_spots > 1.0 ? n_spots - 1.0 : 1.0;
  var /= var_den;
  Eigen::VectorXd sd = var.cwiseSqrt();

  // Equal-count bins over genes sorted by (mean, name).
  std::vector<Eigen::Index> by_mean(static_cast<std::size_t>(n_genes));
  for (Eigen::Index g = 0; g < n_genes; ++g)
    by_mean[static_cast<std::size_t>(g)] = g;
  std::sort(by_mean.begin(), by_mean.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (mean(a) != mean(b)) return mean(a) < mean(b);
    return genes[static_cast<std::size_t>(a)] < genes[static_cast<std::size_t>(b)];
  });
  const int bins = std::min<int>(n_bins, static_cast<int>(n_genes));
  Eigen::VectorXd expected_sd(n_genes);
  for (int b = 0; b < bins; ++b) {
    const auto lo = static_cast<std::size_t>(
        static_cast<long long>(b) * n_genes / bins);
    const auto hi = static_cast<std::size_t>(
        static_cast<long long>(b + 1) * n_genes / bins);
    std::vector<double> bin_sd;
    for (std::size_t i = lo; i < hi; ++i)
      bin_sd.push_back(sd(by_mean[i]));
    std::sort(bin_sd.begin(), bin_sd.end());
    const std::size_t n = bin_sd.size();
    const double median = n % 2 == 1 ? bin_sd[n / 2]
                                     : 0.5 * (bin_sd[n / 2 - 1] + bin_sd[n / 2]);
    for (std::size_t i = lo; i < hi; ++i) expected_sd(by_mean[i]) = median;
  }

  // Standardized variance: variance of clipped z-scores per gene.
  const double clip = std::sqrt(n_spots);
  Eigen::VectorXd std_var = Eigen::VectorXd::Zero(n_genes);
  for (Eigen::Index g = 0; g < n_genes; ++g) {
    const double esd = expected_sd(g);
    if (esd <= 0.0) continue;  // constant bin: z-scores all zero
    double sum = 0.0, sum_sq = 0.0;
    for (const auto& t : tables) {
      for (Eigen::Index i = 0; i < t.n_spots(); ++i) {
        double z = (t.values(i, g) - mean(g)) / esd;
        z = std::clamp(z, -clip, clip);
        sum += z;
        sum_sq += z * z;
      }
    }
    const double zmean = sum / n_spots;
    std_var(g) = (sum_sq - n_spots * zmean * zmean) / var_den;
  }

  std::vector<Eigen::Index> ranking(static_cast<std::size_t>(n_genes));
  for (Eigen::Index g = 0; g < n_genes; ++g)
    ranking[static_cast<std::size_t>(g)] = g;
  std::sort(ranking.begin(), ranking.end(), [&](Eigen::Index a, Eigen::Index b) {
    if (std_var(a) != std_var(b)) return std_var(a) > std_var(b);
    return genes[static_cast<std::size_t>(a)] < genes[static_cast<std::size_t>(b)];
  });

  std::vector<std::string> top;
  top.reserve(static_cast<std::size_t>(n_top));
  for (int i = 0; i < n_top; ++i)
    top.push_back(genes[static_cast<std::size_t>(ranking[static_cast<std::size_t>(i)])]);
  return top;
}

// Union preserving HVG order first, then unseen supplement genes.
inline GenePanel supplement_panel(const std::vector<std::string>& hvg,
                                  const std::vector<std::string>& supplement) {
  GenePanel panel;
  std::unordered_set<std::string> seen;
  for (const auto& g : hvg) {
    if (seen.insert(g).second) {
      panel.genes.push_back(g);
      panel.provenance.push_back(GeneProvenance::hvg);
    }
  }
  for (const auto& g : supplement) {
    if (seen.insert(g).second) {
      panel.genes.push_back(g);
      panel.provenance.push_back(GeneProvenance::supplement);
    }
  }
  panel.target_size = static_cast<int>(panel.genes.size());
  return panel;
}

// Projects a table's columns onto the panel order. Panel genes missing from
// the table are an error.
inline SpotTable restrict_to_panel(const SpotTable& table,
                                   const GenePanel& panel) {
  std::unordered_map<std::string, Eigen::Index> col_of;
  for (std::size_t g = 0; g < table.gene_names.size(); ++g)
    col_of.emplace(table.gene_names[g], static_cast<Eigen::Index>(g));
  SpotTable out = table;
  out.gene_names = panel.genes;
  out.values.resize(table.n_spots(),
                    static_cast<Eigen::Index>(panel.genes.size()));
  for (std::size_t g = 0; g < panel.genes.size(); ++g) {
    auto it = col_of.find(panel.genes[g]);
    if (it == col_of.end())
      throw DataError(table.sample_id + ": panel gene " + panel.genes[g] +
                      " absent from table");
    out.values.col(static_cast<Eigen::Index>(g)) = table.values.col(it->second);
  }
  return out;
}

}  // namespace seal::ingest
