#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "seal/core/blob.hpp"
#include "seal/core/errors.hpp"
#include "seal/core/tsv.hpp"
#include "seal/image/image.hpp"
#include "seal/ingest/spot_table.hpp"
#include "seal/ingest/split.hpp"

namespace seal::data {

// A preprocessed dataset: smoothed panel-restricted tables plus the panel
// and the patient split manifest.
struct ProcessedDataset {
  ingest::GenePanel panel;
  ingest::SplitManifest splits;
  std::vector<ingest::SpotTable> samples;

  const ingest::SpotTable& sample_by_id(const std::string& id) const {
    for (const auto& s : samples)
      if (s.sample_id == id) return s;
    throw DataError("no such sample in processed dataset: " + id);
  }

  ingest::Split split_of(const ingest::SpotTable& sample) const {
    auto it = splits.assignments.find(sample.patient_id);
    if (it == splits.assignments.end())
      throw DataError("patient " + sample.patient_id + " missing from splits");
    return it->second;
  }

  // Stacks spots of the requested splits (row-aligned barcode/sample lists).
  struct SpotStack {
    Eigen::MatrixXd values;
    std::vector<std::string> sample_ids;
    std::vector<std::string> barcodes;
    std::vector<int> domain_ids;
  };

  SpotStack stack_spots(const std::set<ingest::Split>& which) const {
    Eigen::Index total = 0;
    for (const auto& s : samples)
      if (which.count(split_of(s))) total += s.n_spots();
    SpotStack stack;
    stack.values.resize(total, static_cast<Eigen::Index>(panel.genes.size()));
    stack.sample_ids.reserve(static_cast<std::size_t>(total));
    stack.barcodes.reserve(static_cast<std::size_t>(total));
    Eigen::Index at = 0;
    for (const auto& s : samples) {
      if (!which.count(split_of(s))) continue;
      stack.values.middleRows(at, s.n_spots()) = s.values;
      for (Eigen::Index i = 0; i < s.n_spots(); ++i) {
        stack.sample_ids.push_back(s.sample_id);
        stack.barcodes.push_back(s.barcodes[static_cast<std::size_t>(i)]);
        stack.domain_ids.push_back(s.domain_id);
      }
      at += s.n_spots();
    }
    return stack;
  }

  int n_domains() const {
    int top = 0;
    for (const auto& s : samples) top = std::max(top, s.domain_id + 1);
    return top;
  }
};

inline void write_spots_tsv(const std::filesystem::path& path,
                            const ingest::SpotTable& table) {
  TsvWriter out(path);
  out.row("barcode", "array_row", "array_col", "x_um", "y_um");
  for (Eigen::Index i = 0; i < table.n_spots(); ++i) {
    const auto& c = table.coords[static_cast<std::size_t>(i)];
    out.row(table.barcodes[static_cast<std::size_t>(i)], c.row, c.col, c.x_um,
            c.y_um);
  }
}

inline void read_spots_tsv(const std::filesystem::path& path,
                           ingest::SpotTable& table) {
  const auto lines = read_lines(path);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto fields = split_tab(lines[i]);
    if (fields.size() != 5)
      throw DataError("malformed spots row in " + path.string());
    table.barcodes.push_back(fields[0]);
    ingest::SpotCoord c;
    c.row = static_cast<int>(parse_int(fields[1], "array_row"));
    c.col = static_cast<int>(parse_int(fields[2], "array_col"));
    c.x_um = parse_double(fields[3], "x_um");
    c.y_um = parse_double(fields[4], "y_um");
    table.coords.push_back(c);
  }
}

inline void write_processed(const ProcessedDataset& dataset,
                            const std::filesystem::path& dir,
                            const nlohmann::json& config_echo) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "samples");

  {
    TsvWriter panel_out(dir / "panel.tsv");
    for (std::size_t g = 0; g < dataset.panel.genes.size(); ++g)
      panel_out.row(dataset.panel.genes[g],
                    dataset.panel.provenance[g] == ingest::GeneProvenance::hvg
                        ? "hvg"
                        : "supplement");
  }
  ingest::write_split_manifest(dataset.splits, dir / "splits.tsv");

  nlohmann::json manifest;
  manifest["format"] = "SEALPROC";
  manifest["version"] = 1;
  manifest["config"] = config_echo;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& s : dataset.samples) {
    ids.push_back(s.sample_id);
    const fs::path sdir = dir / "samples" / s.sample_id;
    fs::create_directories(sdir);
    write_blob(sdir / "matrix.bin", s.values);
    write_spots_tsv(sdir / "spots.tsv", s);
    nlohmann::json meta;
    meta["sample_id"] = s.sample_id;
    meta["patient_id"] = s.patient_id;
    meta["organ"] = s.organ;
    meta["domain_id"] = s.domain_id;
    meta["stage"] = ingest::stage_name(s.stage);
    std::ofstream meta_out(sdir / "meta.json", std::ios::binary);
    meta_out << meta.dump(2) << '\n';
  }
  manifest["samples"] = ids;
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
}

inline ProcessedDataset load_processed(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "manifest.json"))
    throw DataError("not a processed dataset (no manifest.json): " +
                    dir.string());
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.value("format", "") != "SEALPROC")
    throw DataError("not a SEALPROC manifest: " + dir.string());

  ProcessedDataset dataset;
  for (const std::string& line : read_lines(dir / "panel.tsv")) {
    if (line.empty()) continue;
    const auto fields = split_tab(line);
    if (fields.size() != 2) throw DataError("malformed panel.tsv line");
    dataset.panel.genes.push_back(fields[0]);
    dataset.panel.provenance.push_back(fields[1] == "hvg"
                                           ? ingest::GeneProvenance::hvg
                                           : ingest::GeneProvenance::supplement);
  }
  dataset.panel.target_size = static_cast<int>(dataset.panel.genes.size());
  dataset.splits = ingest::read_split_manifest(dir / "splits.tsv");

  for (const auto& id : manifest.at("samples")) {
    const fs::path sdir = dir / "samples" / id.get<std::string>();
    ingest::SpotTable table;
    std::ifstream meta_in(sdir / "meta.json", std::ios::binary);
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    table.sample_id = meta.at("sample_id");
    table.patient_id = meta.at("patient_id");
    table.organ = meta.at("organ");
    table.domain_id = meta.at("domain_id");
    table.stage = ingest::stage_from_name(meta.at("stage"));
    read_spots_tsv(sdir / "spots.tsv", table);
    table.values = read_blob(sdir / "matrix.bin");
    table.gene_names = dataset.panel.genes;
    table.check_consistent();
    dataset.samples.push_back(std::move(table));
  }
  return dataset;
}

// Raw sample directories are the subdirectories containing genes.tsv.
inline std::vector<std::filesystem::path> list_sample_dirs(
    const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root))
    throw DataError("dataset root is not a directory: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory() && fs::exists(entry.path() / "genes.tsv"))
      dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty())
    throw DataError("no sample directories under " + root.string());
  return dirs;
}

// Spot-aligned image store for one raw sample: images.bin rows follow the
// spots.tsv row order.
class ImageStore {
 public:
  ImageStore() = default;

  explicit ImageStore(const std::filesystem::path& sample_dir) {
    flat_ = read_blob(sample_dir / "images.bin");
    const auto lines = read_lines(sample_dir / "spots.tsv");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto fields = split_tab(lines[i]);
      if (fields.empty()) continue;
      row_of_.emplace(fields[0], static_cast<Eigen::Index>(i - 1));
    }
    if (static_cast<Eigen::Index>(row_of_.size()) != flat_.rows())
      throw DataError("images.bin row count does not match spots.tsv in " +
                      sample_dir.string());
    const double px = static_cast<double>(flat_.cols()) / 3.0;
    side_ = static_cast<int>(std::lround(std::sqrt(px)));
    if (static_cast<Eigen::Index>(side_) * side_ * 3 != flat_.cols())
      throw DataError("images.bin columns are not a square RGB image in " +
                      sample_dir.string());
  }

  int image_size() const { return side_; }

  img::Image get(const std::string& barcode) const {
    auto it = row_of_.find(barcode);
    if (it == row_of_.end())
      throw DataError("no image for barcode " + barcode);
    return img::unflatten(flat_.row(it->second).transpose(), side_, side_);
  }

 private:
  Eigen::MatrixXd flat_;
  std::unordered_map<std::string, Eigen::Index> row_of_;
  int side_ = 0;
};

}  // namespace seal::data
