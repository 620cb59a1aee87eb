#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "seal/core/rng.hpp"
#include "seal/core/tsv.hpp"
#include "seal/ingest/spot_table.hpp"

namespace seal::ingest {

// Patient-level split stratified by organ. Within each organ, patients are
// shuffled by the seeded RNG and assigned greedily to the split with the
// largest remaining spot-count deficit. A patient spanning organs counts
// under its majority-spot organ. Organs with fewer patients than splits go
// entirely to train.
inline SplitManifest split_by_patient(const std::vector<SpotTable>& samples,
                                      std::array<double, 3> ratios,
                                      std::uint64_t seed) {
  const double total = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total - 1.0) > 1e-9)
    throw DataError("split_by_patient: ratios must sum to 1");

  // patient -> organ -> spot count
  std::map<std::string, std::map<std::string, long long>> organ_spots;
  std::map<std::string, long long> patient_spots;
  for (const auto& s : samples) {
    organ_spots[s.patient_id][s.organ] += s.n_spots();
    patient_spots[s.patient_id] += s.n_spots();
  }

  std::map<std::string, std::vector<std::string>> patients_by_organ;
  for (const auto& [patient, organs] : organ_spots) {
    std::string majority;
    long long best = -1;
    for (const auto& [organ, n] : organs) {
      if (n > best) {
        best = n;
        majority = organ;
      }
    }
    patients_by_organ[majority].push_back(patient);
  }

  SplitManifest manifest;
  manifest.ratios = ratios;
  Rng rng(seed);
  for (auto& [organ, patients] : patients_by_organ) {
    std::sort(patients.begin(), patients.end());
    rng.shuffle(patients);
    if (patients.size() < 3) {
      for (const auto& p : patients) manifest.assignments[p] = Split::train;
      continue;
    }
    long long organ_total = 0;
    for (const auto& p : patients) organ_total += patient_spots[p];
    std::array<double, 3> target{};
    std::array<double, 3> assigned{};
    for (int s = 0; s < 3; ++s)
      target[static_cast<std::size_t>(s)] =
          ratios[static_cast<std::size_t>(s)] * static_cast<double>(organ_total);
    for (const auto& p : patients) {
      int best_split = 0;
      double best_deficit = -1e300;
      for (int s = 0; s < 3; ++s) {
        const double deficit = target[static_cast<std::size_t>(s)] -
                               assigned[static_cast<std::size_t>(s)];
        if (deficit > best_deficit) {
          best_deficit = deficit;
          best_split = s;
        }
      }
      manifest.assignments[p] = static_cast<Split>(best_split);
      assigned[static_cast<std::size_t>(best_split)] +=
          static_cast<double>(patient_spots[p]);
    }
  }
  return manifest;
}

inline void write_split_manifest(const SplitManifest& manifest,
                                 const std::filesystem::path& path) {
  TsvWriter out(path);
  for (const auto& [patient, split] : manifest.assignments)
    out.row(patient, split_name(split));
}

inline SplitManifest read_split_manifest(const std::filesystem::path& path) {
  SplitManifest manifest;
  for (const std::string& line : read_lines(path)) {
    if (line.empty()) continue;
    const auto fields = split_tab(line);
    if (fields.size() != 2)
      throw DataError("malformed split manifest line: '" + line + "'");
    manifest.assignments[fields[0]] = split_from_name(fields[1]);
  }
  return manifest;
}

}  // namespace seal::ingest
