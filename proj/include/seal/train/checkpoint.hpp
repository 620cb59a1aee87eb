#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seal/autodiff/nn.hpp"
#include "seal/core/blob.hpp"
#include "seal/core/errors.hpp"

namespace seal::train {

inline constexpr int kCheckpointVersion = 1;

// A checkpoint is a directory: manifest.json plus one SEALEMB1 blob per
// named array. The manifest records shapes, digests, a config echo, and the
// trainer RNG state.
struct Checkpoint {
  int version = kCheckpointVersion;
  std::string kind;  // "stage1" or "stage2"
  nlohmann::json config = nlohmann::json::object();
  std::string rng_state;
  std::map<std::string, Eigen::MatrixXd> arrays;

  void put(const std::string& name, const Eigen::MatrixXd& value) {
    if (!arrays.emplace(name, value).second)
      throw DataError("checkpoint: duplicate array name " + name);
  }

  const Eigen::MatrixXd& at(const std::string& name) const {
    auto it = arrays.find(name);
    if (it == arrays.end())
      throw DataError("checkpoint: missing array " + name);
    return it->second;
  }

  bool has(const std::string& name) const { return arrays.count(name) > 0; }
};

namespace detail {

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return std::string(buf);
}

}  // namespace detail

// Atomic write: everything lands in a temp sibling directory which is then
// renamed over the destination.
inline void save_checkpoint(const Checkpoint& ckpt,
                            const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path tmp = path.string() + ".tmp";
  fs::remove_all(tmp);
  fs::create_directories(tmp);

  nlohmann::json manifest;
  manifest["format"] = "SEALCKPT";
  manifest["version"] = ckpt.version;
  manifest["kind"] = ckpt.kind;
  manifest["config"] = ckpt.config;
  manifest["rng_state"] = ckpt.rng_state;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, value] : ckpt.arrays) {
    const std::string file = name + ".bin";
    write_blob(tmp / file, value);
    nlohmann::json entry;
    entry["name"] = name;
    entry["file"] = file;
    entry["rows"] = value.rows();
    entry["cols"] = value.cols();
    entry["dtype"] = "f32";
    entry["digest"] = detail::hex64(blob_digest(value));
    entries.push_back(entry);
  }
  manifest["arrays"] = entries;
  {
    std::ofstream out(tmp / "manifest.json", std::ios::binary);
    if (!out) throw DataError("cannot write manifest in " + tmp.string());
    out << manifest.dump(2) << '\n';
  }

  fs::remove_all(path);
  fs::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  const fs::path manifest_path = path / "manifest.json";
  if (!fs::exists(manifest_path))
    throw DataError("not a checkpoint directory (no manifest.json): " +
                    path.string());
  std::ifstream in(manifest_path, std::ios::binary);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "SEALCKPT")
    throw DataError("not a SEALCKPT manifest: " + manifest_path.string());
  const int version = manifest.value("version", -1);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) +
                    " unsupported (this reader expects " +
                    std::to_string(kCheckpointVersion) + ")");

  Checkpoint ckpt;
  ckpt.version = version;
  ckpt.kind = manifest.value("kind", "");
  ckpt.config = manifest.value("config", nlohmann::json::object());
  ckpt.rng_state = manifest.value("rng_state", "");
  for (const auto& entry : manifest.at("arrays")) {
    const std::string name = entry.at("name");
    const std::string file = entry.at("file");
    Eigen::MatrixXd value = read_blob(path / file);
    if (value.rows() != entry.at("rows").get<Eigen::Index>() ||
        value.cols() != entry.at("cols").get<Eigen::Index>())
      throw DataError("checkpoint array " + name + " shape mismatch");
    const std::string digest = detail::hex64(blob_digest(value));
    if (digest != entry.at("digest").get<std::string>())
      throw DataError("checkpoint array " + name + " digest mismatch");
    ckpt.arrays.emplace(name, std::move(value));
  }
  return ckpt;
}

// --- param <-> checkpoint helpers ---

inline void store_params(Checkpoint& ckpt,
                         const std::vector<ad::Param*>& params) {
  for (const ad::Param* p : params) ckpt.put(p->name, p->value);
}

inline void load_params(const Checkpoint& ckpt,
                        const std::vector<ad::Param*>& params) {
  for (ad::Param* p : params) {
    const Eigen::MatrixXd& stored = ckpt.at(p->name);
    if (stored.rows() != p->value.rows() || stored.cols() != p->value.cols())
      throw DataError("checkpoint array " + p->name + " has shape " +
                      std::to_string(stored.rows()) + "x" +
                      std::to_string(stored.cols()) + ", model expects " +
                      std::to_string(p->value.rows()) + "x" +
                      std::to_string(p->value.cols()));
    p->value = stored;
  }
}

inline void store_bn_stats(Checkpoint& ckpt, const std::string& prefix,
                           const std::vector<ad::BatchNorm*>& bns) {
  for (std::size_t i = 0; i < bns.size(); ++i) {
    const auto& stats = bns[i]->stats;
    const std::string base = prefix + ".bn" + std::to_string(i);
    Eigen::MatrixXd mean = stats.initialized
                               ? Eigen::MatrixXd(stats.mean.transpose())
                               : Eigen::MatrixXd::Zero(1, bns[i]->gamma.value.cols());
    Eigen::MatrixXd var = stats.initialized
                              ? Eigen::MatrixXd(stats.var.transpose())
                              : Eigen::MatrixXd::Ones(1, bns[i]->gamma.value.cols());
    ckpt.put(base + ".running_mean", mean);
    ckpt.put(base + ".running_var", var);
  }
}

inline void load_bn_stats(const Checkpoint& ckpt, const std::string& prefix,
                          const std::vector<ad::BatchNorm*>& bns) {
  for (std::size_t i = 0; i < bns.size(); ++i) {
    const std::string base = prefix + ".bn" + std::to_string(i);
    bns[i]->stats.mean = ckpt.at(base + ".running_mean").row(0).transpose();
    bns[i]->stats.var = ckpt.at(base + ".running_var").row(0).transpose();
    bns[i]->stats.initialized = true;
  }
}

}  // namespace seal::train
