#pragma once

#include <Eigen/Dense>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "seal/core/errors.hpp"
#include "seal/core/fnv.hpp"

namespace seal {

// SEALEMB1 binary matrix container:
//   magic "SEALEMB1" | version u32 LE | rows u64 LE | cols u64 LE |
//   payload rows*cols float32 LE row-major | fnv1a64(payload) u64 LE
// Used for embedding dumps and for every named array inside a checkpoint.
inline constexpr char kBlobMagic[8] = {'S', 'E', 'A', 'L', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kBlobVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "SEALEMB1 io assumes a little-endian host");

namespace detail {

template <typename T>
void write_le(std::ofstream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_le(std::ifstream& in, const std::string& what) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw DataError("truncated blob while reading " + what);
  return value;
}

}  // namespace detail

inline void write_blob(const std::filesystem::path& path,
                       const Eigen::MatrixXd& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write blob: " + path.string());
  out.write(kBlobMagic, sizeof(kBlobMagic));
  detail::write_le<std::uint32_t>(out, kBlobVersion);
  detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  std::vector<float> payload(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      payload[static_cast<std::size_t>(r) * m.cols() + c] =
          static_cast<float>(m(r, c));
  out.write(reinterpret_cast<const char*>(payload.data()),
            static_cast<std::streamsize>(payload.size() * sizeof(float)));
  detail::write_le<std::uint64_t>(
      out, fnv1a64(payload.data(), payload.size() * sizeof(float)));
  if (!out) throw DataError("short write for blob: " + path.string());
}

// Digest of the float32 payload as it would be written; stable identity for
// determinism and freeze checks.
inline std::uint64_t blob_digest(const Eigen::MatrixXd& m) {
  std::vector<float> payload(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      payload[static_cast<std::size_t>(r) * m.cols() + c] =
          static_cast<float>(m(r, c));
  return fnv1a64(payload.data(), payload.size() * sizeof(float));
}

inline Eigen::MatrixXd read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open blob: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kBlobMagic, sizeof(magic)) != 0)
    throw DataError("bad magic in blob: " + path.string());
  const auto version = detail::read_le<std::uint32_t>(in, "version");
  if (version != kBlobVersion)
    throw DataError("unsupported blob version " + std::to_string(version) +
                    " in " + path.string());
  const auto rows = detail::read_le<std::uint64_t>(in, "rows");
  const auto cols = detail::read_le<std::uint64_t>(in, "cols");
  const auto header = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t file_size = std::filesystem::file_size(path);
  if (rows > (1ULL << 32) || cols > (1ULL << 32) ||
      file_size != header + rows * cols * sizeof(float) + sizeof(std::uint64_t))
    throw DataError("blob size does not match its header: " + path.string());
  std::vector<float> payload(rows * cols);
  in.read(reinterpret_cast<char*>(payload.data()),
          static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!in) throw DataError("truncated payload in blob: " + path.string());
  const auto digest = detail::read_le<std::uint64_t>(in, "digest");
  const std::uint64_t actual =
      fnv1a64(payload.data(), payload.size() * sizeof(float));
  if (digest != actual)
    throw DataError("digest mismatch in blob: " + path.string());
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
  for (std::uint64_t r = 0; r < rows; ++r)
    for (std::uint64_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          payload[r * cols + c];
  return m;
}

}  // namespace seal
