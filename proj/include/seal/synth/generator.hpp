#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seal/core/blob.hpp"
#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"
#include "seal/core/tsv.hpp"
#include "seal/image/image.hpp"

namespace seal::synth {

// Coupled spot-expression / image dataset: latent factors drawn as smooth
// fields on a Visium-style lattice drive both the count matrix
// (softplus-linear rates with Poisson-like noise) and the rendered patch
// textures (gratings tinted per factor, with per-domain color shifts
// simulating batch effects).
struct SynthSpec {
  int n_samples = 9;
  int spots_per_sample = 400;
  int n_genes = 64;
  int latent_factors = 4;
  int image_size = 64;
  double noise_sigma = 0.5;
  int n_domains = 3;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_samples < 1 || spots_per_sample < 1 || n_genes < 1)
      throw DataError("SynthSpec: sizes must be positive");
    if (latent_factors < 1 ||
        latent_factors > std::min(n_genes, 8))
      throw DataError("SynthSpec: latent_factors must lie in [1, min(n_genes, 8)]");
    if (image_size < 8) throw DataError("SynthSpec: image_size too small");
    if (noise_sigma < 0) throw DataError("SynthSpec: noise_sigma must be >= 0");
    if (n_domains < 1) throw DataError("SynthSpec: n_domains must be >= 1");
  }
};

namespace detail {

inline constexpr double kCountDepth = 20.0;
inline constexpr double kSignalAmplitude = 0.40;
inline constexpr double kTextureAmplitude = 0.30;
inline constexpr double kDomainShift = 0.18;

struct FactorPattern {
  double fx, fy, phase;  // grating frequency (cycles) and phase
};

inline double softplus(double v) {
  return v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
}

}  // namespace detail

struct SynthSample {
  std::string sample_id;
  std::string patient_id;
  std::string organ;
  int domain_id = 0;
  std::vector<std::string> barcodes;
  std::vector<int> rows, cols;
  std::vector<double> x_um, y_um;
  Eigen::MatrixXd latents;  // [n x k]
  Eigen::MatrixXd counts;   // [n x G], integer-valued
  Eigen::MatrixXd images;   // [n x H*W*3]
};

struct SynthDataset {
  SynthSpec spec;
  std::vector<std::string> gene_names;
  Eigen::MatrixXd mixing;  // [G x k]
  Eigen::VectorXd bias;    // [G]
  std::vector<SynthSample> samples;
};

inline SynthDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  SynthDataset data;
  data.spec = spec;

  Rng root(spec.seed);
  Rng model_rng = root.fork(101);
  Rng domain_rng = root.fork(102);

  const int g = spec.n_genes;
  const int k = spec.latent_factors;
  data.gene_names.reserve(static_cast<std::size_t>(g));
  for (int i = 0; i < g; ++i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "G%04d", i);
    data.gene_names.emplace_back(buf);
  }

  data.mixing.resize(g, k);
  for (int r = 0; r < g; ++r)
    for (int c = 0; c < k; ++c)
      data.mixing(r, c) = model_rng.normal(0.0, 1.0 / std::sqrt(k));
  data.bias.resize(g);
  for (int r = 0; r < g; ++r) data.bias(r) = model_rng.uniform(-1.5, 0.5);

  // Fixed per-factor image patterns shared by all samples. The patterns are
  // even around the image center (cosine products on centered coordinates),
  // so horizontal and vertical flips leave the rendered signal unchanged and
  // augmentation preserves the latent information. Distinct integer
  // frequencies keep the factors spatially identifiable even under channel
  // shuffles.
  static constexpr int kFreqTable[8][2] = {{1, 2}, {2, 1}, {2, 3}, {3, 2},
                                           {1, 3}, {3, 1}, {2, 2}, {3, 3}};
  std::vector<detail::FactorPattern> patterns;
  for (int f = 0; f < k; ++f)
    patterns.push_back({static_cast<double>(kFreqTable[f][0]),
                        static_cast<double>(kFreqTable[f][1]), 0.0});
  Eigen::MatrixXd tint(3, k);
  for (int c = 0; c < 3; ++c)
    for (int f = 0; f < k; ++f)
      tint(c, f) = model_rng.normal(0.0, 1.0 / std::sqrt(k));

  // Nuisance texture gratings uncorrelated with the factors.
  std::vector<detail::FactorPattern> nuisance;
  for (int m = 0; m < 3; ++m)
    nuisance.push_back({model_rng.uniform(3.0, 6.0),
                        model_rng.uniform(3.0, 6.0),
                        model_rng.uniform(0.0, 2.0 * std::numbers::pi)});

  Eigen::MatrixXd domain_shift(spec.n_domains, 3);
  for (int d = 0; d < spec.n_domains; ++d)
    for (int c = 0; c < 3; ++c)
      domain_shift(d, c) =
          detail::kDomainShift * domain_rng.uniform(-1.0, 1.0);

  // Lattice geometry shared by all samples.
  const int n = spec.spots_per_sample;
  const int rows = std::max(1, static_cast<int>(std::lround(std::sqrt(n))));
  const int cols = (n + rows - 1) / rows;

  for (int s = 0; s < spec.n_samples; ++s) {
    SynthSample sample;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample%02d", s);
    sample.sample_id = buf;
    std::snprintf(buf, sizeof(buf), "patient%02d", s);
    sample.patient_id = buf;
    sample.organ = "synthetic";
    sample.domain_id = s % spec.n_domains;

    Rng sample_rng = root.fork(1000 + static_cast<std::uint64_t>(s));
    Rng field_rng = sample_rng.fork(1);
    Rng count_rng = sample_rng.fork(2);
    Rng texture_rng = sample_rng.fork(3);

    sample.latents.resize(n, k);
    sample.counts.resize(n, g);
    sample.images.resize(n, static_cast<Eigen::Index>(spec.image_size) *
                                spec.image_size * 3);

    // Smooth latent fields: a few random low-frequency cosines per factor,
    // standardized per sample.
    struct FieldWave {
      double a, fx, fy, phase;
    };
    std::vector<std::vector<FieldWave>> waves(static_cast<std::size_t>(k));
    for (int f = 0; f < k; ++f)
      for (int m = 0; m < 3; ++m)
        waves[static_cast<std::size_t>(f)].push_back(
            {field_rng.normal(0.0, 1.0), field_rng.uniform(0.5, 2.0),
             field_rng.uniform(0.5, 2.0),
             field_rng.uniform(0.0, 2.0 * std::numbers::pi)});

    for (int i = 0; i < n; ++i) {
      const int r = i / cols;
      const int c_half = i % cols;
      const int c = 2 * c_half + (r % 2);
      std::snprintf(buf, sizeof(buf), "%s_BC%04d", sample.sample_id.c_str(),
                    i);
      sample.barcodes.emplace_back(buf);
      sample.rows.push_back(r);
      sample.cols.push_back(c);
      sample.x_um.push_back(50.0 * c);
      sample.y_um.push_back(86.60254037844386 * r);
      const double xn = static_cast<double>(c) / (2.0 * cols);
      const double yn = static_cast<double>(r) / rows;
      for (int f = 0; f < k; ++f) {
        double v = 0.0;
        for (const auto& wv : waves[static_cast<std::size_t>(f)])
          v += wv.a * std::cos(2.0 * std::numbers::pi *
                                   (wv.fx * xn + wv.fy * yn) +
                               wv.phase);
        sample.latents(i, f) = v;
      }
    }
    // Standardize factors within the sample.
    for (int f = 0; f < k; ++f) {
      const double mu = sample.latents.col(f).mean();
      const double sd = std::sqrt(
          (sample.latents.col(f).array() - mu).square().sum() /
          std::max(1, n - 1));
      sample.latents.col(f) =
          (sample.latents.col(f).array() - mu) / (sd > 0 ? sd : 1.0);
    }

    // Counts: Poisson-like noise around softplus-linear rates.
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < g; ++j) {
        const double rate =
            detail::softplus(data.mixing.row(j).dot(sample.latents.row(i)) +
                             data.bias(j)) *
            detail::kCountDepth;
        double value = rate;
        if (spec.noise_sigma > 0.0)
          value += spec.noise_sigma * std::sqrt(rate) * count_rng.normal();
        sample.counts(i, j) = std::max(0.0, std::round(value));
      }
    }

    // Images: factor gratings tinted and amplitude-modulated by the spot's
    // latents, plus nuisance texture with random per-spot phases and the
    // domain color shift.
    const int hw = spec.image_size;
    for (int i = 0; i < n; ++i) {
      img::Image image(hw, hw);
      std::vector<double> tex_phase;
      for (std::size_t m = 0; m < nuisance.size(); ++m)
        tex_phase.push_back(texture_rng.uniform(0.0, 2.0 * std::numbers::pi));
      for (int y = 0; y < hw; ++y) {
        const double yn = (y + 0.5) / hw;
        for (int x = 0; x < hw; ++x) {
          const double xn = (x + 0.5) / hw;
          double tex = 0.0;
          for (std::size_t m = 0; m < nuisance.size(); ++m)
            tex += std::cos(2.0 * std::numbers::pi *
                                (nuisance[m].fx * xn + nuisance[m].fy * yn) +
                            tex_phase[m]);
          tex /= static_cast<double>(nuisance.size());
          for (int c = 0; c < 3; ++c) {
            double signal = 0.0;
            for (int f = 0; f < k; ++f) {
              const auto& p = patterns[static_cast<std::size_t>(f)];
              // even in both axes: exactly invariant under h/v flips
              const double grating =
                  std::cos(2.0 * std::numbers::pi * p.fx * (xn - 0.5)) *
                  std::cos(2.0 * std::numbers::pi * p.fy * (yn - 0.5));
              signal += std::tanh(sample.latents(i, f)) * tint(c, f) * grating;
            }
            const double value =
                0.5 + detail::kSignalAmplitude * signal +
                detail::kTextureAmplitude * tex +
                domain_shift(sample.domain_id, c);
            image.chan[static_cast<std::size_t>(c)](y, x) =
                std::clamp(value, 0.0, 1.0);
          }
        }
      }
      sample.images.row(i) = img::flatten(image).transpose();
    }

    data.samples.push_back(std::move(sample));
  }
  return data;
}

// Writes the dataset in the raw sample-directory layout consumed by the
// preprocessing pipeline, plus ground truth under truth/ for oracle checks.
inline void write_synthetic(const SynthDataset& data,
                            const std::filesystem::path& out_dir,
                            bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force)
    throw DataError("output directory exists and is not empty (use --force): " +
                    out_dir.string());
  fs::create_directories(out_dir);

  for (const auto& sample : data.samples) {
    const fs::path dir = out_dir / sample.sample_id;
    fs::create_directories(dir);
    {
      TsvWriter genes(dir / "genes.tsv");
      for (const auto& name : data.gene_names) genes.row(name);
    }
    {
      TsvWriter spots(dir / "spots.tsv");
      spots.row("barcode", "array_row", "array_col", "x_um", "y_um");
      for (std::size_t i = 0; i < sample.barcodes.size(); ++i)
        spots.row(sample.barcodes[i], sample.rows[i], sample.cols[i],
                  sample.x_um[i], sample.y_um[i]);
    }
    {
      TsvWriter counts(dir / "counts.tsv");
      for (Eigen::Index i = 0; i < sample.counts.rows(); ++i)
        for (Eigen::Index j = 0; j < sample.counts.cols(); ++j)
          if (sample.counts(i, j) != 0.0)
            counts.row(i, j, static_cast<long long>(sample.counts(i, j)));
    }
    {
      nlohmann::json meta;
      meta["sample_id"] = sample.sample_id;
      meta["patient_id"] = sample.patient_id;
      meta["organ"] = sample.organ;
      meta["domain_id"] = sample.domain_id;
      std::ofstream out(dir / "meta.json", std::ios::binary);
      out << meta.dump(2) << '\n';
    }
    write_blob(dir / "images.bin", sample.images);
  }

  const fs::path truth = out_dir / "truth";
  fs::create_directories(truth);
  write_blob(truth / "mixing.bin", data.mixing);
  write_blob(truth / "bias.bin", data.bias);
  for (const auto& sample : data.samples)
    write_blob(truth / (sample.sample_id + "_latents.bin"), sample.latents);
  nlohmann::json manifest;
  manifest["format"] = "SEALSYNTH";
  manifest["version"] = 1;
  manifest["n_samples"] = data.spec.n_samples;
  manifest["spots_per_sample"] = data.spec.spots_per_sample;
  manifest["n_genes"] = data.spec.n_genes;
  manifest["latent_factors"] = data.spec.latent_factors;
  manifest["image_size"] = data.spec.image_size;
  manifest["noise_sigma"] = data.spec.noise_sigma;
  manifest["n_domains"] = data.spec.n_domains;
  manifest["seed"] = data.spec.seed;
  std::ofstream out(truth / "manifest.json", std::ios::binary);
  out << manifest.dump(2) << '\n';
}

inline void gen_synthetic(const SynthSpec& spec,
                          const std::filesystem::path& out_dir,
                          bool force = false) {
  write_synthetic(generate_synthetic(spec), out_dir, force);
}

}  // namespace seal::synth
