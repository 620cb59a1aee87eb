#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "seal/core/errors.hpp"
#include "seal/losses/losses.hpp"
#include "seal/omics/vae.hpp"
#include "seal/synth/generator.hpp"
#include "seal/train/augment.hpp"
#include "seal/train/trainer.hpp"
#include "seal/vision/vit.hpp"

namespace seal::cli {

// Flat-key JSON configuration shared by every subcommand. Defaults mirror
// the published hyperparameters where they exist; everything else is a
// documented gap default.
struct RunConfig {
  // preprocessing
  double target_sum = 1e4;
  int min_overlap = 5000;
  double min_frac = 0.10;
  int hvg_n_top = 2000;
  int hvg_n_bins = 20;
  std::string supplement_file;
  std::string rename_file;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};

  // omics model
  std::vector<int> vae_hidden_dims{1024};
  int latent_dim = 64;
  int n_flows = 4;
  double vae_dropout = 0.0;
  double decoder_dropout = 0.0;
  double beta_kl = 1e-2;

  // vision model
  int image_size = 64;
  int patch_px = 16;
  int vit_depth = 4;
  int vit_heads = 4;
  double mlp_ratio = 2.0;
  std::string vit_pooling = "cls";  // or "mean"
  std::array<double, 3> channel_mean{0.5, 0.5, 0.5};
  std::array<double, 3> channel_sd{0.5, 0.5, 0.5};

  // adapters
  int lora_rank = 8;
  double lora_alpha = 8.0;
  double lora_dropout = 0.25;
  int finetune_blocks = 2;
  std::vector<std::string> adapter_targets{"query", "value"};
  std::string aux_projection = "linear";  // or "none"

  // training
  seal::train::TrainConfig train;

  // synthetic generator
  synth::SynthSpec synth;

  // probing / retrieval
  int probe_k = 5;
  int probe_components = 256;
  double probe_alpha = 1.0;
  int retrieve_k = 50;
  double g2i_pcc_threshold = 0.3;
  double g2i_percentile = 0.75;
  double g2i_min_frac = 0.5;
  bool i2g_clamp_negative = false;

  std::uint64_t seed = 0;

  nlohmann::json echo;  // the merged json this config was built from
};

namespace detail {

class KeyedJson {
 public:
  explicit KeyedJson(nlohmann::json j) : json_(std::move(j)) {
    if (!json_.is_object()) throw UsageError("config root must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    auto it = json_.find(key);
    if (it == json_.end()) return;
    consumed_.insert(key);
    try {
      out = it->get<T>();
    } catch (const nlohmann::json::exception&) {
      throw UsageError(std::string("config key '") + key +
                       "' has the wrong type");
    }
  }

  void get_array3(const char* key, std::array<double, 3>& out) {
    auto it = json_.find(key);
    if (it == json_.end()) return;
    consumed_.insert(key);
    if (!it->is_array() || it->size() != 3)
      throw UsageError(std::string("config key '") + key +
                       "' must be an array of 3 numbers");
    for (int i = 0; i < 3; ++i)
      out[static_cast<std::size_t>(i)] = (*it)[static_cast<std::size_t>(i)];
  }

  void get_range(const char* key, double& lo, double& hi) {
    auto it = json_.find(key);
    if (it == json_.end()) return;
    consumed_.insert(key);
    if (!it->is_array() || it->size() != 2)
      throw UsageError(std::string("config key '") + key +
                       "' must be an array [lo, hi]");
    lo = (*it)[0];
    hi = (*it)[1];
  }

  void finish() const {
    std::vector<std::string> unknown;
    for (auto it = json_.begin(); it != json_.end(); ++it)
      if (!consumed_.count(it.key())) unknown.push_back(it.key());
    if (!unknown.empty()) {
      std::string msg = "unknown config key(s):";
      for (const auto& k : unknown) msg += " '" + k + "'";
      throw UsageError(msg);
    }
  }

  const nlohmann::json& raw() const { return json_; }

 private:
  nlohmann::json json_;
  std::set<std::string> consumed_;
};

}  // namespace detail

inline RunConfig parse_config(const nlohmann::json& json) {
  detail::KeyedJson j(json);
  RunConfig cfg;

  j.get("target_sum", cfg.target_sum);
  j.get("min_overlap", cfg.min_overlap);
  j.get("min_frac", cfg.min_frac);
  j.get("hvg_n_top", cfg.hvg_n_top);
  j.get("hvg_n_bins", cfg.hvg_n_bins);
  j.get("supplement_file", cfg.supplement_file);
  j.get("rename_file", cfg.rename_file);
  j.get_array3("split_ratios", cfg.split_ratios);

  j.get("vae_hidden_dims", cfg.vae_hidden_dims);
  j.get("latent_dim", cfg.latent_dim);
  j.get("n_flows", cfg.n_flows);
  j.get("vae_dropout", cfg.vae_dropout);
  j.get("decoder_dropout", cfg.decoder_dropout);
  j.get("beta_kl", cfg.beta_kl);

  j.get("image_size", cfg.image_size);
  j.get("patch_px", cfg.patch_px);
  j.get("vit_depth", cfg.vit_depth);
  j.get("vit_heads", cfg.vit_heads);
  j.get("mlp_ratio", cfg.mlp_ratio);
  j.get("vit_pooling", cfg.vit_pooling);
  j.get_array3("channel_mean", cfg.channel_mean);
  j.get_array3("channel_sd", cfg.channel_sd);

  j.get("lora_rank", cfg.lora_rank);
  j.get("lora_alpha", cfg.lora_alpha);
  j.get("lora_dropout", cfg.lora_dropout);
  j.get("finetune_blocks", cfg.finetune_blocks);
  j.get("adapter_targets", cfg.adapter_targets);
  j.get("aux_projection", cfg.aux_projection);

  j.get("batch_size", cfg.train.batch_size);
  j.get("warmup_epochs", cfg.train.warmup_epochs);
  j.get("stage2_epochs", cfg.train.stage2_epochs);
  j.get("lr_stage1", cfg.train.lr_stage1);
  j.get("lr_image", cfg.train.lr_image);
  j.get("lr_omics", cfg.train.lr_omics);
  j.get("weight_decay", cfg.train.weight_decay);
  j.get("layer_decay", cfg.train.layer_decay);
  j.get("grad_clip", cfg.train.grad_clip);
  j.get("grl_lambda", cfg.train.grl_lambda);
  j.get("tau", cfg.train.weights.tau);
  j.get("lambda_inv", cfg.train.weights.lambda_inv);
  j.get("lambda_red", cfg.train.weights.lambda_red);
  j.get("lambda_mse", cfg.train.weights.lambda_mse);
  j.get("lambda_contrast", cfg.train.weights.lambda_contrast);
  j.get("lambda_rec_img", cfg.train.weights.lambda_rec_img);
  j.get("lambda_rec_gene", cfg.train.weights.lambda_rec_gene);
  j.get("lambda_da", cfg.train.weights.lambda_da);

  auto& aug = cfg.train.augmentation;
  j.get("aug_p_resized_crop", aug.p_resized_crop);
  j.get_range("aug_crop_scale", aug.crop_scale_min, aug.crop_scale_max);
  j.get("aug_p_hflip", aug.p_hflip);
  j.get("aug_p_vflip", aug.p_vflip);
  j.get("aug_p_brightness_contrast", aug.p_brightness_contrast);
  j.get("aug_brightness", aug.brightness);
  j.get("aug_contrast", aug.contrast);
  j.get("aug_p_grayscale", aug.p_grayscale);
  j.get("aug_p_channel_shuffle", aug.p_channel_shuffle);
  j.get("aug_p_gauss_blur", aug.p_gauss_blur);
  j.get_range("aug_blur_sigma", aug.blur_sigma_min, aug.blur_sigma_max);

  j.get("synth_n_samples", cfg.synth.n_samples);
  j.get("synth_spots_per_sample", cfg.synth.spots_per_sample);
  j.get("synth_n_genes", cfg.synth.n_genes);
  j.get("synth_latent_factors", cfg.synth.latent_factors);
  j.get("synth_image_size", cfg.synth.image_size);
  j.get("synth_noise_sigma", cfg.synth.noise_sigma);
  j.get("synth_n_domains", cfg.synth.n_domains);

  j.get("probe_k", cfg.probe_k);
  j.get("probe_components", cfg.probe_components);
  j.get("probe_alpha", cfg.probe_alpha);
  j.get("retrieve_k", cfg.retrieve_k);
  j.get("g2i_pcc_threshold", cfg.g2i_pcc_threshold);
  j.get("g2i_percentile", cfg.g2i_percentile);
  j.get("g2i_min_frac", cfg.g2i_min_frac);
  j.get("i2g_clamp_negative", cfg.i2g_clamp_negative);

  j.get("seed", cfg.seed);
  j.finish();

  cfg.train.seed = cfg.seed;
  cfg.synth.seed = cfg.seed;
  cfg.echo = json;
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config file: " + path.string());
  nlohmann::json json;
  try {
    json = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("malformed config json: " + std::string(e.what()));
  }
  return parse_config(json);
}

inline omics::VaeConfig vae_config(const RunConfig& cfg, int input_dim) {
  omics::VaeConfig vc;
  vc.input_dim = input_dim;
  vc.hidden_dims = cfg.vae_hidden_dims;
  vc.latent_dim = cfg.latent_dim;
  vc.n_flows = cfg.n_flows;
  vc.encoder_dropout = cfg.vae_dropout;
  vc.decoder_dropout = cfg.decoder_dropout;
  vc.beta_kl = cfg.beta_kl;
  return vc;
}

inline vision::ToyVitConfig vit_config(const RunConfig& cfg) {
  vision::ToyVitConfig vc;
  vc.image_size = cfg.image_size;
  vc.patch_px = cfg.patch_px;
  vc.depth = cfg.vit_depth;
  vc.width = cfg.latent_dim;  // shared embedding dimension
  vc.heads = cfg.vit_heads;
  vc.mlp_ratio = cfg.mlp_ratio;
  if (cfg.vit_pooling == "mean")
    vc.mean_pool_tokens = true;
  else if (cfg.vit_pooling != "cls")
    throw UsageError("vit_pooling must be 'cls' or 'mean'");
  return vc;
}

inline vision::AdapterPlan adapter_plan(const RunConfig& cfg) {
  vision::AdapterPlan plan;
  plan.n_finetune_blocks = cfg.finetune_blocks;
  plan.targets.clear();
  for (const auto& name : cfg.adapter_targets)
    plan.targets.insert(vision::adapter_target_from_name(name));
  plan.rank = cfg.lora_rank;
  plan.alpha = cfg.lora_alpha;
  plan.dropout = cfg.lora_dropout;
  return plan;
}

}  // namespace seal::cli
