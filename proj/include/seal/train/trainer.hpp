#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seal/autodiff/tape.hpp"
#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"
#include "seal/image/image.hpp"
#include "seal/losses/losses.hpp"
#include "seal/omics/vae.hpp"
#include "seal/train/augment.hpp"
#include "seal/train/checkpoint.hpp"
#include "seal/train/optim.hpp"
#include "seal/vision/vit.hpp"

namespace seal::train {

using ad::Mat;
using ad::Tape;
using ad::Var;

struct TrainConfig {
  int batch_size = 384;
  int warmup_epochs = 3;  // Stage I epoch budget
  int stage2_epochs = 10;
  double lr_stage1 = 5e-4;
  double lr_image = 1e-4;
  double lr_omics = 1e-4;
  double weight_decay = 0.2;
  double layer_decay = 0.7;
  double grad_clip = 5.0;
  double grl_lambda = 1.0;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
  AugmentConfig augmentation;

  void validate() const {
    if (batch_size < 1) throw DataError("TrainConfig: batch_size must be >= 1");
    if (warmup_epochs < 1 || stage2_epochs < 1)
      throw DataError("TrainConfig: epoch counts must be >= 1");
    if (lr_stage1 <= 0 || lr_image <= 0 || lr_omics <= 0)
      throw DataError("TrainConfig: learning rates must be positive");
    if (layer_decay <= 0 || layer_decay > 1)
      throw DataError("TrainConfig: layer_decay must lie in (0, 1]");
    weights.validate();
    augmentation.validate();
  }
};

// Deterministic batch index stream: a fresh shuffle per epoch, dropping a
// trailing singleton batch (batch norm needs >= 2 rows).
inline std::vector<std::vector<Eigen::Index>> make_batches(Eigen::Index n,
                                                           int batch_size,
                                                           Rng& rng) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<std::vector<Eigen::Index>> batches;
  for (Eigen::Index at = 0; at < n; at += batch_size) {
    const Eigen::Index take = std::min<Eigen::Index>(batch_size, n - at);
    if (take == 1 && batch_size > 1 && !batches.empty()) break;
    batches.emplace_back(order.begin() + at, order.begin() + at + take);
  }
  return batches;
}

struct Stage1Result {
  std::vector<std::string> log_lines;        // epoch step loss_total loss_rec loss_reg lr
  std::vector<std::string> breakdown_lines;  // step loss_name value
  std::vector<double> epoch_rec_means;
  std::string rng_state_after;
};

// Stage I warmup: reconstruction + beta_kl * variational regularizer over
// smoothed panel-restricted spots, AdamW, cosine-annealed learning rate.
inline Stage1Result train_stage1(omics::OmicsVae& vae, const Mat& spots,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (spots.rows() == 0) throw DataError("train_stage1: empty dataset");
  if (spots.cols() != vae.config().input_dim)
    throw DataError("train_stage1: spot width does not match the VAE panel");

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(1);
  Rng eps_rng = root.fork(2);
  Rng dropout_rng = root.fork(3);

  AdamW opt(vae.params(), cfg.weight_decay);
  const long long steps_per_epoch = std::max<long long>(
      1, (spots.rows() + cfg.batch_size - 1) / cfg.batch_size);
  const long long total_steps = steps_per_epoch * cfg.warmup_epochs;

  Stage1Result result;
  long long step = 0;
  const int d = vae.config().latent_dim;
  for (int epoch = 0; epoch < cfg.warmup_epochs; ++epoch) {
    double epoch_rec = 0.0;
    long long epoch_batches = 0;
    for (const auto& batch : make_batches(spots.rows(), cfg.batch_size,
                                          shuffle_rng)) {
      Mat x(static_cast<Eigen::Index>(batch.size()), spots.cols());
      for (std::size_t i = 0; i < batch.size(); ++i)
        x.row(static_cast<Eigen::Index>(i)) = spots.row(batch[i]);
      Mat eps(static_cast<Eigen::Index>(batch.size()), d);
      for (Eigen::Index r = 0; r < eps.rows(); ++r)
        for (Eigen::Index c = 0; c < eps.cols(); ++c)
          eps(r, c) = eps_rng.normal();

      Tape tape;
      Var xin = tape.input(x);
      auto fwd = vae.forward_t(tape, xin, eps, /*training=*/true, &dropout_rng);
      Var rec = losses::reconstruction_loss_t(tape, xin, fwd.recon,
                                              cfg.weights);
      Var loss = tape.add(rec, tape.scale(fwd.regularizer,
                                          vae.config().beta_kl));

      const double rec_v = tape.val(rec)(0, 0);
      const double reg_v = tape.val(fwd.regularizer)(0, 0);
      const double loss_v = tape.val(loss)(0, 0);
      if (!std::isfinite(loss_v)) {
        std::ostringstream os;
        os << "train_stage1: non-finite loss at epoch " << epoch << " step "
           << step << " (rec=" << rec_v << ", regularizer=" << reg_v << ")";
        throw NumericError(os.str());
      }

      opt.zero_grad();
      tape.backward(loss);
      clip_global_norm(opt.params(), cfg.grad_clip);
      const double lr = cosine_anneal(step, total_steps, cfg.lr_stage1);
      opt.step(lr);

      std::ostringstream line;
      line.precision(12);
      line << epoch << '\t' << step << '\t' << loss_v << '\t' << rec_v << '\t'
           << reg_v << '\t' << lr;
      result.log_lines.push_back(line.str());
      for (const auto& [name, value] :
           std::initializer_list<std::pair<const char*, double>>{
               {"rec", rec_v}, {"regularizer", reg_v}}) {
        std::ostringstream bl;
        bl.precision(12);
        bl << step << '\t' << name << '\t' << value;
        result.breakdown_lines.push_back(bl.str());
      }

      epoch_rec += rec_v;
      ++epoch_batches;
      ++step;
    }
    result.epoch_rec_means.push_back(epoch_rec /
                                     static_cast<double>(epoch_batches));
  }
  result.rng_state_after = root.serialize();
  return result;
}

// Joint model trained in Stage II.
struct AlignmentModel {
  vision::ToyViT vit;
  omics::OmicsVae vae;
  vision::ImageGeneDecoder img_decoder;
  vision::AuxProjection proj_img;
  vision::AuxProjection proj_omics;
  losses::DomainHead domain_head;
  vision::AttachReport attach_report;
  std::array<double, 3> channel_mean{0.5, 0.5, 0.5};
  std::array<double, 3> channel_sd{0.5, 0.5, 0.5};

  std::vector<ad::Param*> vision_side_params() {
    std::vector<ad::Param*> out = vit.adapter_params();
    img_decoder.collect(out);
    proj_img.collect(out);
    proj_omics.collect(out);
    domain_head.collect(out);
    return out;
  }

  img::Image normalize(const img::Image& image) const {
    return img::normalize_channels(image, channel_mean, channel_sd);
  }
};

struct PairedItem {
  std::string sample_id;
  std::string barcode;
  Eigen::Index row = 0;  // row in the paired gene matrix
  int domain_id = 0;
};

using ImageProvider =
    std::function<img::Image(const std::string& sample_id,
                             const std::string& barcode)>;

struct Stage2Result {
  std::vector<std::string> log_lines;  // epoch step total infonce rec_img rec_gene da lr
  std::vector<std::string> breakdown_lines;
  std::vector<double> epoch_infonce_means;
  std::string rng_state_after;
};

// Stage II: contrastive alignment with auxiliary reconstruction and
// domain-adversarial objectives. The omics branch keeps training; the image
// backbone stays frozen with LoRA adapters as the only vision-side encoder
// parameters. Adapter learning rates decay per block below the top.
inline Stage2Result train_stage2(AlignmentModel& model, const Mat& genes,
                                 const std::vector<PairedItem>& pairs,
                                 const ImageProvider& images,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (pairs.empty()) throw DataError("train_stage2: no paired items");
  for (const auto& p : pairs)
    if (p.row < 0 || p.row >= genes.rows())
      throw DataError("train_stage2: pair row outside gene matrix");

  // Layer decay on adapter params by block index.
  const int top_block = model.vit.config().depth - 1;
  for (ad::Param* p : model.vit.adapter_params()) {
    const int blk = vision::ToyViT::block_index_of(p->name);
    p->lr_scale = blk >= 0 ? std::pow(cfg.layer_decay, top_block - blk) : 1.0;
  }

  std::vector<ad::Param*> vision_params = model.vision_side_params();
  std::vector<ad::Param*> omics_params = model.vae.params();
  AdamW vision_opt(vision_params, cfg.weight_decay);
  AdamW omics_opt(omics_params, cfg.weight_decay);
  std::vector<ad::Param*> all_params = vision_params;
  all_params.insert(all_params.end(), omics_params.begin(),
                    omics_params.end());

  Rng root(cfg.seed);
  Rng shuffle_rng = root.fork(11);
  Rng eps_rng = root.fork(12);
  Rng dropout_rng = root.fork(13);
  Rng aug_rng = root.fork(14);

  const long long steps_per_epoch = std::max<long long>(
      1,
      (static_cast<long long>(pairs.size()) + cfg.batch_size - 1) /
          cfg.batch_size);
  const long long total_steps = steps_per_epoch * cfg.stage2_epochs;
  const int d = model.vae.config().latent_dim;

  Stage2Result result;
  long long step = 0;
  for (int epoch = 0; epoch < cfg.stage2_epochs; ++epoch) {
    double epoch_nce = 0.0;
    long long epoch_batches = 0;
    for (const auto& batch :
         make_batches(static_cast<Eigen::Index>(pairs.size()), cfg.batch_size,
                      shuffle_rng)) {
      const auto bsz = static_cast<Eigen::Index>(batch.size());
      Mat x(bsz, genes.cols());
      std::vector<img::Image> imgs;
      imgs.reserve(batch.size());
      std::vector<int> domains;
      domains.reserve(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const PairedItem& item = pairs[static_cast<std::size_t>(batch[i])];
        x.row(static_cast<Eigen::Index>(i)) = genes.row(item.row);
        img::Image raw = images(item.sample_id, item.barcode);
        imgs.push_back(model.normalize(augment(raw, cfg.augmentation, aug_rng)));
        domains.push_back(item.domain_id);
      }
      Mat eps(bsz, d);
      for (Eigen::Index r = 0; r < eps.rows(); ++r)
        for (Eigen::Index c = 0; c < eps.cols(); ++c)
          eps(r, c) = eps_rng.normal();

      Tape tape;
      Var z_img =
          model.vit.forward_t(tape, imgs, /*training=*/true, &dropout_rng);
      Var xin = tape.input(x);
      auto enc = model.vae.encode_t(tape, xin, true, &dropout_rng);
      Var sigma = tape.exp_of(tape.scale(enc.log_var, 0.5));
      Var z0 = tape.add(enc.mu, tape.mul(sigma, tape.input(eps)));
      auto flow = model.vae.apply_flows_t(tape, z0);
      Var z_gene = flow.z_k;
      Var recon_gene = model.vae.decode_t(tape, z_gene, true, &dropout_rng);

      Var nce = losses::info_nce_t(tape, model.proj_img.forward(tape, z_img),
                                   model.proj_omics.forward(tape, z_gene),
                                   cfg.weights.tau);
      Var rec_img = losses::reconstruction_loss_t(
          tape, xin, model.img_decoder.forward(tape, z_img), cfg.weights);
      Var rec_gene =
          losses::reconstruction_loss_t(tape, xin, recon_gene, cfg.weights);
      Var da = losses::domain_loss_t(
          tape, model.domain_head, tape.grl(z_img, cfg.grl_lambda),
          tape.grl(z_gene, cfg.grl_lambda), domains);
      Var total = losses::stage2_loss_t(tape, nce, rec_img, rec_gene, da,
                                        cfg.weights);

      const double nce_v = tape.val(nce)(0, 0);
      const double rec_img_v = tape.val(rec_img)(0, 0);
      const double rec_gene_v = tape.val(rec_gene)(0, 0);
      const double da_v = tape.val(da)(0, 0);
      const double total_v = tape.val(total)(0, 0);
      if (!std::isfinite(total_v)) {
        std::ostringstream os;
        os << "train_stage2: non-finite loss at epoch " << epoch << " step "
           << step << " (infonce=" << nce_v << ", rec_img=" << rec_img_v
           << ", rec_gene=" << rec_gene_v << ", da=" << da_v << ")";
        throw NumericError(os.str());
      }

      vision_opt.zero_grad();
      omics_opt.zero_grad();
      tape.backward(total);
      clip_global_norm(all_params, cfg.grad_clip);
      const double lr_img = cosine_anneal(step, total_steps, cfg.lr_image);
      const double lr_omics = cosine_anneal(step, total_steps, cfg.lr_omics);
      vision_opt.step(lr_img);
      omics_opt.step(lr_omics);

      std::ostringstream line;
      line.precision(12);
      line << epoch << '\t' << step << '\t' << total_v << '\t' << nce_v
           << '\t' << rec_img_v << '\t' << rec_gene_v << '\t' << da_v << '\t'
           << lr_img;
      result.log_lines.push_back(line.str());
      for (const auto& [name, value] :
           std::initializer_list<std::pair<const char*, double>>{
               {"infonce", nce_v},
               {"rec_img", rec_img_v},
               {"rec_gene", rec_gene_v},
               {"da", da_v}}) {
        std::ostringstream bl;
        bl.precision(12);
        bl << step << '\t' << name << '\t' << value;
        result.breakdown_lines.push_back(bl.str());
      }

      epoch_nce += nce_v;
      ++epoch_batches;
      ++step;
    }
    result.epoch_infonce_means.push_back(epoch_nce /
                                         static_cast<double>(epoch_batches));
  }
  result.rng_state_after = root.serialize();
  return result;
}

}  // namespace seal::train
