#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "seal/autodiff/nn.hpp"
#include "seal/autodiff/tape.hpp"
#include "seal/core/errors.hpp"
#include "seal/core/rng.hpp"
#include "seal/image/image.hpp"

namespace seal::vision {

using ad::Mat;
using ad::Tape;
using ad::Var;

// Desk-scale stand-in for the frozen pathology backbones: a small ViT whose
// width doubles as the shared embedding dimension.
struct ToyVitConfig {
  int image_size = 64;
  int patch_px = 16;
  int depth = 4;
  int width = 64;
  int heads = 4;
  double mlp_ratio = 2.0;
  bool mean_pool_tokens = false;  // default: class-token embedding

  void validate() const {
    if (image_size < 1 || patch_px < 1 || image_size % patch_px != 0)
      throw DataError("ToyVitConfig: image_size must be divisible by patch_px");
    if (width < 1 || heads < 1 || width % heads != 0)
      throw DataError("ToyVitConfig: width must be divisible by heads");
    if (depth < 1) throw DataError("ToyVitConfig: depth must be >= 1");
    if (mlp_ratio <= 0) throw DataError("ToyVitConfig: mlp_ratio must be > 0");
  }

  int tokens_per_image() const {
    const int side = image_size / patch_px;
    return side * side + 1;  // patches + class token
  }
};

// Low-rank pair attached to one frozen linear map: h = W0 x + (alpha/r) B A x.
struct LoraAdapter {
  ad::Param A;  // [r x k]
  ad::Param B;  // [d_out x r]
  int rank = 8;
  double alpha = 8.0;
  double dropout = 0.0;
  std::string target;
};

// Reference semantics of the adapted forward pass on a single column vector.
inline Eigen::VectorXd lora_forward(const Eigen::VectorXd& x, const Mat& w0,
                                    const LoraAdapter& adapter) {
  const Eigen::VectorXd base = w0 * x;
  return base + (adapter.alpha / adapter.rank) *
                    (adapter.B.value * (adapter.A.value * x));
}

// Linear map with an optional LoRA adapter. Activations are rows, so the
// base weight is stored [in x out] and the adapter factors follow the
// [r x in] / [out x r] convention of LoraAdapter.
struct LoraLinear {
  ad::Linear base;
  std::optional<LoraAdapter> adapter;

  LoraLinear() = default;
  LoraLinear(const std::string& name, Eigen::Index in, Eigen::Index out,
             Rng& rng)
      : base(name, in, out, rng) {}

  void attach(int rank, double alpha, double dropout, Rng& rng) {
    LoraAdapter a;
    a.rank = rank;
    a.alpha = alpha;
    a.dropout = dropout;
    a.target = base.weight.name;
    // B starts at zero so the adapted map is exactly the base map until the
    // first optimizer step; A is a small seeded Gaussian.
    a.A = ad::Param(base.weight.name + ".lora_A",
                    ad::randn_matrix(rng, rank, base.in_dim(), 0.01));
    a.B = ad::Param(base.weight.name + ".lora_B",
                    Mat::Zero(base.out_dim(), rank));
    adapter = std::move(a);
  }

  Var forward(Tape& t, Var x, bool training, Rng* dropout_rng,
              bool use_adapter = true) {
    Var y = base.forward(t, x);
    if (!adapter || !use_adapter) return y;
    Var xin = x;
    if (training && adapter->dropout > 0.0 && dropout_rng)
      xin = t.dropout(xin, adapter->dropout, *dropout_rng, true);
    Var down = t.matmul(xin, t.param(adapter->A), false, true);  // [n x r]
    Var up = t.matmul(down, t.param(adapter->B), false, true);   // [n x out]
    return t.add(y, t.scale(up, adapter->alpha / adapter->rank));
  }

  void collect_base(std::vector<ad::Param*>& out) { base.collect(out); }
  void collect_adapter(std::vector<ad::Param*>& out) {
    if (adapter) {
      out.push_back(&adapter->A);
      out.push_back(&adapter->B);
    }
  }
};

enum class AdapterTarget { query, key, value, out, mlp_in, mlp_out };

inline AdapterTarget adapter_target_from_name(const std::string& name) {
  if (name == "query") return AdapterTarget::query;
  if (name == "key") return AdapterTarget::key;
  if (name == "value") return AdapterTarget::value;
  if (name == "out") return AdapterTarget::out;
  if (name == "mlp_in") return AdapterTarget::mlp_in;
  if (name == "mlp_out") return AdapterTarget::mlp_out;
  throw DataError("unknown adapter target: " + name);
}

struct AdapterPlan {
  int n_finetune_blocks = 2;  // counted from the top
  std::set<AdapterTarget> targets = {AdapterTarget::query,
                                     AdapterTarget::value};
  int rank = 8;
  double alpha = 8.0;
  double dropout = 0.25;
};

struct AttachReport {
  long long trainable_params = 0;
  long long frozen_params = 0;
  int wrapped_maps = 0;
};

class ToyViT {
 public:
  struct Block {
    ad::LayerNorm ln1;
    LoraLinear q, k, v, out;
    ad::LayerNorm ln2;
    LoraLinear mlp_in, mlp_out;
  };

  ToyViT() = default;

  ToyViT(ToyVitConfig cfg, Rng& rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const int d = cfg_.width;
    const int patch_dim = cfg_.patch_px * cfg_.patch_px * 3;
    const int mlp_dim = static_cast<int>(std::lround(d * cfg_.mlp_ratio));
    patch_embed_ = ad::Linear("vit.patch_embed", patch_dim, d, rng);
    cls_token_ = ad::Param("vit.cls_token", ad::randn_matrix(rng, 1, d, 0.02),
                           /*decay=*/false);
    pos_embed_ = ad::Param(
        "vit.pos_embed",
        ad::randn_matrix(rng, cfg_.tokens_per_image(), d, 0.02),
        /*decay=*/false);
    for (int i = 0; i < cfg_.depth; ++i) {
      const std::string prefix = "vit.block" + std::to_string(i);
      Block b;
      b.ln1 = ad::LayerNorm(prefix + ".ln1", d);
      b.q = LoraLinear(prefix + ".q", d, d, rng);
      b.k = LoraLinear(prefix + ".k", d, d, rng);
      b.v = LoraLinear(prefix + ".v", d, d, rng);
      b.out = LoraLinear(prefix + ".out", d, d, rng);
      b.ln2 = ad::LayerNorm(prefix + ".ln2", d);
      b.mlp_in = LoraLinear(prefix + ".mlp_in", d, mlp_dim, rng);
      b.mlp_out = LoraLinear(prefix + ".mlp_out", mlp_dim, d, rng);
      blocks_.push_back(std::move(b));
    }
    ln_final_ = ad::LayerNorm("vit.ln_final", d);
  }

  const ToyVitConfig& config() const { return cfg_; }
  std::vector<Block>& blocks() { return blocks_; }

  // Row per patch in raster order; pixels row-major, channels interleaved.
  Mat patchify(const img::Image& image) const {
    if (image.height() != cfg_.image_size || image.width() != cfg_.image_size)
      throw DataError("ToyViT: image is " + std::to_string(image.height()) +
                      "x" + std::to_string(image.width()) + ", expected " +
                      std::to_string(cfg_.image_size) + " square");
    const int p = cfg_.patch_px;
    const int side = cfg_.image_size / p;
    Mat out(side * side, p * p * 3);
    for (int py = 0; py < side; ++py)
      for (int px = 0; px < side; ++px) {
        Eigen::Index col = 0;
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            for (int c = 0; c < 3; ++c)
              out(py * side + px, col++) =
                  image.chan[static_cast<std::size_t>(c)](py * p + y,
                                                          px * p + x);
      }
    return out;
  }

  // Batched forward over channel-normalized images; returns [B x d]
  // embeddings (class token or mean of patch tokens).
  Var forward_t(Tape& t, const std::vector<img::Image>& batch, bool training,
                Rng* dropout_rng, bool use_adapters = true) {
    if (batch.empty()) throw DataError("ToyViT: empty batch");
    const int n = static_cast<int>(batch.size());
    const int patches = cfg_.tokens_per_image() - 1;
    const int tokens = cfg_.tokens_per_image();
    Mat all_patches(static_cast<Eigen::Index>(n) * patches,
                    cfg_.patch_px * cfg_.patch_px * 3);
    for (int b = 0; b < n; ++b)
      all_patches.middleRows(static_cast<Eigen::Index>(b) * patches, patches) =
          patchify(batch[static_cast<std::size_t>(b)]);

    Var x = patch_embed_.forward(t, t.input(std::move(all_patches)));
    x = t.prepend_row_per_group(x, t.param(cls_token_), n);
    x = t.add_group_broadcast(x, t.param(pos_embed_), n);

    for (auto& blk : blocks_) {
      Var h = blk.ln1.forward(t, x);
      Var q = blk.q.forward(t, h, training, dropout_rng, use_adapters);
      Var k = blk.k.forward(t, h, training, dropout_rng, use_adapters);
      Var v = blk.v.forward(t, h, training, dropout_rng, use_adapters);
      Var attn = t.attention(q, k, v, n, cfg_.heads);
      x = t.add(x, blk.out.forward(t, attn, training, dropout_rng,
                                   use_adapters));
      Var h2 = blk.ln2.forward(t, x);
      Var m = blk.mlp_in.forward(t, h2, training, dropout_rng, use_adapters);
      m = blk.mlp_out.forward(t, t.gelu(m), training, dropout_rng,
                              use_adapters);
      x = t.add(x, m);
    }
    x = ln_final_.forward(t, x);

    if (cfg_.mean_pool_tokens) {
      Mat pool = Mat::Zero(n, static_cast<Eigen::Index>(n) * tokens);
      for (int b = 0; b < n; ++b)
        for (int i = 1; i < tokens; ++i)
          pool(b, static_cast<Eigen::Index>(b) * tokens + i) =
              1.0 / static_cast<double>(tokens - 1);
      return t.matmul(t.input(std::move(pool)), x);
    }
    std::vector<int> cls_rows;
    cls_rows.reserve(static_cast<std::size_t>(n));
    for (int b = 0; b < n; ++b) cls_rows.push_back(b * tokens);
    return t.gather_rows(x, cls_rows);
  }

  Mat encode_images_eval(const std::vector<img::Image>& batch,
                         bool use_adapters = true) {
    Tape t;
    return t.val(forward_t(t, batch, /*training=*/false, nullptr,
                           use_adapters));
  }

  std::vector<ad::Param*> backbone_params() {
    std::vector<ad::Param*> out;
    patch_embed_.collect(out);
    out.push_back(&cls_token_);
    out.push_back(&pos_embed_);
    for (auto& b : blocks_) {
      b.ln1.collect(out);
      b.q.collect_base(out);
      b.k.collect_base(out);
      b.v.collect_base(out);
      b.out.collect_base(out);
      b.ln2.collect(out);
      b.mlp_in.collect_base(out);
      b.mlp_out.collect_base(out);
    }
    ln_final_.collect(out);
    return out;
  }

  std::vector<ad::Param*> adapter_params() {
    std::vector<ad::Param*> out;
    for (auto& b : blocks_) {
      b.q.collect_adapter(out);
      b.k.collect_adapter(out);
      b.v.collect_adapter(out);
      b.out.collect_adapter(out);
      b.mlp_in.collect_adapter(out);
      b.mlp_out.collect_adapter(out);
    }
    return out;
  }

  // Block index of an adapter/backbone param, for layer-decay scaling;
  // -1 for patch embedding / tokens / final norm.
  static int block_index_of(const std::string& param_name) {
    const auto pos = param_name.find(".block");
    if (pos == std::string::npos) return -1;
    return std::stoi(param_name.substr(pos + 6));
  }

 private:
  ToyVitConfig cfg_;
  ad::Linear patch_embed_;
  ad::Param cls_token_;
  ad::Param pos_embed_;
  std::vector<Block> blocks_;
  ad::LayerNorm ln_final_;
};

// Freezes the whole backbone and attaches adapters to the selected targets
// of the top plan.n_finetune_blocks blocks.
inline AttachReport attach_adapters(ToyViT& vit, const AdapterPlan& plan,
                                    Rng& rng) {
  if (plan.n_finetune_blocks < 0 ||
      plan.n_finetune_blocks > vit.config().depth)
    throw DataError("attach_adapters: n_finetune_blocks outside [0, depth]");
  if (plan.rank < 1) throw DataError("attach_adapters: rank must be >= 1");

  AttachReport report;
  for (ad::Param* p : vit.backbone_params()) {
    p->freeze();
    report.frozen_params += p->value.size();
  }

  const int depth = vit.config().depth;
  const int first = depth - plan.n_finetune_blocks;
  for (int i = first; i < depth; ++i) {
    auto& blk = vit.blocks()[static_cast<std::size_t>(i)];
    auto wrap = [&](LoraLinear& lin) {
      lin.attach(plan.rank, plan.alpha, plan.dropout, rng);
      report.trainable_params +=
          lin.adapter->A.value.size() + lin.adapter->B.value.size();
      ++report.wrapped_maps;
    };
    for (AdapterTarget target : plan.targets) {
      switch (target) {
        case AdapterTarget::query: wrap(blk.q); break;
        case AdapterTarget::key: wrap(blk.k); break;
        case AdapterTarget::value: wrap(blk.v); break;
        case AdapterTarget::out: wrap(blk.out); break;
        case AdapterTarget::mlp_in: wrap(blk.mlp_in); break;
        case AdapterTarget::mlp_out: wrap(blk.mlp_out); break;
      }
    }
  }
  return report;
}

// Feedforward head d -> G used for the image-to-gene reconstruction term.
struct ImageGeneDecoder {
  ad::Linear fc1;
  ad::Linear fc2;

  ImageGeneDecoder() = default;
  ImageGeneDecoder(Eigen::Index dim, Eigen::Index genes, Rng& rng,
                   Eigen::Index hidden = 128)
      : fc1("img_gene_decoder.fc1", dim, hidden, rng),
        fc2("img_gene_decoder.fc2", hidden, genes, rng) {}

  Var forward(Tape& t, Var z) { return fc2.forward(t, t.relu(fc1.forward(t, z))); }

  void collect(std::vector<ad::Param*>& out) {
    fc1.collect(out);
    fc2.collect(out);
  }
};

enum class ProjectionMode { none, linear };

inline ProjectionMode projection_mode_from_name(const std::string& name) {
  if (name == "none") return ProjectionMode::none;
  if (name == "linear") return ProjectionMode::linear;
  throw DataError("unknown auxiliary projection mode: " + name);
}

// Optional per-modality linear map applied before the contrastive loss.
struct AuxProjection {
  ProjectionMode mode = ProjectionMode::none;
  ad::Linear proj;

  AuxProjection() = default;
  AuxProjection(const std::string& name, ProjectionMode m, Eigen::Index dim,
                Rng& rng)
      : mode(m) {
    if (mode == ProjectionMode::linear) proj = ad::Linear(name, dim, dim, rng);
  }

  Var forward(Tape& t, Var z) {
    return mode == ProjectionMode::none ? z : proj.forward(t, z);
  }

  void collect(std::vector<ad::Param*>& out) {
    if (mode == ProjectionMode::linear) proj.collect(out);
  }
};

}  // namespace seal::vision
