#pragma once

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "seal/cli/config.hpp"
#include "seal/core/blob.hpp"
#include "seal/core/errors.hpp"
#include "seal/data/dataset.hpp"
#include "seal/evalsuite/linear_probe.hpp"
#include "seal/evalsuite/metrics.hpp"
#include "seal/evalsuite/retrieval.hpp"
#include "seal/ingest/lattice.hpp"
#include "seal/ingest/pipeline.hpp"
#include "seal/ingest/split.hpp"
#include "seal/losses/losses.hpp"
#include "seal/omics/vae.hpp"
#include "seal/synth/generator.hpp"
#include "seal/train/checkpoint.hpp"
#include "seal/train/trainer.hpp"
#include "seal/vision/vit.hpp"

namespace seal::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// preprocessing pipeline
// ---------------------------------------------------------------------------

// Full ingest chain: load, rename, harmonize, prevalence filter, drop empty
// spots, normalize, log1p, HVG + supplement panel, restrict, smooth, split.
inline data::ProcessedDataset run_preprocess(const fs::path& raw_dir,
                                             const RunConfig& cfg,
                                             int threads = 1) {
  const auto dirs = data::list_sample_dirs(raw_dir);

  std::vector<ingest::SpotTable> samples(dirs.size());
  auto load_one = [&](std::size_t i) { samples[i] = ingest::load_sample(dirs[i]); };
  if (threads > 1) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = 0; i < dirs.size(); ++i)
      jobs.push_back(std::async(std::launch::async, load_one, i));
    for (auto& job : jobs) job.get();
  } else {
    for (std::size_t i = 0; i < dirs.size(); ++i) load_one(i);
  }

  if (!cfg.rename_file.empty()) {
    const auto mapping = ingest::load_rename_mapping(cfg.rename_file);
    for (auto& s : samples) s = ingest::rename_genes(s, mapping);
  }

  auto harmonized = ingest::harmonize_panels(samples, cfg.min_overlap);
  for (const auto& id : harmonized.dropped)
    std::cerr << "[preprocess] dropped sample (panel overlap too small): "
              << id << "\n";

  auto filtered =
      ingest::filter_genes_by_prevalence(harmonized.kept, cfg.min_frac);
  for (auto& s : filtered) s = ingest::drop_empty_spots(s);

  for (auto& s : filtered)
    s = ingest::log1p_transform(ingest::count_normalize(s, cfg.target_sum));

  int n_top = cfg.hvg_n_top;
  const int panel_width = static_cast<int>(filtered.front().n_genes());
  if (n_top > panel_width) {
    std::cerr << "[preprocess] clamping hvg_n_top " << n_top << " -> "
              << panel_width << " (panel size)\n";
    n_top = panel_width;
  }
  const auto hvg = ingest::select_hvg(filtered, n_top, cfg.hvg_n_bins);

  std::vector<std::string> supplement;
  if (!cfg.supplement_file.empty()) {
    std::set<std::string> shared(filtered.front().gene_names.begin(),
                                 filtered.front().gene_names.end());
    for (const auto& line : read_lines(cfg.supplement_file)) {
      if (line.empty()) continue;
      if (shared.count(line))
        supplement.push_back(line);
      else
        std::cerr << "[preprocess] supplement gene not in shared panel: "
                  << line << "\n";
    }
  }
  data::ProcessedDataset dataset;
  dataset.panel = ingest::supplement_panel(hvg, supplement);

  auto finish_one = [&](std::size_t i) {
    ingest::SpotTable t = ingest::restrict_to_panel(filtered[i], dataset.panel);
    const auto lattice = ingest::build_hex_adjacency(t);
    filtered[i] = ingest::smooth_local(t, lattice);
  };
  if (threads > 1) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = 0; i < filtered.size(); ++i)
      jobs.push_back(std::async(std::launch::async, finish_one, i));
    for (auto& job : jobs) job.get();
  } else {
    for (std::size_t i = 0; i < filtered.size(); ++i) finish_one(i);
  }

  dataset.samples = std::move(filtered);
  dataset.splits =
      ingest::split_by_patient(dataset.samples, cfg.split_ratios, cfg.seed);
  return dataset;
}

// ---------------------------------------------------------------------------
// alignment model assembly and checkpoint wiring
// ---------------------------------------------------------------------------

inline train::AlignmentModel build_alignment_model(const RunConfig& cfg,
                                                   int panel_size,
                                                   int n_domains) {
  Rng root(cfg.seed);
  Rng vit_rng = root.fork(21);
  Rng omics_rng = root.fork(22);
  Rng head_rng = root.fork(23);
  Rng adapter_rng = root.fork(24);

  train::AlignmentModel model;
  model.vit = vision::ToyViT(vit_config(cfg), vit_rng);
  model.vae = omics::OmicsVae(vae_config(cfg, panel_size), omics_rng);
  model.img_decoder =
      vision::ImageGeneDecoder(cfg.latent_dim, panel_size, head_rng);
  const auto mode = vision::projection_mode_from_name(cfg.aux_projection);
  model.proj_img =
      vision::AuxProjection("proj_img", mode, cfg.latent_dim, head_rng);
  model.proj_omics =
      vision::AuxProjection("proj_omics", mode, cfg.latent_dim, head_rng);
  model.domain_head = losses::DomainHead(cfg.latent_dim, n_domains, head_rng,
                                         cfg.train.grl_lambda);
  model.channel_mean = cfg.channel_mean;
  model.channel_sd = cfg.channel_sd;
  model.attach_report =
      vision::attach_adapters(model.vit, adapter_plan(cfg), adapter_rng);
  return model;
}

inline train::Checkpoint make_stage1_checkpoint(omics::OmicsVae& vae,
                                                const RunConfig& cfg,
                                                int panel_size,
                                                const std::string& rng_state) {
  train::Checkpoint ckpt;
  ckpt.kind = "stage1";
  ckpt.config["run"] = cfg.echo;
  ckpt.config["panel_size"] = panel_size;
  ckpt.rng_state = rng_state;
  train::store_params(ckpt, vae.params());
  train::store_bn_stats(ckpt, "omics_stats", vae.batch_norms());
  return ckpt;
}

inline omics::OmicsVae load_stage1_vae(const train::Checkpoint& ckpt,
                                       RunConfig* out_cfg = nullptr) {
  if (ckpt.kind != "stage1" && ckpt.kind != "stage2")
    throw DataError("checkpoint does not contain an omics model");
  RunConfig cfg = parse_config(ckpt.config.at("run"));
  const int panel_size = ckpt.config.at("panel_size");
  Rng rng(0);  // values are overwritten from the checkpoint
  omics::OmicsVae vae(vae_config(cfg, panel_size), rng);
  train::load_params(ckpt, vae.params());
  train::load_bn_stats(ckpt, "omics_stats", vae.batch_norms());
  if (out_cfg) *out_cfg = cfg;
  return vae;
}

inline std::vector<ad::Param*> alignment_params(train::AlignmentModel& model) {
  std::vector<ad::Param*> all = model.vit.backbone_params();
  auto adapters = model.vit.adapter_params();
  all.insert(all.end(), adapters.begin(), adapters.end());
  auto vae = model.vae.params();
  all.insert(all.end(), vae.begin(), vae.end());
  model.img_decoder.collect(all);
  model.proj_img.collect(all);
  model.proj_omics.collect(all);
  model.domain_head.collect(all);
  return all;
}

inline train::Checkpoint make_stage2_checkpoint(train::AlignmentModel& model,
                                                const RunConfig& cfg,
                                                int panel_size, int n_domains,
                                                const std::string& rng_state) {
  train::Checkpoint ckpt;
  ckpt.kind = "stage2";
  ckpt.config["run"] = cfg.echo;
  ckpt.config["panel_size"] = panel_size;
  ckpt.config["n_domains"] = n_domains;
  ckpt.rng_state = rng_state;
  train::store_params(ckpt, alignment_params(model));
  train::store_bn_stats(ckpt, "omics_stats", model.vae.batch_norms());
  return ckpt;
}

inline train::AlignmentModel load_stage2_model(const train::Checkpoint& ckpt,
                                               RunConfig* out_cfg = nullptr) {
  if (ckpt.kind != "stage2")
    throw DataError("expected a stage2 checkpoint, found kind '" + ckpt.kind +
                    "'");
  RunConfig cfg = parse_config(ckpt.config.at("run"));
  const int panel_size = ckpt.config.at("panel_size");
  const int n_domains = ckpt.config.at("n_domains");
  train::AlignmentModel model =
      build_alignment_model(cfg, panel_size, n_domains);
  train::load_params(ckpt, alignment_params(model));
  train::load_bn_stats(ckpt, "omics_stats", model.vae.batch_norms());
  if (out_cfg) *out_cfg = cfg;
  return model;
}

// ---------------------------------------------------------------------------
// embeddings
// ---------------------------------------------------------------------------

struct SpotSelection {
  std::set<ingest::Split> splits;
};

inline std::set<ingest::Split> parse_splits(const std::string& text) {
  std::set<ingest::Split> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto pos = text.find(',', start);
    const std::string token = text.substr(
        start, pos == std::string::npos ? std::string::npos : pos - start);
    if (!token.empty()) out.insert(ingest::split_from_name(token));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (out.empty()) throw UsageError("no splits selected");
  return out;
}

inline void write_barcode_sidecar(const fs::path& blob_path,
                                  const std::vector<std::string>& sample_ids,
                                  const std::vector<std::string>& barcodes) {
  TsvWriter out(blob_path.string() + ".barcodes.tsv");
  for (std::size_t i = 0; i < barcodes.size(); ++i)
    out.row(sample_ids[i], barcodes[i]);
}

struct BarcodeSidecar {
  std::vector<std::string> sample_ids;
  std::vector<std::string> barcodes;
};

inline BarcodeSidecar read_barcode_sidecar(const fs::path& blob_path) {
  BarcodeSidecar sidecar;
  for (const auto& line : read_lines(blob_path.string() + ".barcodes.tsv")) {
    if (line.empty()) continue;
    const auto fields = split_tab(line);
    if (fields.size() != 2)
      throw DataError("malformed barcode sidecar line: '" + line + "'");
    sidecar.sample_ids.push_back(fields[0]);
    sidecar.barcodes.push_back(fields[1]);
  }
  return sidecar;
}

// Image embeddings for the selected spots, eval mode, no augmentation.
inline Eigen::MatrixXd embed_images(train::AlignmentModel& model,
                                    const data::ProcessedDataset& dataset,
                                    const fs::path& images_dir,
                                    const data::ProcessedDataset::SpotStack& stack,
                                    bool use_adapters, int batch_size = 64) {
  std::map<std::string, data::ImageStore> stores;
  Eigen::MatrixXd out(stack.values.rows(), model.vit.config().width);
  std::vector<img::Image> batch;
  std::vector<Eigen::Index> rows;
  auto flush = [&]() {
    if (batch.empty()) return;
    const Eigen::MatrixXd emb = model.vit.encode_images_eval(batch, use_adapters);
    for (std::size_t i = 0; i < rows.size(); ++i)
      out.row(rows[i]) = emb.row(static_cast<Eigen::Index>(i));
    batch.clear();
    rows.clear();
  };
  for (Eigen::Index i = 0; i < stack.values.rows(); ++i) {
    const auto& sid = stack.sample_ids[static_cast<std::size_t>(i)];
    auto it = stores.find(sid);
    if (it == stores.end())
      it = stores.emplace(sid, data::ImageStore(images_dir / sid)).first;
    batch.push_back(model.normalize(
        it->second.get(stack.barcodes[static_cast<std::size_t>(i)])));
    rows.push_back(i);
    if (static_cast<int>(batch.size()) >= batch_size) flush();
  }
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// subcommand payloads
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int threads = 1;

  RunConfig load() const {
    RunConfig cfg = config_path.empty() ? parse_config(nlohmann::json::object())
                                        : load_config(config_path);
    if (seed_set) {
      cfg.seed = seed;
      cfg.train.seed = seed;
      cfg.synth.seed = seed;
      nlohmann::json echo = cfg.echo;
      echo["seed"] = seed;
      cfg.echo = echo;
    }
    return cfg;
  }
};

inline std::string default_data_dir(const std::string& flag_value) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("SEAL_DATA_DIR")) return env;
  throw UsageError("no dataset directory given (use --data or SEAL_DATA_DIR)");
}

inline int cmd_gen_synth(const CommonArgs& common, const std::string& out_dir,
                         bool force) {
  const RunConfig cfg = common.load();
  synth::gen_synthetic(cfg.synth, out_dir, force);
  std::cout << "wrote synthetic dataset: " << out_dir << " ("
            << cfg.synth.n_samples << " samples x "
            << cfg.synth.spots_per_sample << " spots, " << cfg.synth.n_genes
            << " genes)\n";
  return 0;
}

inline int cmd_preprocess(const CommonArgs& common, const std::string& data,
                          const std::string& out_dir) {
  const RunConfig cfg = common.load();
  const auto dataset =
      run_preprocess(default_data_dir(data), cfg, common.threads);
  data::write_processed(dataset, out_dir, cfg.echo);
  std::cout << "processed " << dataset.samples.size() << " samples, panel "
            << dataset.panel.genes.size() << " genes -> " << out_dir << "\n";
  return 0;
}

inline int cmd_train_omics(const CommonArgs& common, const std::string& data,
                           const std::string& out_dir) {
  const RunConfig cfg = common.load();
  const auto dataset = data::load_processed(default_data_dir(data));
  const auto stack = dataset.stack_spots({ingest::Split::train});
  if (stack.values.rows() == 0)
    throw DataError("train-omics: train split is empty");

  Rng init_rng = Rng(cfg.seed).fork(22);
  omics::OmicsVae vae(
      vae_config(cfg, static_cast<int>(dataset.panel.genes.size())), init_rng);
  const auto result = train::train_stage1(vae, stack.values, cfg.train);

  auto ckpt = make_stage1_checkpoint(
      vae, cfg, static_cast<int>(dataset.panel.genes.size()),
      result.rng_state_after);
  train::save_checkpoint(ckpt, out_dir);
  {
    std::ofstream log(fs::path(out_dir) / "train_log.tsv", std::ios::binary);
    log << "epoch\tstep\tloss_total\tloss_rec\tloss_regularizer\tlr\n";
    for (const auto& line : result.log_lines) log << line << '\n';
    std::ofstream breakdown(fs::path(out_dir) / "loss_breakdown.tsv",
                            std::ios::binary);
    breakdown << "step\tloss_name\tvalue\n";
    for (const auto& line : result.breakdown_lines) breakdown << line << '\n';
  }
  std::cout << "stage1 done: epoch rec means";
  for (double m : result.epoch_rec_means) std::cout << ' ' << m;
  std::cout << " -> " << out_dir << "\n";
  return 0;
}

inline int cmd_train_align(const CommonArgs& common, const std::string& data,
                           const std::string& images_dir,
                           const std::string& stage1_path,
                           const std::string& out_dir) {
  const RunConfig cfg = common.load();
  const auto dataset = data::load_processed(default_data_dir(data));
  const int panel_size = static_cast<int>(dataset.panel.genes.size());
  const int n_domains = dataset.n_domains();

  train::AlignmentModel model =
      build_alignment_model(cfg, panel_size, n_domains);
  {
    const auto stage1 = train::load_checkpoint(stage1_path);
    train::load_params(stage1, model.vae.params());
    train::load_bn_stats(stage1, "omics_stats", model.vae.batch_norms());
  }

  const auto stack = dataset.stack_spots({ingest::Split::train});
  if (stack.values.rows() == 0)
    throw DataError("train-align: train split is empty");
  std::vector<train::PairedItem> pairs;
  for (Eigen::Index i = 0; i < stack.values.rows(); ++i)
    pairs.push_back({stack.sample_ids[static_cast<std::size_t>(i)],
                     stack.barcodes[static_cast<std::size_t>(i)], i,
                     stack.domain_ids[static_cast<std::size_t>(i)]});

  std::map<std::string, data::ImageStore> stores;
  const fs::path images_root = images_dir;
  train::ImageProvider provider = [&](const std::string& sid,
                                      const std::string& barcode) {
    auto it = stores.find(sid);
    if (it == stores.end())
      it = stores.emplace(sid, data::ImageStore(images_root / sid)).first;
    return it->second.get(barcode);
  };

  const auto result =
      train::train_stage2(model, stack.values, pairs, provider, cfg.train);

  auto ckpt = make_stage2_checkpoint(model, cfg, panel_size, n_domains,
                                     result.rng_state_after);
  train::save_checkpoint(ckpt, out_dir);
  {
    std::ofstream log(fs::path(out_dir) / "train_log.tsv", std::ios::binary);
    log << "epoch\tstep\tloss_total\tloss_infonce\tloss_rec_img\tloss_rec_"
           "gene\tloss_da\tlr\n";
    for (const auto& line : result.log_lines) log << line << '\n';
    std::ofstream breakdown(fs::path(out_dir) / "loss_breakdown.tsv",
                            std::ios::binary);
    breakdown << "step\tloss_name\tvalue\n";
    for (const auto& line : result.breakdown_lines) breakdown << line << '\n';
  }
  std::cout << "stage2 done: epoch infonce means";
  for (double m : result.epoch_infonce_means) std::cout << ' ' << m;
  std::cout << " -> " << out_dir << "\n";
  return 0;
}

inline int cmd_embed(const CommonArgs&, const std::string& data,
                     const std::string& images_dir, const std::string& ckpt_dir,
                     const std::string& modality, const std::string& splits,
                     const std::string& out_path, bool frozen) {
  const auto dataset = data::load_processed(default_data_dir(data));
  const auto which = parse_splits(splits);
  const auto stack = dataset.stack_spots(which);
  if (stack.values.rows() == 0) throw DataError("embed: no spots selected");

  Eigen::MatrixXd embeddings;
  const auto ckpt = train::load_checkpoint(ckpt_dir);
  if (modality == "omics") {
    omics::OmicsVae vae =
        ckpt.kind == "stage2"
            ? [&] {
                auto model = load_stage2_model(ckpt);
                return std::move(model.vae);
              }()
            : load_stage1_vae(ckpt);
    embeddings = vae.embed_eval(stack.values);
  } else if (modality == "image") {
    if (images_dir.empty())
      throw UsageError("embed --modality image needs --images");
    train::AlignmentModel model = load_stage2_model(ckpt);
    embeddings = embed_images(model, dataset, images_dir, stack,
                              /*use_adapters=*/!frozen);
  } else {
    throw UsageError("embed: modality must be 'image' or 'omics'");
  }

  write_blob(out_path, embeddings);
  write_barcode_sidecar(out_path, stack.sample_ids, stack.barcodes);
  std::cout << "wrote " << embeddings.rows() << "x" << embeddings.cols()
            << " " << modality << " embeddings -> " << out_path << "\n";
  return 0;
}

// Aligns embedding rows to processed spots via the barcode sidecar and runs
// the k-fold PCA+ridge probe against the panel expression.
inline int cmd_probe(const CommonArgs& common, const std::string& data,
                     const std::string& embeddings_path,
                     const std::string& out_path) {
  const RunConfig cfg = common.load();
  const auto dataset = data::load_processed(default_data_dir(data));
  const Eigen::MatrixXd embeddings = read_blob(embeddings_path);
  const auto sidecar = read_barcode_sidecar(embeddings_path);
  if (static_cast<Eigen::Index>(sidecar.barcodes.size()) != embeddings.rows())
    throw DataError("probe: sidecar row count does not match embeddings");

  Eigen::MatrixXd targets(embeddings.rows(),
                          static_cast<Eigen::Index>(dataset.panel.genes.size()));
  std::map<std::string, std::map<std::string, Eigen::Index>> row_of;
  for (const auto& sample : dataset.samples) {
    auto& rows = row_of[sample.sample_id];
    for (Eigen::Index i = 0; i < sample.n_spots(); ++i)
      rows[sample.barcodes[static_cast<std::size_t>(i)]] = i;
  }
  for (Eigen::Index i = 0; i < embeddings.rows(); ++i) {
    const auto& sid = sidecar.sample_ids[static_cast<std::size_t>(i)];
    const auto& bc = sidecar.barcodes[static_cast<std::size_t>(i)];
    auto sit = row_of.find(sid);
    if (sit == row_of.end() || !sit->second.count(bc))
      throw DataError("probe: spot " + sid + "/" + bc +
                      " not in processed dataset");
    targets.row(i) =
        dataset.sample_by_id(sid).values.row(sit->second.at(bc));
  }

  const auto result =
      evalsuite::kfold_probe(embeddings, targets, cfg.probe_k,
                             cfg.probe_components, cfg.probe_alpha, cfg.seed);
  TsvWriter out(out_path);
  out.row("gene", "pcc_mean", "pcc_sd", "mse_mean", "mse_sd", "spearman_mean",
          "spearman_sd");
  for (Eigen::Index g = 0;
       g < static_cast<Eigen::Index>(dataset.panel.genes.size()); ++g)
    out.row(dataset.panel.genes[static_cast<std::size_t>(g)],
            result.pcc_mean(g), result.pcc_sd(g), result.mse_mean(g),
            result.mse_sd(g), result.spearman_mean(g), result.spearman_sd(g));
  std::cout << "probe summary: mean PCC " << result.summary_pcc << " (sd "
            << result.summary_pcc_sd << "), mean MSE " << result.summary_mse
            << ", mean Spearman " << result.summary_spearman << " -> "
            << out_path << "\n";
  return 0;
}

inline int cmd_retrieve_i2g(const CommonArgs& common, const std::string& data,
                            const std::string& query_path,
                            const std::string& ref_path,
                            const std::string& out_path) {
  const RunConfig cfg = common.load();
  const auto dataset = data::load_processed(default_data_dir(data));
  const Eigen::MatrixXd queries = read_blob(query_path);
  const Eigen::MatrixXd refs = read_blob(ref_path);
  const auto ref_sidecar = read_barcode_sidecar(ref_path);
  if (static_cast<Eigen::Index>(ref_sidecar.barcodes.size()) != refs.rows())
    throw DataError("retrieve-i2g: reference sidecar mismatch");

  Eigen::MatrixXd ref_panels(refs.rows(),
                             static_cast<Eigen::Index>(dataset.panel.genes.size()));
  for (Eigen::Index i = 0; i < refs.rows(); ++i) {
    const auto& sample =
        dataset.sample_by_id(ref_sidecar.sample_ids[static_cast<std::size_t>(i)]);
    const auto it =
        std::find(sample.barcodes.begin(), sample.barcodes.end(),
                  ref_sidecar.barcodes[static_cast<std::size_t>(i)]);
    if (it == sample.barcodes.end())
      throw DataError("retrieve-i2g: reference barcode not found");
    ref_panels.row(i) =
        sample.values.row(it - sample.barcodes.begin());
  }

  Eigen::MatrixXd predicted(queries.rows(), ref_panels.cols());
  for (Eigen::Index i = 0; i < queries.rows(); ++i)
    predicted.row(i) =
        evalsuite::i2g_retrieve(queries.row(i).transpose(), refs, ref_panels,
                                cfg.retrieve_k, cfg.i2g_clamp_negative)
            .transpose();
  write_blob(out_path, predicted);
  std::cout << "wrote " << predicted.rows() << " retrieved panels (K="
            << cfg.retrieve_k << ") -> " << out_path << "\n";
  return 0;
}

inline int cmd_retrieve_g2i(const CommonArgs& common, const std::string& data,
                            const std::string& ckpt_dir,
                            const std::string& active_csv,
                            const std::string& patches_path,
                            const std::string& out_path,
                            const std::string& raster_path) {
  const RunConfig cfg = common.load();
  const auto dataset = data::load_processed(default_data_dir(data));

  std::vector<std::string> active;
  std::size_t start = 0;
  while (start <= active_csv.size()) {
    const auto pos = active_csv.find(',', start);
    const std::string token = active_csv.substr(
        start, pos == std::string::npos ? std::string::npos : pos - start);
    if (!token.empty()) active.push_back(token);
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  if (active.empty()) throw UsageError("retrieve-g2i: no active genes given");

  const auto ckpt = train::load_checkpoint(ckpt_dir);
  omics::OmicsVae vae = ckpt.kind == "stage2"
                            ? [&] {
                                auto model = load_stage2_model(ckpt);
                                return std::move(model.vae);
                              }()
                            : load_stage1_vae(ckpt);

  const auto stack = dataset.stack_spots({ingest::Split::train});
  const auto query = evalsuite::g2i_build_query(
      active, stack.values, dataset.panel.genes,
      [&](const Eigen::MatrixXd& x) { return vae.embed_eval(x); },
      cfg.g2i_pcc_threshold, cfg.g2i_percentile, cfg.g2i_min_frac);

  const Eigen::MatrixXd patches = read_blob(patches_path);
  const auto sidecar = read_barcode_sidecar(patches_path);
  if (static_cast<Eigen::Index>(sidecar.barcodes.size()) != patches.rows())
    throw DataError("retrieve-g2i: patch sidecar mismatch");
  const auto map = evalsuite::g2i_similarity_map(query.query_embedding, patches);

  std::vector<double> xs, ys;
  for (Eigen::Index i = 0; i < patches.rows(); ++i) {
    const auto& sample =
        dataset.sample_by_id(sidecar.sample_ids[static_cast<std::size_t>(i)]);
    const auto it =
        std::find(sample.barcodes.begin(), sample.barcodes.end(),
                  sidecar.barcodes[static_cast<std::size_t>(i)]);
    if (it == sample.barcodes.end())
      throw DataError("retrieve-g2i: patch barcode not found");
    const auto& coord =
        sample.coords[static_cast<std::size_t>(it - sample.barcodes.begin())];
    xs.push_back(coord.x_um);
    ys.push_back(coord.y_um);
  }
  evalsuite::write_similarity_tsv(out_path, xs, ys, map.scores);
  if (!raster_path.empty())
    evalsuite::write_similarity_pgm(raster_path, xs, ys, map.scores);
  std::cout << "g2i query: " << query.expanded_genes.size()
            << " expanded genes, " << query.kept_spots.size()
            << " contributing spots; wrote scores -> " << out_path << "\n";
  return 0;
}

inline int cmd_inspect_ckpt(const std::string& ckpt_dir) {
  const auto ckpt = train::load_checkpoint(ckpt_dir);
  std::cout << "kind: " << ckpt.kind << "\nversion: " << ckpt.version
            << "\nrng_state: " << ckpt.rng_state << "\narrays ("
            << ckpt.arrays.size() << "):\n";
  for (const auto& [name, value] : ckpt.arrays)
    std::cout << "  " << name << "  " << value.rows() << "x" << value.cols()
              << "  digest " << train::detail::hex64(blob_digest(value))
              << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dispatch
// ---------------------------------------------------------------------------

inline int cli_dispatch(const std::vector<std::string>& argv) {
  CLI::App app{"SEAL two-stage vision-omics alignment (desk scale)"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string data, images, out, ckpt, stage1, modality = "image";
  std::string splits = "train,val,test", query_path, ref_path, active_csv,
              patches_path, raster_path;
  bool force = false, frozen = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", common.config_path, "JSON config file");
    cmd->add_option("--seed", common.seed, "override the config seed")
        ->each([&](const std::string&) { common.seed_set = true; });
    cmd->add_option("--threads", common.threads,
                    "worker parallelism cap (preprocessing)");
  };

  auto* gen = app.add_subcommand("gen-synth", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--out", out, "output dataset directory")->required();
  gen->add_flag("--force", force, "overwrite a non-empty directory");

  auto* prep = app.add_subcommand("preprocess", "run the ingest pipeline");
  add_common(prep);
  prep->add_option("--data", data, "raw dataset root (or SEAL_DATA_DIR)");
  prep->add_option("--out", out, "processed dataset directory")->required();

  auto* tomics = app.add_subcommand("train-omics", "Stage I warmup");
  add_common(tomics);
  tomics->add_option("--data", data, "processed dataset");
  tomics->add_option("--out", out, "checkpoint directory")->required();

  auto* talign = app.add_subcommand("train-align", "Stage II alignment");
  add_common(talign);
  talign->add_option("--data", data, "processed dataset");
  talign->add_option("--images", images, "raw dataset with images.bin")
      ->required();
  talign->add_option("--stage1", stage1, "stage1 checkpoint")->required();
  talign->add_option("--out", out, "checkpoint directory")->required();

  auto* embed = app.add_subcommand("embed", "dump embeddings to a blob");
  add_common(embed);
  embed->add_option("--data", data, "processed dataset");
  embed->add_option("--images", images, "raw dataset (image modality)");
  embed->add_option("--ckpt", ckpt, "checkpoint directory")->required();
  embed->add_option("--modality", modality, "image or omics");
  embed->add_option("--splits", splits, "comma list of splits");
  embed->add_option("--out", out, "output blob path")->required();
  embed->add_flag("--frozen", frozen,
                  "image modality: bypass adapters (base backbone)");

  auto* probe = app.add_subcommand("probe", "k-fold PCA+ridge linear probe");
  add_common(probe);
  probe->add_option("--data", data, "processed dataset");
  probe->add_option("--embeddings", query_path, "embedding blob")->required();
  probe->add_option("--out", out, "per-gene TSV output")->required();

  auto* i2g = app.add_subcommand("retrieve-i2g", "image-to-gene retrieval");
  add_common(i2g);
  i2g->add_option("--data", data, "processed dataset");
  i2g->add_option("--query", query_path, "query embedding blob")->required();
  i2g->add_option("--refs", ref_path, "reference embedding blob")->required();
  i2g->add_option("--out", out, "predicted panel blob")->required();

  auto* g2i = app.add_subcommand("retrieve-g2i", "gene-to-image retrieval");
  add_common(g2i);
  g2i->add_option("--data", data, "processed dataset");
  g2i->add_option("--ckpt", ckpt, "checkpoint with the omics model")
      ->required();
  g2i->add_option("--active", active_csv, "comma list of active genes")
      ->required();
  g2i->add_option("--patches", patches_path, "patch embedding blob")
      ->required();
  g2i->add_option("--out", out, "similarity TSV output")->required();
  g2i->add_option("--raster", raster_path, "optional PGM heatmap");

  auto* inspect = app.add_subcommand("inspect-ckpt", "describe a checkpoint");
  inspect->add_option("--ckpt", ckpt, "checkpoint directory")->required();

  std::vector<const char*> cargs;
  cargs.push_back("seal");
  for (const auto& a : argv) cargs.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(cargs.size()), cargs.data());
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_synth(common, out, force);
    if (prep->parsed()) return cmd_preprocess(common, data, out);
    if (tomics->parsed()) return cmd_train_omics(common, data, out);
    if (talign->parsed())
      return cmd_train_align(common, data, images, stage1, out);
    if (embed->parsed())
      return cmd_embed(common, data, images, ckpt, modality, splits, out,
                       frozen);
    if (probe->parsed()) return cmd_probe(common, data, query_path, out);
    if (i2g->parsed())
      return cmd_retrieve_i2g(common, data, query_path, ref_path, out);
    if (g2i->parsed())
      return cmd_retrieve_g2i(common, data, ckpt, active_csv, patches_path,
                              out, raster_path);
    if (inspect->parsed()) return cmd_inspect_ckpt(ckpt);
    throw UsageError("no subcommand given");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace seal::cli
