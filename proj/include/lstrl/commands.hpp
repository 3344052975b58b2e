#pragma once

#include <fstream>
#include <iomanip>
#include <ostream>

#include "lstrl/app_config.hpp"
#include "lstrl/checkpoint.hpp"
#include "lstrl/data.hpp"
#include "lstrl/gradcheck_suite.hpp"
#include "lstrl/synth.hpp"

namespace lstrl {

// Maps the ablation-grid CLI flags onto plain config keys, so every variant
// stays a reproducible configuration rather than a code path.
inline void apply_variant(RunConfig& rc, const std::string& variant) {
  if (variant.empty()) return;
  if (variant == "baseline") {
    rc.set("model.insert_mae", "none");
    rc.set("model.insert_bme", "none");
  } else if (variant == "+mae") {
    rc.set("model.insert_mae", "2,3");
    rc.set("model.insert_bme", "none");
  } else if (variant == "+mae+bme") {
    rc.set("model.insert_mae", "2,3");
    rc.set("model.insert_bme", "2,3");
  } else {
    throw ConfigError("--variant expects baseline|+mae|+mae+bme, got '" + variant + "'");
  }
}

inline void apply_granularity_ablation(RunConfig& rc, const std::string& drop) {
  if (drop.empty()) return;
  std::string keep;
  bool found = false;
  for (const char* g : {"A1", "A2", "A3", "A4"}) {
    if (drop == g) {
      found = true;
      continue;
    }
    keep += keep.empty() ? g : std::string(",") + g;
  }
  if (!found)
    throw ConfigError("--ablate-granularity expects A1..A4, got '" + drop + "'");
  rc.set("model.granularities", keep);
}

inline void cmd_generate(const AppConfig& cfg, bool force, std::ostream& out) {
  generate_synthetic(cfg.synth, cfg.data_root, force);
  out << "generated synthetic dataset at " << cfg.data_root.string() << " ("
      << cfg.synth.num_identities << " identities x " << cfg.synth.tracklets_per_identity
      << " tracklets)\n";
}

inline std::vector<EpochLog> cmd_train(const AppConfig& cfg, std::ostream& out) {
  if (!std::filesystem::is_directory(cfg.data_root))
    throw DataError("data.root does not exist: " + cfg.data_root.string());
  Dataset trainset = scan_split(cfg.data_root, "train");
  FrameCache cache;

  BackboneConfig bc = cfg.backbone;
  bc.num_identities = trainset.identities().size();
  Model<float> model(bc, cfg.seed);
  const auto cost = Model<float>::count_params_and_macs(bc, cfg.batch.frames_per_clip);
  out << "model: " << cost.params << " params, " << cost.macs << " MACs/clip\n";

  TrainConfig tc = cfg.train_config();
  std::filesystem::create_directories(tc.checkpoint_dir);
  std::ofstream log_file(tc.checkpoint_dir / "train_log.tsv");
  if (!log_file) throw DataError("cannot write training log in " + tc.checkpoint_dir.string());

  struct Tee : std::ostream, std::streambuf {
    std::ostream &a, &b;
    Tee(std::ostream& x, std::ostream& y) : std::ostream(this), a(x), b(y) {}
    int overflow(int c) override {
      if (c != EOF) {
        a.put(static_cast<char>(c));
        b.put(static_cast<char>(c));
      }
      return c;
    }
    int sync() override {
      a.flush();
      b.flush();
      return 0;
    }
  } tee(out, log_file);

  return train(model, trainset, cache, tc, &tee);
}

// Rebuilds the trained variant from the checkpoint's embedded architecture.
template <typename WithModel>
void with_checkpoint_model(const AppConfig& cfg, const std::filesystem::path& checkpoint,
                           WithModel&& fn) {
  if (!std::filesystem::is_regular_file(checkpoint))
    throw DataError("checkpoint not found: " + checkpoint.string());
  std::map<std::string, double> extras;
  for (const auto& [key, tensor] : read_checkpoint<float>(checkpoint))
    if (tensor.size() == 1 && key.rfind("arch.", 0) == 0) extras[key] = tensor.data[0];
  BackboneConfig bc = backbone_from_extras(extras);
  Model<float> model(bc, cfg.seed);
  load_model_state(checkpoint, model);
  fn(model);
}

inline EvalReport cmd_eval(const AppConfig& cfg, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& report_dir, std::ostream& out) {
  if (!std::filesystem::is_directory(cfg.data_root))
    throw DataError("data.root does not exist: " + cfg.data_root.string());
  Dataset query = scan_split(cfg.data_root, "query");
  Dataset gallery = scan_split(cfg.data_root, "gallery");
  FrameCache cache;

  EvalReport report;
  with_checkpoint_model(cfg, checkpoint, [&](Model<float>& model) {
    auto q = embed_split(model, query, cache, cfg.batch.frames_per_clip, cfg.eval_batch_size);
    auto g =
        embed_split(model, gallery, cache, cfg.batch.frames_per_clip, cfg.eval_batch_size);
    RetrievalTable<float> table;
    table.query_embeddings = std::move(q.embeddings);
    table.gallery_embeddings = std::move(g.embeddings);
    table.query_ids = std::move(q.ids);
    table.query_cams = std::move(q.cams);
    table.gallery_ids = std::move(g.ids);
    table.gallery_cams = std::move(g.cams);
    auto dists =
        distance_matrix(table.query_embeddings, table.gallery_embeddings, cfg.eval_metric);
    report = cmc_map(table, dists);
  });

  const std::string kv = format_eval_report(report);
  out << kv << "\n";
  if (!report_dir.empty()) {
    std::filesystem::create_directories(report_dir);
    std::ofstream kvf(report_dir / "eval_report.kv");
    kvf << kv << "\n";
    std::ofstream tsv(report_dir / "eval_report.tsv");
    char buf[128];
    std::snprintf(buf, sizeof(buf), "R1\tR5\tmAP\tvalid\n%.6f\t%.6f\t%.6f\t%zu\n",
                  report.rank_k.at(1), report.rank_k.at(5), report.map_score,
                  report.num_valid_queries);
    tsv << buf;
    if (!kvf || !tsv) throw DataError("cannot write reports in " + report_dir.string());
  }
  return report;
}

// Runs the finite-difference suite; `corrupt_op` perturbs one op's analytic
// gradients as a negative control. Returns overall pass.
inline bool cmd_gradcheck(std::ostream& out, const std::string& corrupt_op = "",
                          std::size_t seeds = 20) {
  bool all_pass = true;
  out << "op\tmax_rel_err\tstatus\n";
  for (auto& entry : gradcheck_suite()) {
    const double corrupt = entry.name == corrupt_op ? 1.25 : 1.0;
    auto res = entry.run(seeds, corrupt);
    all_pass = all_pass && res.pass;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%s\t%.3e\t%s\n", entry.name.c_str(), res.max_rel_err,
                  res.pass ? "PASS" : "FAIL");
    out << buf;
  }
  return all_pass;
}

// Dumps the dependency matrices and motion maps of one clip to portable
// tensor files named by symbol and stage.
inline void cmd_inspect(const AppConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::filesystem::path& clip_dir,
                        const std::filesystem::path& out_dir, std::ostream& out) {
  if (!std::filesystem::is_directory(clip_dir))
    throw DataError("clip directory not found: " + clip_dir.string());
  Tracklet tracklet;
  tracklet.identity_id = 0;
  tracklet.camera_id = 0;
  std::vector<std::filesystem::path> frames;
  for (const auto& e : std::filesystem::directory_iterator(clip_dir))
    if (e.path().extension() == ".lst") frames.push_back(e.path());
  std::sort(frames.begin(), frames.end());
  if (frames.empty()) throw DataError("no frame tensors in " + clip_dir.string());
  tracklet.frame_paths = std::move(frames);

  FrameCache cache;
  Rng unused(0);
  auto idx = rrs_sample_indices(tracklet.frame_paths.size(), cfg.batch.frames_per_clip,
                                SampleMode::eval, unused);
  auto clip = load_clip(tracklet, idx, cache);

  with_checkpoint_model(cfg, checkpoint, [&](Model<float>& model) {
    if (clip.shape[1] != model.config().input_h || clip.shape[2] != model.config().input_w)
      throw DataError("clip frames are " + std::to_string(clip.shape[1]) + "x" +
                      std::to_string(clip.shape[2]) + ", model expects " +
                      std::to_string(model.config().input_h) + "x" +
                      std::to_string(model.config().input_w));
    Tape<float> tape;
    typename Model<float>::Capture capture;
    model.encode_clip(tape, tape.input(clip), &capture);

    std::filesystem::create_directories(out_dir);
    char name[64];
    for (const auto& [stage, cap] : capture.mae) {
      for (int i = 0; i < 4; ++i) {
        if (cap.deps[i].size() == 0) continue;
        std::snprintf(name, sizeof(name), "stage%zu_D%d.lst", stage, i + 1);
        save_tensor(out_dir / name, cap.deps[i]);
        out << name << "\n";
      }
    }
    for (const auto& [stage, cap] : capture.bme) {
      for (std::size_t t = 0; t < cap.m_fwd.size(); ++t) {
        std::snprintf(name, sizeof(name), "stage%zu_Mf_t%zu.lst", stage, t);
        save_tensor(out_dir / name, cap.m_fwd[t]);
        out << name << "\n";
      }
      for (std::size_t t = 0; t < cap.m_bwd.size(); ++t) {
        std::snprintf(name, sizeof(name), "stage%zu_Mb_t%zu.lst", stage, t);
        save_tensor(out_dir / name, cap.m_bwd[t]);
        out << name << "\n";
      }
    }
  });
}

}  // namespace lstrl
