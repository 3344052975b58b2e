#pragma once

#include <filesystem>
#include <string>

#include "lstrl/backbone.hpp"
#include "lstrl/config.hpp"
#include "lstrl/eval.hpp"
#include "lstrl/synth.hpp"
#include "lstrl/training.hpp"

namespace lstrl {

// Typed view over the flat run configuration. Loading consumes every key it
// understands; anything left over in the RunConfig is rejected by name.
struct AppConfig {
  std::uint64_t seed = 1;
  std::filesystem::path data_root = "data";

  SynthConfig synth;
  BackboneConfig backbone;  // num_identities filled from the dataset at use
  BatchSpec batch;
  ScheduleConfig schedule;
  AdamConfig adam;
  double margin = 0.3;
  double ce_weight = 1.0;
  double triplet_weight = 1.0;
  std::size_t iters_per_epoch = 0;
  AugmentFlags augment_flags;
  std::filesystem::path checkpoint_dir = "checkpoints";
  DistanceMetric eval_metric = DistanceMetric::cosine;
  std::size_t eval_batch_size = 8;

  static AppConfig load(const RunConfig& rc) {
    AppConfig c;
    c.seed = static_cast<std::uint64_t>(rc.get_int("seed", 1));
    c.data_root = rc.get_str("data.root", "data");

    c.batch.num_identities_p = static_cast<std::size_t>(rc.get_int("batch.p", 8));
    c.batch.clips_per_identity_k = static_cast<std::size_t>(rc.get_int("batch.k", 4));
    c.batch.frames_per_clip = static_cast<std::size_t>(rc.get_int("batch.frames", 8));
    c.batch.frame_h = static_cast<std::size_t>(rc.get_int("batch.frame_h", 64));
    c.batch.frame_w = static_cast<std::size_t>(rc.get_int("batch.frame_w", 32));

    c.synth.num_identities = static_cast<std::size_t>(rc.get_int("synth.identities", 20));
    c.synth.tracklets_per_identity =
        static_cast<std::size_t>(rc.get_int("synth.tracklets_per_identity", 4));
    c.synth.frames_per_tracklet =
        static_cast<std::size_t>(rc.get_int("synth.frames_per_tracklet", 24));
    c.synth.palette_count = static_cast<std::size_t>(rc.get_int("synth.palettes", 17));
    c.synth.occlusion_prob = rc.get_real("synth.occlusion_prob", 0.15);
    c.synth.pixel_noise = rc.get_real("synth.pixel_noise", 0.02);
    c.synth.frame_h = c.batch.frame_h;
    c.synth.frame_w = c.batch.frame_w;
    c.synth.seed = c.seed;

    c.backbone.stage_channels = rc.get_size_list("model.stage_channels", {16, 32, 64, 128});
    c.backbone.input_h = c.batch.frame_h;
    c.backbone.input_w = c.batch.frame_w;
    auto parse_stages = [&](const std::string& key) {
      std::set<std::size_t> out;
      if (rc.get_str(key, "") == "none") return out;
      for (std::size_t s : rc.get_size_list(key, {2, 3})) out.insert(s);
      return out;
    };
    c.backbone.insert_mae_after = parse_stages("model.insert_mae");
    c.backbone.insert_bme_after = parse_stages("model.insert_bme");
    c.backbone.mae_granularities = {false, false, false, false};
    for (const auto& tok : rc.get_str_list("model.granularities", {"A1", "A2", "A3", "A4"})) {
      if (tok == "A1")
        c.backbone.mae_granularities[0] = true;
      else if (tok == "A2")
        c.backbone.mae_granularities[1] = true;
      else if (tok == "A3")
        c.backbone.mae_granularities[2] = true;
      else if (tok == "A4")
        c.backbone.mae_granularities[3] = true;
      else
        throw ConfigError("model.granularities expects A1..A4 tokens, got '" + tok + "'");
    }
    const std::string motion = rc.get_str("model.motion", "global");
    if (motion == "global")
      c.backbone.bme_manner = MotionManner::global_to_local;
    else if (motion == "local")
      c.backbone.bme_manner = MotionManner::local_to_local;
    else
      throw ConfigError("model.motion expects global|local, got '" + motion + "'");
    const std::string direction = rc.get_str("model.direction", "bi");
    if (direction == "bi")
      c.backbone.bme_direction = MotionDirection::bi;
    else if (direction == "single")
      c.backbone.bme_direction = MotionDirection::single;
    else
      throw ConfigError("model.direction expects bi|single, got '" + direction + "'");

    c.schedule.base_lr = rc.get_real("train.base_lr", 0.001);
    c.schedule.decay_factor = rc.get_real("train.decay_factor", 0.1);
    c.schedule.decay_every = static_cast<std::size_t>(rc.get_int("train.decay_every", 7));
    c.schedule.total_epochs = static_cast<std::size_t>(rc.get_int("train.epochs", 40));
    c.adam.beta1 = rc.get_real("train.beta1", 0.9);
    c.adam.beta2 = rc.get_real("train.beta2", 0.999);
    c.adam.eps = rc.get_real("train.eps", 1e-8);
    c.margin = rc.get_real("train.margin", 0.3);
    c.ce_weight = rc.get_real("train.ce_weight", 1.0);
    c.triplet_weight = rc.get_real("train.triplet_weight", 1.0);
    c.iters_per_epoch = static_cast<std::size_t>(rc.get_int("train.iters_per_epoch", 0));
    c.checkpoint_dir = rc.get_str("train.checkpoint_dir", "checkpoints");
    c.augment_flags.crop = rc.get_bool("train.augment_crop", true);
    c.augment_flags.erase = rc.get_bool("train.augment_erase", true);
    c.augment_flags.erase_prob = rc.get_real("train.erase_prob", 0.5);

    const std::string metric = rc.get_str("eval.metric", "cosine");
    if (metric == "cosine")
      c.eval_metric = DistanceMetric::cosine;
    else if (metric == "euclidean")
      c.eval_metric = DistanceMetric::euclidean;
    else
      throw ConfigError("eval.metric expects cosine|euclidean, got '" + metric + "'");
    c.eval_batch_size = static_cast<std::size_t>(rc.get_int("eval.batch_size", 8));

    rc.require_all_consumed();
    c.batch.validate();
    c.schedule.validate();
    return c;
  }

  TrainConfig train_config() const {
    TrainConfig tc;
    tc.batch = batch;
    tc.schedule = schedule;
    tc.adam = adam;
    tc.margin = margin;
    tc.ce_weight = ce_weight;
    tc.triplet_weight = triplet_weight;
    tc.iters_per_epoch = iters_per_epoch;
    tc.augment_flags = augment_flags;
    tc.seed = seed;
    tc.checkpoint_dir = checkpoint_dir;
    return tc;
  }
};

}  // namespace lstrl
