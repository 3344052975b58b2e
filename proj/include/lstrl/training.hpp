#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "lstrl/backbone.hpp"
#include "lstrl/checkpoint.hpp"
#include "lstrl/data.hpp"
#include "lstrl/losses.hpp"
#include "lstrl/optimizer.hpp"

namespace lstrl {

struct ScheduleConfig {
  double base_lr = 3e-4;
  double decay_factor = 0.1;
  std::size_t decay_every = 70;
  std::size_t total_epochs = 400;

  void validate() const {
    LSTRL_CHECK_CFG(base_lr >= 0, "base_lr must be non-negative");
    LSTRL_CHECK_CFG(decay_factor > 0 && decay_factor < 1, "decay_factor must be in (0,1)");
    LSTRL_CHECK_CFG(decay_every >= 1, "decay_every must be at least 1");
    LSTRL_CHECK_CFG(total_epochs >= 1, "total_epochs must be at least 1");
  }
};

inline double lr_at(std::size_t epoch, const ScheduleConfig& s) {
  s.validate();
  return s.base_lr * std::pow(s.decay_factor, double(epoch / s.decay_every));
}

// Per-epoch averages; total is the (weighted) sum of the two loss terms.
struct LossReport {
  double ce_loss = 0;
  double triplet_loss = 0;
  double total = 0;
  double batch_accuracy = 0;
};

struct EpochLog {
  std::size_t epoch = 0;
  LossReport losses;
  double lr = 0;
  std::vector<double> iter_totals;  // per-batch total loss within the epoch
};

struct TrainConfig {
  BatchSpec batch;
  ScheduleConfig schedule;
  AdamConfig adam;  // lr field ignored; the schedule drives it
  double margin = 0.3;
  double ce_weight = 1.0;
  double triplet_weight = 1.0;
  std::size_t iters_per_epoch = 0;  // 0: cover the tracklet count once
  AugmentFlags augment_flags;
  std::uint64_t seed = 1;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
};

inline std::string format_epoch_line(const EpochLog& log) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%zu\t%.6f\t%.6f\t%.6f\t%.4f\t%.6g", log.epoch,
                log.losses.ce_loss, log.losses.triplet_loss, log.losses.total,
                log.losses.batch_accuracy, log.lr);
  return buf;
}

// Identity-balanced training loop: every batch runs forward on one tape,
// combines cross-entropy and batch-hard triplet, backpropagates and applies
// one Adam step at the scheduled rate. Per-epoch RNG streams are derived from
// (seed, epoch), so a resumed run replays exactly the same batches.
template <typename T>
std::vector<EpochLog> train(Model<T>& model, const Dataset& trainset, FrameCache& cache,
                            const TrainConfig& cfg, std::ostream* log = nullptr,
                            std::size_t start_epoch = 0) {
  cfg.batch.validate();
  cfg.schedule.validate();
  LSTRL_CHECK_CFG(cfg.ce_weight >= 0 && cfg.triplet_weight >= 0,
                  "loss weights must be non-negative");

  const auto ids = trainset.identities();
  LSTRL_CHECK_CFG(model.config().num_identities == ids.size(),
                  "model classifier expects " +
                      std::to_string(model.config().num_identities) +
                      " identities, dataset has " + std::to_string(ids.size()));
  std::map<int, int> class_of;
  for (std::size_t i = 0; i < ids.size(); ++i) class_of[ids[i]] = static_cast<int>(i);

  const std::array<float, 3> mean_fill = cache.channel_mean(trainset);
  std::vector<ParamTensor<T>*> params;
  for (auto& [name, p] : model.named_params()) params.push_back(p);

  const std::size_t clips_per_batch =
      cfg.batch.num_identities_p * cfg.batch.clips_per_identity_k;
  const std::size_t iters =
      cfg.iters_per_epoch > 0
          ? cfg.iters_per_epoch
          : (trainset.tracklets.size() + clips_per_batch - 1) / clips_per_batch;

  std::vector<EpochLog> logs;
  for (std::size_t epoch = start_epoch; epoch < cfg.schedule.total_epochs; ++epoch) {
    Rng erng = Rng::fork(cfg.seed, fnv1a("epoch/" + std::to_string(epoch)));
    AdamConfig adam = cfg.adam;
    adam.lr = lr_at(epoch, cfg.schedule);

    LossReport sums;
    std::vector<double> iter_totals;
    for (std::size_t iter = 0; iter < iters; ++iter) {
      auto refs = pk_batch(trainset, cfg.batch, erng);
      std::vector<DenseTensor<T>> clips;
      std::vector<int> labels;
      clips.reserve(refs.size());
      for (const auto& ref : refs) {
        const Tracklet& tr = trainset.tracklets[ref.tracklet_index];
        auto idx = rrs_sample_indices(tr.frame_paths.size(), cfg.batch.frames_per_clip,
                                      SampleMode::train, erng);
        auto clip = augment(load_clip(tr, idx, cache), erng, cfg.augment_flags, mean_fill);
        LSTRL_CHECK_CFG(clip.shape[1] == cfg.batch.frame_h &&
                            clip.shape[2] == cfg.batch.frame_w,
                        "dataset frames do not match the configured frame size");
        if constexpr (std::is_same_v<T, float>) {
          clips.push_back(std::move(clip));
        } else {
          clips.push_back(clip.template cast<T>());
        }
        labels.push_back(class_of.at(ref.identity_id));
      }

      try {
        Tape<T> tape;
        std::vector<Var> embs, logits;
        for (const auto& clip : clips) {
          auto out = model.encode_clip(tape, tape.input(clip));
          embs.push_back(out.embedding);
          logits.push_back(out.logits);
        }
        Var emb_mat = tape.stack_rows(embs);
        Var logit_mat = tape.stack_rows(logits);

        // batch accuracy from the forward logits
        const auto& lv = tape.value(logit_mat);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < labels.size(); ++i) {
          const T* row = lv.data.data() + i * lv.shape[1];
          std::size_t arg = 0;
          for (std::size_t j = 1; j < lv.shape[1]; ++j)
            if (row[j] > row[arg]) arg = j;
          correct += arg == static_cast<std::size_t>(labels[i]) ? 1 : 0;
        }

        Var ce = cross_entropy(tape, logit_mat, labels);
        Var tri = batch_hard_triplet(tape, emb_mat, labels, cfg.margin);
        const double ce_v = cfg.ce_weight * double(tape.value(ce).data[0]);
        const double tri_v = cfg.triplet_weight * double(tape.value(tri).data[0]);
        Var total = tape.add(tape.scale(ce, static_cast<T>(cfg.ce_weight)),
                             tape.scale(tri, static_cast<T>(cfg.triplet_weight)));
        const double total_v = double(tape.value(total).data[0]);
        if (!std::isfinite(total_v)) throw NumericError("non-finite loss");

        tape.backward(total);
        if (adam.lr > 0) {
          adam_step(params, adam);
        } else {
          for (auto* p : params) p->zero_grad();  // frozen mode
        }

        sums.ce_loss += ce_v;
        sums.triplet_loss += tri_v;
        sums.total += total_v;
        sums.batch_accuracy += double(correct) / double(labels.size());
        iter_totals.push_back(total_v);
      } catch (const NumericError& e) {
        throw NumericError("numerical failure in epoch " + std::to_string(epoch) +
                           " iter " + std::to_string(iter) + " (batch seed " +
                           std::to_string(cfg.seed) + "/" + std::to_string(epoch) +
                           "): " + e.what());
      }
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = adam.lr;
    entry.iter_totals = std::move(iter_totals);
    entry.losses.ce_loss = sums.ce_loss / double(iters);
    entry.losses.triplet_loss = sums.triplet_loss / double(iters);
    entry.losses.total = sums.total / double(iters);
    entry.losses.batch_accuracy = sums.batch_accuracy / double(iters);
    logs.push_back(entry);
    if (log != nullptr) (*log) << format_epoch_line(entry) << "\n" << std::flush;

    if (!cfg.checkpoint_dir.empty()) {
      std::filesystem::create_directories(cfg.checkpoint_dir);
      char name[32];
      std::snprintf(name, sizeof(name), "epoch_%04zu.lstc", epoch + 1);
      auto extras = backbone_extras(model.config());
      extras["train.epoch"] = double(epoch + 1);
      save_model_state(cfg.checkpoint_dir / name, model, extras);
      save_model_state(cfg.checkpoint_dir / "last.lstc", model, extras);
    }
  }
  return logs;
}

}  // namespace lstrl
