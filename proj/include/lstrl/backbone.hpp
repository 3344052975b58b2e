#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "lstrl/bme.hpp"
#include "lstrl/mae.hpp"
#include "lstrl/tape.hpp"

namespace lstrl {

// Desk-scale staged encoder. Each stage is a 3x3 convolution (per-position
// affine over the unfolded neighborhood), ReLU and a 2x mean-pool downsample.
// MAE/BME blocks are inserted after configured stages as additive residuals;
// GAP over space then TAP over time yields the retrieval embedding, and a
// final affine produces identity logits.
struct BackboneConfig {
  std::vector<std::size_t> stage_channels{16, 32, 64, 128};
  std::size_t input_h = 64;
  std::size_t input_w = 32;
  std::size_t num_identities = 1;
  std::set<std::size_t> insert_mae_after{2, 3};
  std::set<std::size_t> insert_bme_after{2, 3};
  std::array<bool, 4> mae_granularities{true, true, true, true};
  MotionManner bme_manner = MotionManner::global_to_local;
  MotionDirection bme_direction = MotionDirection::bi;

  std::size_t num_stages() const { return stage_channels.size(); }

  void validate() const {
    LSTRL_CHECK_CFG(stage_channels.size() == 4, "backbone expects 4 stage channel counts");
    for (std::size_t c : stage_channels)
      LSTRL_CHECK_CFG(c >= 4 && c % 4 == 0, "stage channels must be divisible by 4, got " +
                                                std::to_string(c));
    for (std::size_t s : insert_mae_after)
      LSTRL_CHECK_CFG(s >= 1 && s <= num_stages(),
                      "MAE insertion stage " + std::to_string(s) + " out of range");
    for (std::size_t s : insert_bme_after)
      LSTRL_CHECK_CFG(s >= 1 && s <= num_stages(),
                      "BME insertion stage " + std::to_string(s) + " out of range");
    LSTRL_CHECK_CFG(num_identities >= 1, "backbone needs at least one identity");
    // every stage halves spatial dims (a dim stays once it reaches 1)
    std::size_t h = input_h, w = input_w;
    for (std::size_t s = 0; s < num_stages(); ++s) {
      LSTRL_CHECK_CFG((h % 2 == 0 || h == 1) && (w % 2 == 0 || w == 1),
                      "input " + std::to_string(input_h) + "x" + std::to_string(input_w) +
                          " is not divisible by the stage downsampling");
      h = (h == 1) ? 1 : h / 2;
      w = (w == 1) ? 1 : w / 2;
    }
  }

  // spatial size of the features after a given 1-based stage
  std::pair<std::size_t, std::size_t> spatial_after(std::size_t stage) const {
    std::size_t h = input_h, w = input_w;
    for (std::size_t s = 1; s <= stage; ++s) {
      h = (h == 1) ? 1 : h / 2;
      w = (w == 1) ? 1 : w / 2;
    }
    return {h, w};
  }

  std::size_t embedding_dim() const { return stage_channels.back(); }
};

struct CostReport {
  std::uint64_t params = 0;
  std::uint64_t macs = 0;  // multiply-accumulates per encoded clip
};

template <typename T>
class Model {
 public:
  struct ClipResult {
    Var embedding;  // [C_final], pre-classifier
    Var logits;     // [num_identities]
  };

  struct Capture {
    std::map<std::size_t, MaeCapture<T>> mae;  // keyed by stage
    std::map<std::size_t, BmeCapture<T>> bme;
  };

  Model(BackboneConfig cfg, std::uint64_t init_seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t cin = 3;
    for (std::size_t s = 0; s < cfg_.num_stages(); ++s) {
      const std::size_t cout = cfg_.stage_channels[s];
      const std::string name = "stage" + std::to_string(s + 1);
      Rng rng = Rng::fork(init_seed, fnv1a(name));
      StageParams sp;
      sp.w = ParamTensor<T>(name + ".w",
                            glorot_uniform<T>({9 * cin, cout}, 9 * cin, cout, rng));
      sp.b = ParamTensor<T>(name + ".b", DenseTensor<T>({cout}));
      stages_.push_back(std::move(sp));
      cin = cout;
    }
    for (std::size_t s : cfg_.insert_mae_after) {
      const std::size_t c = cfg_.stage_channels[s - 1];
      mae_.emplace(s, MaeParams<T>::init("mae" + std::to_string(s), c,
                                         cfg_.mae_granularities, init_seed));
    }
    for (std::size_t s : cfg_.insert_bme_after) {
      const std::size_t c = cfg_.stage_channels[s - 1];
      bme_.emplace(s, BmeParams<T>::init("bme" + std::to_string(s), c, cfg_.bme_manner,
                                         cfg_.bme_direction, init_seed));
    }
    Rng rng = Rng::fork(init_seed, fnv1a("cls"));
    const std::size_t cf = cfg_.embedding_dim();
    cls_w_ = ParamTensor<T>(
        "cls.w", glorot_uniform<T>({cf, cfg_.num_identities}, cf, cfg_.num_identities, rng));
    cls_b_ = ParamTensor<T>("cls.b", DenseTensor<T>({cfg_.num_identities}));
  }

  const BackboneConfig& config() const { return cfg_; }

  std::vector<std::pair<std::string, ParamTensor<T>*>> named_params() {
    std::vector<std::pair<std::string, ParamTensor<T>*>> out;
    for (auto& sp : stages_) {
      out.emplace_back(sp.w.name, &sp.w);
      out.emplace_back(sp.b.name, &sp.b);
    }
    for (auto& [stage, p] : mae_)
      for (auto& np : p.named_params()) out.push_back(np);
    for (auto& [stage, p] : bme_)
      for (auto& np : p.named_params()) out.push_back(np);
    out.emplace_back(cls_w_.name, &cls_w_);
    out.emplace_back(cls_b_.name, &cls_b_);
    return out;
  }

  // frames: [T, input_h, input_w, 3]
  ClipResult encode_clip(Tape<T>& tape, Var frames, Capture* capture = nullptr,
                         BmeCostCounter* cost = nullptr) {
    const Shape fs = tape.shape(frames);
    LSTRL_CHECK_DIM(fs.size() == 4 && fs[1] == cfg_.input_h && fs[2] == cfg_.input_w &&
                        fs[3] == 3,
                    "encode_clip expects [T," + std::to_string(cfg_.input_h) + "," +
                        std::to_string(cfg_.input_w) + ",3], got " + shape_str(fs));
    LSTRL_CHECK_DIM(cfg_.insert_bme_after.empty() || fs[0] >= 2,
                    "BME insertion needs clips with at least 2 frames");
    Var x = frames;
    for (std::size_t s = 0; s < cfg_.num_stages(); ++s) {
      x = tape.pointwise_affine(tape.unfold3x3(x), stages_[s].w, stages_[s].b, true);
      x = tape.avgpool2x2(x);
      const std::size_t stage = s + 1;
      Var combined = x;
      if (auto it = mae_.find(stage); it != mae_.end()) {
        MaeCapture<T>* cap = nullptr;
        if (capture != nullptr) cap = &capture->mae[stage];
        combined = tape.add(combined, mae_forward(tape, x, it->second, cap));
      }
      if (auto it = bme_.find(stage); it != bme_.end()) {
        BmeCapture<T>* cap = nullptr;
        if (capture != nullptr) cap = &capture->bme[stage];
        combined = tape.add(combined, bme_forward(tape, x, it->second, cap, cost));
      }
      x = combined;
    }
    ClipResult out;
    out.embedding = tape.reduce_mean(tape.reduce_mean(x, {1, 2}), {0});
    out.logits = tape.pointwise_affine(out.embedding, cls_w_, cls_b_, false);
    return out;
  }

  // Exact analytic parameter and per-clip multiply-accumulate counts for the
  // configured variant. Pooling and softmax contribute no multiplies; biases
  // are parameters but not MACs.
  static CostReport count_params_and_macs(const BackboneConfig& cfg,
                                          std::size_t frames_per_clip) {
    cfg.validate();
    CostReport r;
    const std::uint64_t tn = frames_per_clip;
    std::size_t cin = 3, h = cfg.input_h, w = cfg.input_w;
    for (std::size_t s = 0; s < cfg.num_stages(); ++s) {
      const std::uint64_t cout = cfg.stage_channels[s];
      r.params += 9ull * cin * cout + cout;
      r.macs += tn * h * w * 9ull * cin * cout;  // conv runs at the pre-pool size
      cin = cfg.stage_channels[s];
      h = (h == 1) ? 1 : h / 2;
      w = (w == 1) ? 1 : w / 2;
      const std::size_t stage = s + 1;
      const std::uint64_t c = cout, hw = static_cast<std::uint64_t>(h) * w;
      const std::uint64_t thw = tn * hw, c4 = c / 4, c2 = c / 2;
      if (cfg.insert_mae_after.count(stage)) {
        std::uint64_t active = 0;
        const std::uint64_t rows[4] = {thw, hw, tn, 1};
        std::uint64_t dep_rows = 0;
        for (int i = 0; i < 4; ++i)
          if (cfg.mae_granularities[i]) {
            active += 1;
            dep_rows += rows[i];
          }
        r.params += c * c4 + c4;              // omega1
        r.params += active * c4 * c + c;      // omega2
        r.macs += thw * c * c4;               // omega1
        r.macs += 2ull * dep_rows * thw * c4; // dependency logits + aggregation
        r.macs += thw * active * c4 * c;      // omega2
      }
      if (cfg.insert_bme_after.count(stage)) {
        const bool bi = cfg.bme_direction == MotionDirection::bi;
        const std::uint64_t dirs = bi ? 2 : 1;
        const std::uint64_t ups_in = bi ? c : c2;
        r.params += 2ull * (c * c2 + c2);  // phi, psi
        r.params += ups_in * c + c;        // upsilon
        if (cfg.bme_manner == MotionManner::global_to_local) {
          r.macs += tn * dirs * (c * c2 + hw * c * c2 + hw * c2);
        } else {
          r.macs += tn * dirs * (hw * c * c2 + hw * c * c2 + hw * hw * c2);
        }
        r.macs += tn * hw * ups_in * c;  // upsilon
      }
    }
    const std::uint64_t cf = cfg.embedding_dim();
    r.params += cf * cfg.num_identities + cfg.num_identities;
    r.macs += cf * cfg.num_identities;
    return r;
  }

 private:
  struct StageParams {
    ParamTensor<T> w, b;
  };

  BackboneConfig cfg_;
  std::vector<StageParams> stages_;
  std::map<std::size_t, MaeParams<T>> mae_;
  std::map<std::size_t, BmeParams<T>> bme_;
  ParamTensor<T> cls_w_, cls_b_;
};

}  // namespace lstrl
