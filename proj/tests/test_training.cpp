#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "lstrl/eval.hpp"
#include "lstrl/synth.hpp"
#include "lstrl/tensor_io.hpp"
#include "lstrl/training.hpp"

using namespace lstrl;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path root;
  SynthConfig synth;
  Dataset train;
  FrameCache cache;

  explicit Fixture(std::uint64_t seed, std::size_t ids = 3) {
    root = fs::temp_directory_path() / ("lstrl_train_fx_" + std::to_string(seed));
    fs::remove_all(root);
    synth.num_identities = ids;
    synth.tracklets_per_identity = 4;
    synth.frames_per_tracklet = 8;
    synth.frame_h = 32;
    synth.frame_w = 16;
    synth.palette_count = ids - 1;
    synth.occlusion_prob = 0.1;
    synth.seed = seed;
    generate_synthetic(synth, root);
    train = scan_split(root, "train");
  }
  ~Fixture() { fs::remove_all(root); }

  BackboneConfig model_config() const {
    BackboneConfig bc;
    bc.stage_channels = {4, 8, 8, 16};
    bc.input_h = synth.frame_h;
    bc.input_w = synth.frame_w;
    bc.num_identities = synth.num_identities;
    return bc;
  }

  TrainConfig train_config(std::size_t epochs, std::size_t iters) const {
    TrainConfig tc;
    tc.batch.num_identities_p = synth.num_identities;
    tc.batch.clips_per_identity_k = 2;
    tc.batch.frames_per_clip = 4;
    tc.batch.frame_h = synth.frame_h;
    tc.batch.frame_w = synth.frame_w;
    tc.schedule.base_lr = 1e-3;
    tc.schedule.decay_every = 100;
    tc.schedule.total_epochs = epochs;
    tc.iters_per_epoch = iters;
    tc.seed = 77;
    return tc;
  }
};

template <typename T>
std::vector<T> param_snapshot(Model<T>& m) {
  std::vector<T> out;
  for (auto& [name, p] : m.named_params())
    out.insert(out.end(), p->value.data.begin(), p->value.data.end());
  return out;
}

}  // namespace

TEST_CASE("zero learning rate leaves parameters bit-identical") {
  Fixture fx(31);
  Model<float> model(fx.model_config(), 7);
  auto before = param_snapshot(model);
  auto tc = fx.train_config(1, 2);
  tc.schedule.base_lr = 0.0;
  train(model, fx.train, fx.cache, tc);
  CHECK(param_snapshot(model) == before);
}

TEST_CASE("training is deterministic for a fixed seed") {
  Fixture fx(37);
  std::ostringstream log1, log2;
  Model<float> m1(fx.model_config(), 7);
  Model<float> m2(fx.model_config(), 7);
  auto tc = fx.train_config(2, 2);
  train(m1, fx.train, fx.cache, tc, &log1);
  train(m2, fx.train, fx.cache, tc, &log2);
  CHECK(log1.str() == log2.str());
  CHECK(param_snapshot(m1) == param_snapshot(m2));
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  Fixture fx(41);
  const fs::path ckpt = fs::temp_directory_path() / "lstrl_resume_ckpt";
  fs::remove_all(ckpt);

  auto tc4 = fx.train_config(4, 2);
  std::ostringstream full_log;
  Model<float> uninterrupted(fx.model_config(), 9);
  train(uninterrupted, fx.train, fx.cache, tc4, &full_log);

  auto tc2 = fx.train_config(2, 2);
  tc2.checkpoint_dir = ckpt;
  Model<float> part(fx.model_config(), 9);
  train(part, fx.train, fx.cache, tc2);

  Model<float> resumed(fx.model_config(), 1234);  // different init, overwritten by load
  auto extras = load_model_state(ckpt / "last.lstc", resumed);
  REQUIRE(extras.at("train.epoch") == 2.0);
  std::ostringstream tail_log;
  train(resumed, fx.train, fx.cache, tc4, &tail_log,
        static_cast<std::size_t>(extras.at("train.epoch")));

  // the resumed tail equals the last two lines of the uninterrupted log
  std::string full = full_log.str();
  std::size_t cut = 0;
  for (int i = 0; i < 2; ++i) cut = full.find('\n', cut) + 1;
  CHECK(tail_log.str() == full.substr(cut));
  CHECK(param_snapshot(resumed) == param_snapshot(uninterrupted));
  fs::remove_all(ckpt);
}

TEST_CASE("loss decreases on a trivially separable two-identity set") {
  // hand-rolled split: two identities with distinct palettes, no occlusion,
  // no noise, so appearance alone separates them
  const fs::path root = fs::temp_directory_path() / "lstrl_sep_set";
  fs::remove_all(root);
  SynthConfig cfg;
  cfg.num_identities = 3;  // styles 0 and 1 use distinct palettes
  cfg.tracklets_per_identity = 3;
  cfg.frames_per_tracklet = 8;
  cfg.frame_h = 32;
  cfg.frame_w = 16;
  cfg.palette_count = 2;
  cfg.occlusion_prob = 0.0;
  cfg.pixel_noise = 0.0;
  cfg.seed = 91;
  char buf[64];
  for (std::size_t id = 0; id < 2; ++id) {
    auto style = identity_style(cfg, id);
    for (std::size_t k = 0; k < 2; ++k) {
      Rng rng = Rng::fork(cfg.seed, fnv1a("sep/" + std::to_string(id * 2 + k)));
      auto frames = render_tracklet(cfg, style, static_cast<int>(k), rng);
      std::snprintf(buf, sizeof(buf), "train/%04zu/%02zu/%04zu", id, k, k);
      const fs::path dir = root / buf;
      fs::create_directories(dir);
      for (std::size_t f = 0; f < frames.size(); ++f) {
        std::snprintf(buf, sizeof(buf), "frame_%05zu.lst", f);
        save_tensor(dir / buf, frames[f]);
      }
    }
  }
  auto trainset = scan_split(root, "train");
  REQUIRE(trainset.identities().size() == 2);

  BackboneConfig bc;
  bc.stage_channels = {4, 8, 8, 16};
  bc.input_h = cfg.frame_h;
  bc.input_w = cfg.frame_w;
  bc.num_identities = 2;
  Model<float> model(bc, 11);

  TrainConfig tc;
  tc.batch.num_identities_p = 2;
  tc.batch.clips_per_identity_k = 2;
  tc.batch.frames_per_clip = 4;
  tc.batch.frame_h = cfg.frame_h;
  tc.batch.frame_w = cfg.frame_w;
  tc.schedule.base_lr = 2e-3;
  tc.schedule.decay_every = 100;
  tc.schedule.total_epochs = 1;
  tc.iters_per_epoch = 12;
  tc.augment_flags.crop = false;
  tc.augment_flags.erase = false;
  tc.seed = 77;

  FrameCache cache;
  auto logs = train(model, trainset, cache, tc);
  REQUIRE(logs.size() == 1);
  const auto& steps = logs[0].iter_totals;
  REQUIRE(steps.size() == 12);
  int drops = 0;
  for (std::size_t i = 1; i < steps.size(); ++i) drops += steps[i] < steps[i - 1] ? 1 : 0;
  CHECK(drops >= static_cast<int>(0.8 * double(steps.size() - 1)));
  fs::remove_all(root);
}

TEST_CASE("non-finite loss aborts naming the batch seed") {
  Fixture fx(53);
  Model<float> model(fx.model_config(), 13);
  auto tc = fx.train_config(1, 2);
  tc.schedule.base_lr = 1e18;  // guaranteed blow-up
  try {
    train(model, fx.train, fx.cache, tc);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("batch seed") != std::string::npos);
  }
}

TEST_CASE("epoch log format is tab-separated and stable") {
  EpochLog log;
  log.epoch = 3;
  log.losses = {1.25, 0.5, 1.75, 0.875};
  log.lr = 0.0003;
  CHECK(format_epoch_line(log) == "3\t1.250000\t0.500000\t1.750000\t0.8750\t0.0003");
}
