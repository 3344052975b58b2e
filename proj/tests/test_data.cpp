#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "lstrl/data.hpp"
#include "lstrl/synth.hpp"
#include "lstrl/tensor_io.hpp"

using namespace lstrl;
namespace fs = std::filesystem;

namespace {

// blob centroid in a rendered frame, located by its yellow signature
// (high R+G, low B)
std::pair<double, double> blob_centroid(const DenseTensor<float>& img) {
  double wy = 0, wx = 0, total = 0;
  for (std::size_t y = 0; y < img.shape[0]; ++y)
    for (std::size_t x = 0; x < img.shape[1]; ++x) {
      const float* px = img.data.data() + (y * img.shape[1] + x) * 3;
      const double score = std::max(0.0, double(px[0]) + double(px[1]) - 2.0 * double(px[2]) - 0.8);
      wy += score * double(y);
      wx += score * double(x);
      total += score;
    }
  REQUIRE(total > 0);
  return {wy / total, wx / total};
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::vector<char>(std::istreambuf_iterator<char>(f), {});
}

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.num_identities = 4;
  cfg.tracklets_per_identity = 4;
  cfg.frames_per_tracklet = 8;
  cfg.frame_h = 32;
  cfg.frame_w = 16;
  cfg.palette_count = 3;
  cfg.occlusion_prob = 0.2;
  cfg.pixel_noise = 0.02;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("rrs keeps short tracklets cyclic and full tracklets ordered") {
  Rng rng(1);
  CHECK(rrs_sample_indices(8, 8, SampleMode::train, rng) ==
        std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(rrs_sample_indices(8, 8, SampleMode::eval, rng) ==
        std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
  CHECK(rrs_sample_indices(16, 8, SampleMode::eval, rng) ==
        std::vector<std::size_t>{1, 3, 5, 7, 9, 11, 13, 15});
  CHECK(rrs_sample_indices(3, 8, SampleMode::eval, rng) ==
        std::vector<std::size_t>{0, 1, 2, 0, 1, 2, 0, 1});
  CHECK(rrs_sample_indices(3, 8, SampleMode::train, rng) ==
        std::vector<std::size_t>{0, 1, 2, 0, 1, 2, 0, 1});
  CHECK_THROWS_AS(rrs_sample_indices(8, 0, SampleMode::train, rng), ConfigError);
  CHECK_THROWS_AS(rrs_sample_indices(0, 4, SampleMode::train, rng), DataError);
}

TEST_CASE("rrs_sample maps indices onto the tracklet's frame paths") {
  Tracklet tr;
  tr.identity_id = 0;
  tr.camera_id = 0;
  for (int i = 0; i < 16; ++i)
    tr.frame_paths.push_back("f" + std::to_string(i) + ".lst");
  Rng rng(1);
  auto picked = rrs_sample(tr, 8, SampleMode::eval, rng);
  REQUIRE(picked.size() == 8);
  CHECK(picked[0] == fs::path("f1.lst"));
  CHECK(picked[7] == fs::path("f15.lst"));
}

TEST_CASE("rrs train draws are strictly ordered, one per chunk") {
  Rng rng(7);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 8 + rng.uniform_index(40);
    const std::size_t t = 2 + rng.uniform_index(7);
    if (len < t) continue;
    auto idx = rrs_sample_indices(len, t, SampleMode::train, rng);
    REQUIRE(idx.size() == t);
    for (std::size_t i = 0; i < t; ++i) {
      CHECK(idx[i] >= i * len / t);
      CHECK(idx[i] < (i + 1) * len / t);
      if (i > 0) CHECK(idx[i] > idx[i - 1]);
    }
  }
}

TEST_CASE("pk_batch composition") {
  Dataset ds;
  for (int id = 0; id < 10; ++id)
    for (int k = 0; k < 3; ++k)
      ds.tracklets.push_back({id, k % 2, {fs::path("frame")}});

  BatchSpec spec;
  spec.num_identities_p = 8;
  spec.clips_per_identity_k = 4;
  Rng rng(3);
  auto batch = pk_batch(ds, spec, rng);
  REQUIRE(batch.size() == 32);
  std::map<int, int> counts;
  for (const auto& c : batch) counts[c.identity_id] += 1;
  CHECK(counts.size() == 8);
  for (const auto& [id, n] : counts) CHECK(n == 4);

  BatchSpec single;
  single.num_identities_p = 1;
  single.clips_per_identity_k = 1;
  CHECK(pk_batch(ds, single, rng).size() == 1);

  BatchSpec too_many;
  too_many.num_identities_p = 11;
  CHECK_THROWS_AS(pk_batch(ds, too_many, rng), DataError);
}

TEST_CASE("pk_batch resamples sparse identities with replacement") {
  Dataset ds;
  ds.tracklets.push_back({0, 0, {fs::path("a")}});  // one tracklet only
  ds.tracklets.push_back({1, 0, {fs::path("b")}});
  ds.tracklets.push_back({1, 1, {fs::path("c")}});
  BatchSpec spec;
  spec.num_identities_p = 2;
  spec.clips_per_identity_k = 4;
  Rng rng(11);
  auto batch = pk_batch(ds, spec, rng);
  int id0 = 0;
  for (const auto& c : batch)
    if (c.identity_id == 0) {
      CHECK(c.tracklet_index == 0);  // the only tracklet, drawn repeatedly
      ++id0;
    }
  CHECK(id0 == 4);
}

TEST_CASE("augment with flags off is the identity") {
  Rng rng(13);
  auto clip = DenseTensor<float>::random_uniform({2, 12, 10, 3}, rng, 0.f, 1.f);
  AugmentFlags off;
  off.crop = false;
  off.erase = false;
  auto out = augment(clip, rng, off, {0.5f, 0.5f, 0.5f});
  CHECK(out.data == clip.data);
}

TEST_CASE("crop offset (0,0) shifts by the 4-pixel padding") {
  Rng rng(17);
  auto clip = DenseTensor<float>::random_uniform({1, 10, 9, 3}, rng, 0.1f, 1.f);
  auto out = crop_shift(clip, 0, 0);
  for (std::size_t y = 0; y < 10; ++y)
    for (std::size_t x = 0; x < 9; ++x)
      for (int c = 0; c < 3; ++c) {
        const float got = out.data[(y * 9 + x) * 3 + c];
        if (y < 4 || x < 4)
          CHECK(got == 0.f);
        else
          CHECK(got == clip.data[((y - 4) * 9 + (x - 4)) * 3 + c]);
      }
  // offset (4,4) is the identity
  CHECK(crop_shift(clip, 4, 4).data == clip.data);
}

TEST_CASE("forced erasing fills with the dataset mean within the area bound") {
  Rng rng(19);
  DenseTensor<float> clip({3, 16, 16, 3}, 1.0f);  // far from the fill value
  AugmentFlags flags;
  flags.crop = false;
  flags.erase = true;
  flags.erase_prob = 1.0;
  const std::array<float, 3> mean{0.25f, 0.5f, 0.75f};
  auto out = augment(clip, rng, flags, mean);
  CHECK(out.shape == clip.shape);
  for (std::size_t t = 0; t < 3; ++t) {
    std::size_t erased = 0;
    for (std::size_t p = 0; p < 16 * 16; ++p) {
      const float* px = out.data.data() + (t * 256 + p) * 3;
      if (px[0] == mean[0] && px[1] == mean[1] && px[2] == mean[2]) ++erased;
    }
    CHECK(erased >= 1);               // every frame got its rectangle
    CHECK(erased * 4 <= 16 * 16);     // at most a quarter of the area
  }
}

TEST_CASE("synthetic generation is bit-deterministic and countable") {
  const fs::path root1 = fs::temp_directory_path() / "lstrl_synth_a";
  const fs::path root2 = fs::temp_directory_path() / "lstrl_synth_b";
  fs::remove_all(root1);
  fs::remove_all(root2);
  SynthConfig cfg = tiny_synth();
  generate_synthetic(cfg, root1);
  generate_synthetic(cfg, root2);

  std::size_t tracklet_dirs = 0, files = 0;
  for (auto it = fs::recursive_directory_iterator(root1);
       it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_regular_file()) {
      ++files;
      const fs::path rel = fs::relative(it->path(), root1);
      CHECK(slurp(it->path()) == slurp(root2 / rel));
    } else if (it->path().filename().string().find("frame") == std::string::npos &&
               fs::is_directory(it->path()) &&
               std::distance(fs::directory_iterator(it->path()),
                             fs::directory_iterator()) > 0 &&
               fs::directory_iterator(it->path())->is_regular_file()) {
      ++tracklet_dirs;
    }
  }
  CHECK(files == cfg.num_identities * cfg.tracklets_per_identity * cfg.frames_per_tracklet);
  CHECK(tracklet_dirs == cfg.num_identities * cfg.tracklets_per_identity);

  // refuses to overwrite without force
  CHECK_THROWS_AS(generate_synthetic(cfg, root1), DataError);
  generate_synthetic(cfg, root1, /*force=*/true);

  // scan back: split sizes and protocol roles
  auto train = scan_split(root1, "train");
  auto query = scan_split(root1, "query");
  auto gallery = scan_split(root1, "gallery");
  CHECK(train.tracklets.size() == cfg.num_identities * (cfg.tracklets_per_identity - 2));
  CHECK(query.tracklets.size() == cfg.num_identities);
  CHECK(gallery.tracklets.size() == cfg.num_identities);
  for (const auto& t : query.tracklets) CHECK(t.camera_id == 2);
  for (const auto& t : gallery.tracklets) CHECK(t.camera_id == 3);
  CHECK(train.identities().size() == cfg.num_identities);

  // frames load as [H,W,3] in [0,1]
  FrameCache cache;
  const auto& frame = cache.get(train.tracklets[0].frame_paths[0]);
  CHECK(frame.shape == Shape{cfg.frame_h, cfg.frame_w, 3});
  for (float v : frame.data) {
    CHECK(v >= 0.f);
    CHECK(v <= 1.f);
  }
  auto mean = cache.channel_mean(train);
  CHECK(mean[0] > 0.f);
  CHECK(mean[0] < 1.f);

  fs::remove_all(root1);
  fs::remove_all(root2);
}

TEST_CASE("shared-palette partners are appearance twins with opposite motion") {
  SynthConfig cfg = tiny_synth();
  cfg.pixel_noise = 0.0;  // exact pixel multisets need identical noise (none)
  cfg.occlusion_prob = 0.0;
  // identities 0 and 3 share palette 0 (palette_count 3): directions +1 / -1
  auto a = identity_style(cfg, 0);
  auto b = identity_style(cfg, 3);
  CHECK(a.torso_color == b.torso_color);
  CHECK(a.legs_color == b.legs_color);
  CHECK(a.period == b.period);
  CHECK(a.direction == -b.direction);

  Rng r1(42), r2(42);  // identical streams: same phase, offset and camera noise
  auto fa = render_tracklet(cfg, a, 0, r1);
  auto fb = render_tracklet(cfg, b, 0, r2);
  REQUIRE(fa.size() == fb.size());
  // per-frame pixel statistics are indistinguishable
  for (std::size_t t = 0; t < fa.size(); ++t) {
    auto pa = fa[t].data, pb = fb[t].data;
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    CHECK(pa == pb);
  }
  // while the blob displacement sign (orbit winding) differs
  auto winding = [](const std::vector<DenseTensor<float>>& frames) {
    std::vector<std::pair<double, double>> pts;
    double my = 0, mx = 0;
    for (const auto& f : frames) {
      pts.push_back(blob_centroid(f));
      my += pts.back().first / double(frames.size());
      mx += pts.back().second / double(frames.size());
    }
    double cross = 0;
    for (std::size_t t = 0; t + 1 < pts.size(); ++t) {
      const double ax = pts[t].second - mx, ay = pts[t].first - my;
      const double bx = pts[t + 1].second - mx, by = pts[t + 1].first - my;
      cross += ax * by - ay * bx;
    }
    return cross;
  };
  auto [y0a, x0a] = blob_centroid(fa[0]);
  auto [y0b, x0b] = blob_centroid(fb[0]);
  CHECK(std::abs(x0a - x0b) < 1e-9);  // same start
  CHECK(std::abs(y0a - y0b) < 1e-9);
  const double wa = winding(fa), wb = winding(fb);
  CHECK(std::abs(wa) > 1.0);
  CHECK(std::abs(wb) > 1.0);
  CHECK(wa * wb < 0);  // opposite orbit senses
}

TEST_CASE("load_clip stacks cached frames") {
  const fs::path root = fs::temp_directory_path() / "lstrl_synth_c";
  fs::remove_all(root);
  SynthConfig cfg = tiny_synth();
  generate_synthetic(cfg, root);
  auto train = scan_split(root, "train");
  FrameCache cache;
  Rng rng(23);
  auto idx = rrs_sample_indices(train.tracklets[0].frame_paths.size(), 4,
                                SampleMode::eval, rng);
  auto clip = load_clip(train.tracklets[0], idx, cache);
  CHECK(clip.shape == Shape{4, cfg.frame_h, cfg.frame_w, 3});
  fs::remove_all(root);
}
