#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "lstrl/rng.hpp"
#include "lstrl/tensor.hpp"

namespace lstrl {

// Synthetic video-person generator. Each identity is a torso/legs rectangle
// layout colored from a palette plus a bright blob orbiting the head region;
// identities sharing a palette differ only in orbit direction, so appearance
// statistics cannot separate them while motion can. Tracklets are rendered
// under per-camera brightness/noise transforms. Generation is fully seeded.
struct SynthConfig {
  std::size_t num_identities = 20;
  std::size_t tracklets_per_identity = 4;  // last two become query and gallery
  std::size_t frames_per_tracklet = 24;
  std::size_t frame_h = 64;
  std::size_t frame_w = 32;
  // fewer palettes than identities forces shared-palette pairs
  std::size_t palette_count = 17;
  double occlusion_prob = 0.15;  // per-frame gray occluder bar
  double pixel_noise = 0.02;     // per-pixel gaussian sigma before clamping
  std::uint64_t seed = 1;

  void validate() const {
    LSTRL_CHECK_CFG(num_identities >= 2, "synthetic dataset needs at least 2 identities");
    LSTRL_CHECK_CFG(tracklets_per_identity >= 3,
                    "synthetic dataset needs >= 3 tracklets per identity "
                    "(train + query + gallery)");
    LSTRL_CHECK_CFG(frames_per_tracklet >= 2, "tracklets need at least 2 frames");
    LSTRL_CHECK_CFG(frame_h >= 16 && frame_w >= 16, "frames must be at least 16x16");
    LSTRL_CHECK_CFG(palette_count >= 1 && palette_count < num_identities,
                    "palette_count must be below num_identities so at least one "
                    "palette is shared by motion-separable identities");
    LSTRL_CHECK_CFG(occlusion_prob >= 0 && occlusion_prob <= 1, "occlusion_prob in [0,1]");
    LSTRL_CHECK_CFG(pixel_noise >= 0, "pixel_noise must be non-negative");
  }
};

// Deterministic per-identity appearance and motion parameters.
struct IdentityStyle {
  std::array<float, 3> torso_color{};
  std::array<float, 3> legs_color{};
  int direction = 1;     // orbit sense; shared-palette partners get -1
  double period = 24.0;  // frames per orbit, shared within a palette
};

IdentityStyle identity_style(const SynthConfig& cfg, std::size_t identity);

// Per-camera brightness factor and noise scale, derived from the seed.
struct CameraTransform {
  float brightness = 1.0f;
  float noise_scale = 1.0f;
};
CameraTransform camera_transform(const SynthConfig& cfg, int camera_id);

// Renders all frames of one tracklet; the rng drives the orbit phase, the
// viewpoint offset, occluders and pixel noise.
std::vector<DenseTensor<float>> render_tracklet(const SynthConfig& cfg,
                                                const IdentityStyle& style,
                                                int camera_id, Rng& rng);

// Writes root/<split>/<identity>/<camera>/<tracklet>/frame_xxxxx.lst for the
// splits train, query and gallery. Refuses a non-empty target unless forced.
void generate_synthetic(const SynthConfig& cfg, const std::filesystem::path& root,
                        bool force = false);

}  // namespace lstrl
