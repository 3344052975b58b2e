#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lstrl/rng.hpp"
#include "lstrl/tensor.hpp"

namespace lstrl {

// One person under one camera: the retrieval unit.
struct Tracklet {
  int identity_id = -1;
  int camera_id = -1;
  std::vector<std::filesystem::path> frame_paths;  // temporally ordered
};

struct BatchSpec {
  std::size_t num_identities_p = 8;   // P distinct identities per batch
  std::size_t clips_per_identity_k = 4;
  std::size_t frames_per_clip = 8;
  std::size_t frame_h = 64;
  std::size_t frame_w = 32;

  void validate() const {
    LSTRL_CHECK_CFG(num_identities_p >= 1 && clips_per_identity_k >= 1,
                    "batch spec needs P,K >= 1");
    LSTRL_CHECK_CFG(frames_per_clip >= 2, "batch spec needs at least 2 frames per clip");
  }
};

enum class SampleMode { train, eval };

// Restricted random sampling over a tracklet of `len` frames: the tracklet is
// split into `t` chunks (sizes differ by at most one); train mode draws one
// uniform frame per chunk, eval mode takes each chunk's middle. Tracklets
// shorter than `t` repeat frames cyclically.
inline std::vector<std::size_t> rrs_sample_indices(std::size_t len, std::size_t t,
                                                   SampleMode mode, Rng& rng) {
  LSTRL_CHECK_CFG(t >= 1, "RRS needs a positive frame count");
  if (len == 0) throw DataError("RRS on an empty tracklet");
  std::vector<std::size_t> out(t);
  if (len < t) {
    for (std::size_t i = 0; i < t; ++i) out[i] = i % len;
    return out;
  }
  for (std::size_t i = 0; i < t; ++i) {
    const std::size_t lo = i * len / t;
    const std::size_t hi = (i + 1) * len / t;
    out[i] = (mode == SampleMode::train) ? lo + rng.uniform_index(hi - lo)
                                         : lo + (hi - lo) / 2;
  }
  return out;
}

// Frame references selected by RRS, in temporal order.
inline std::vector<std::filesystem::path> rrs_sample(const Tracklet& tracklet,
                                                     std::size_t t, SampleMode mode,
                                                     Rng& rng) {
  std::vector<std::filesystem::path> out;
  for (std::size_t i : rrs_sample_indices(tracklet.frame_paths.size(), t, mode, rng))
    out.push_back(tracklet.frame_paths[i]);
  return out;
}

struct Dataset {
  std::vector<Tracklet> tracklets;

  // sorted unique identity ids
  std::vector<int> identities() const {
    std::vector<int> ids;
    for (const auto& t : tracklets) ids.push_back(t.identity_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
  }

  std::map<int, std::vector<std::size_t>> by_identity() const {
    std::map<int, std::vector<std::size_t>> m;
    for (std::size_t i = 0; i < tracklets.size(); ++i)
      m[tracklets[i].identity_id].push_back(i);
    return m;
  }
};

// Scans `root/<split>/<identity>/<camera>/<tracklet>/frame_*.lst`; entries are
// ordered lexicographically so enumeration is deterministic.
Dataset scan_split(const std::filesystem::path& root, const std::string& split);

// Identity-balanced batch: P distinct identities, K clips each. Identities
// with fewer than K tracklets are resampled with replacement.
struct ClipRef {
  std::size_t tracklet_index = 0;
  int identity_id = -1;
};
std::vector<ClipRef> pk_batch(const Dataset& dataset, const BatchSpec& spec, Rng& rng);

// Loads frames once and keeps them; synthetic desk datasets fit in memory.
class FrameCache {
 public:
  const DenseTensor<float>& get(const std::filesystem::path& path);
  // per-channel mean over every frame of the dataset (for erase filling)
  std::array<float, 3> channel_mean(const Dataset& dataset);

 private:
  std::map<std::string, DenseTensor<float>> cache_;
};

// Stacks the selected frames of a tracklet into a clip [T,H,W,3].
DenseTensor<float> load_clip(const Tracklet& tracklet,
                             const std::vector<std::size_t>& frame_indices,
                             FrameCache& cache);

struct AugmentFlags {
  bool crop = true;
  bool erase = true;
  double erase_prob = 0.5;
};

// Pad-4-then-crop at a fixed offset (dy, dx in [0,8]); offset (4,4) is the
// identity, smaller offsets shift content down/right with a zero border.
DenseTensor<float> crop_shift(const DenseTensor<float>& clip, std::size_t dy,
                              std::size_t dx);

// Random pad-4 crop (one offset shared by all frames) and per-frame random
// erasing (one rectangle of at most 25% area, filled with the dataset mean).
DenseTensor<float> augment(const DenseTensor<float>& clip, Rng& rng,
                           const AugmentFlags& flags, const std::array<float, 3>& mean_fill);

}  // namespace lstrl
