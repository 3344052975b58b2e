#include "lstrl/data.hpp"

#include <algorithm>
#include <cmath>

#include "lstrl/tensor_io.hpp"

namespace lstrl {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

int parse_id(const fs::path& p) {
  try {
    return std::stoi(p.filename().string());
  } catch (const std::exception&) {
    throw DataError("non-numeric dataset directory name: " + p.string());
  }
}

}  // namespace

Dataset scan_split(const fs::path& root, const std::string& split) {
  const fs::path base = root / split;
  if (!fs::is_directory(base))
    throw DataError("dataset split directory missing: " + base.string());
  Dataset ds;
  for (const auto& id_dir : sorted_entries(base)) {
    if (!fs::is_directory(id_dir)) continue;
    const int identity = parse_id(id_dir);
    for (const auto& cam_dir : sorted_entries(id_dir)) {
      if (!fs::is_directory(cam_dir)) continue;
      const int camera = parse_id(cam_dir);
      for (const auto& tr_dir : sorted_entries(cam_dir)) {
        if (!fs::is_directory(tr_dir)) continue;
        Tracklet t;
        t.identity_id = identity;
        t.camera_id = camera;
        for (const auto& frame : sorted_entries(tr_dir))
          if (frame.extension() == ".lst") t.frame_paths.push_back(frame);
        if (t.frame_paths.empty())
          throw DataError("tracklet without frames: " + tr_dir.string());
        ds.tracklets.push_back(std::move(t));
      }
    }
  }
  if (ds.tracklets.empty()) throw DataError("empty dataset split: " + base.string());
  return ds;
}

std::vector<ClipRef> pk_batch(const Dataset& dataset, const BatchSpec& spec, Rng& rng) {
  spec.validate();
  const auto groups = dataset.by_identity();
  LSTRL_CHECK_CFG(!groups.empty(), "pk_batch on an empty dataset");
  if (groups.size() < spec.num_identities_p)
    throw DataError("pk_batch needs " + std::to_string(spec.num_identities_p) +
                    " identities, dataset has " + std::to_string(groups.size()));

  std::vector<int> ids;
  for (const auto& [id, idx] : groups) ids.push_back(id);
  // Fisher-Yates prefix shuffle to pick P distinct identities
  for (std::size_t i = 0; i < spec.num_identities_p; ++i) {
    const std::size_t j = i + rng.uniform_index(ids.size() - i);
    std::swap(ids[i], ids[j]);
  }

  std::vector<ClipRef> batch;
  for (std::size_t i = 0; i < spec.num_identities_p; ++i) {
    const auto& pool = groups.at(ids[i]);
    if (pool.size() >= spec.clips_per_identity_k) {
      std::vector<std::size_t> local(pool);
      for (std::size_t k = 0; k < spec.clips_per_identity_k; ++k) {
        const std::size_t j = k + rng.uniform_index(local.size() - k);
        std::swap(local[k], local[j]);
        batch.push_back({local[k], ids[i]});
      }
    } else {
      for (std::size_t k = 0; k < spec.clips_per_identity_k; ++k)
        batch.push_back({pool[rng.uniform_index(pool.size())], ids[i]});
    }
  }
  return batch;
}

const DenseTensor<float>& FrameCache::get(const fs::path& path) {
  const std::string key = path.string();
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto t = load_tensor<float>(path);
  if (t.rank() != 3 || t.shape[2] != 3)
    throw DataError("frame tensor must be [H,W,3]: " + key);
  return cache_.emplace(key, std::move(t)).first->second;
}

std::array<float, 3> FrameCache::channel_mean(const Dataset& dataset) {
  std::array<double, 3> acc{0, 0, 0};
  std::size_t count = 0;
  for (const auto& tr : dataset.tracklets)
    for (const auto& p : tr.frame_paths) {
      const auto& f = get(p);
      const std::size_t hw = f.shape[0] * f.shape[1];
      for (std::size_t i = 0; i < hw; ++i)
        for (int c = 0; c < 3; ++c) acc[c] += f.data[i * 3 + c];
      count += hw;
    }
  std::array<float, 3> mean{0.f, 0.f, 0.f};
  if (count > 0)
    for (int c = 0; c < 3; ++c) mean[c] = static_cast<float>(acc[c] / double(count));
  return mean;
}

DenseTensor<float> load_clip(const Tracklet& tracklet,
                             const std::vector<std::size_t>& frame_indices,
                             FrameCache& cache) {
  LSTRL_CHECK_CFG(!frame_indices.empty(), "load_clip with no frame indices");
  const auto& first = cache.get(tracklet.frame_paths.at(frame_indices[0]));
  DenseTensor<float> clip({frame_indices.size(), first.shape[0], first.shape[1], 3});
  for (std::size_t i = 0; i < frame_indices.size(); ++i) {
    const auto& f = cache.get(tracklet.frame_paths.at(frame_indices[i]));
    if (f.shape != first.shape)
      throw DataError("inconsistent frame sizes within tracklet");
    std::copy_n(f.data.data(), f.size(), clip.data.data() + i * f.size());
  }
  return clip;
}

DenseTensor<float> crop_shift(const DenseTensor<float>& clip, std::size_t dy,
                              std::size_t dx) {
  constexpr std::ptrdiff_t pad = 4;
  LSTRL_CHECK_CFG(dy <= 2 * pad && dx <= 2 * pad, "crop offset out of the pad-4 window");
  const std::size_t tn = clip.shape[0], h = clip.shape[1], w = clip.shape[2];
  DenseTensor<float> out(clip.shape);
  for (std::size_t t = 0; t < tn; ++t)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
        const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - pad;
        float* dst = out.data.data() + ((t * h + y) * w + x) * 3;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx < 0 ||
            sx >= static_cast<std::ptrdiff_t>(w)) {
          dst[0] = dst[1] = dst[2] = 0.f;
        } else {
          const float* src =
              clip.data.data() +
              ((t * h + static_cast<std::size_t>(sy)) * w + static_cast<std::size_t>(sx)) * 3;
          dst[0] = src[0];
          dst[1] = src[1];
          dst[2] = src[2];
        }
      }
  return out;
}

DenseTensor<float> augment(const DenseTensor<float>& clip, Rng& rng,
                           const AugmentFlags& flags,
                           const std::array<float, 3>& mean_fill) {
  const std::size_t tn = clip.shape[0], h = clip.shape[1], w = clip.shape[2];
  DenseTensor<float> out = clip;

  if (flags.crop) {
    // one offset shared across the clip's frames
    const std::size_t dy = rng.uniform_index(9);
    const std::size_t dx = rng.uniform_index(9);
    if (dy != 4 || dx != 4) out = crop_shift(clip, dy, dx);
  }

  if (flags.erase) {
    for (std::size_t t = 0; t < tn; ++t) {
      if (!rng.bernoulli(flags.erase_prob)) continue;
      const double area = rng.uniform(0.02, 0.25) * double(h * w);
      const double aspect = rng.uniform(0.3, 3.3);
      std::size_t eh = static_cast<std::size_t>(std::lround(std::sqrt(area * aspect)));
      std::size_t ew = static_cast<std::size_t>(std::lround(std::sqrt(area / aspect)));
      eh = std::clamp<std::size_t>(eh, 1, h);
      ew = std::clamp<std::size_t>(ew, 1, w);
      while (eh * ew * 4 > h * w && eh > 1) --eh;  // keep the 25% area bound
      while (eh * ew * 4 > h * w && ew > 1) --ew;
      const std::size_t y0 = rng.uniform_index(h - eh + 1);
      const std::size_t x0 = rng.uniform_index(w - ew + 1);
      for (std::size_t y = y0; y < y0 + eh; ++y)
        for (std::size_t x = x0; x < x0 + ew; ++x) {
          float* dst = out.data.data() + ((t * h + y) * w + x) * 3;
          dst[0] = mean_fill[0];
          dst[1] = mean_fill[1];
          dst[2] = mean_fill[2];
        }
    }
  }
  return out;
}

}  // namespace lstrl
