#include "lstrl/synth.hpp"

#include <cmath>
#include <cstdio>

#include "lstrl/tensor_io.hpp"

namespace lstrl {

namespace fs = std::filesystem;

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

std::array<float, 3> hsv_to_rgb(double h, double s, double v) {
  h = h - std::floor(h);
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

void fill_rect(DenseTensor<float>& img, std::ptrdiff_t y0, std::ptrdiff_t y1,
               std::ptrdiff_t x0, std::ptrdiff_t x1, const std::array<float, 3>& color) {
  const std::ptrdiff_t h = static_cast<std::ptrdiff_t>(img.shape[0]);
  const std::ptrdiff_t w = static_cast<std::ptrdiff_t>(img.shape[1]);
  y0 = std::max<std::ptrdiff_t>(y0, 0);
  x0 = std::max<std::ptrdiff_t>(x0, 0);
  y1 = std::min(y1, h);
  x1 = std::min(x1, w);
  for (std::ptrdiff_t y = y0; y < y1; ++y)
    for (std::ptrdiff_t x = x0; x < x1; ++x) {
      float* px = img.data.data() + (static_cast<std::size_t>(y) * img.shape[1] +
                                     static_cast<std::size_t>(x)) *
                                        3;
      px[0] = color[0];
      px[1] = color[1];
      px[2] = color[2];
    }
}

}  // namespace

IdentityStyle identity_style(const SynthConfig& cfg, std::size_t identity) {
  const std::size_t palette = identity % cfg.palette_count;
  IdentityStyle st;
  const double hue = double(palette) / double(cfg.palette_count);
  st.torso_color = hsv_to_rgb(hue, 0.85, 0.85);
  st.legs_color = hsv_to_rgb(hue + 0.38, 0.75, 0.7);
  st.direction = identity < cfg.palette_count ? 1 : -1;
  // orbit speed is a palette property so shared-palette partners differ only
  // in direction
  Rng r = Rng::fork(cfg.seed, fnv1a("palette" + std::to_string(palette)));
  st.period = double(cfg.frames_per_tracklet) * r.uniform(0.9, 1.2);
  return st;
}

CameraTransform camera_transform(const SynthConfig& cfg, int camera_id) {
  Rng r = Rng::fork(cfg.seed, fnv1a("camera" + std::to_string(camera_id)));
  CameraTransform ct;
  ct.brightness = static_cast<float>(r.uniform(0.9, 1.1));
  ct.noise_scale = static_cast<float>(r.uniform(0.75, 1.25));
  return ct;
}

std::vector<DenseTensor<float>> render_tracklet(const SynthConfig& cfg,
                                                const IdentityStyle& style,
                                                int camera_id, Rng& rng) {
  const std::size_t h = cfg.frame_h, w = cfg.frame_w;
  const CameraTransform cam = camera_transform(cfg, camera_id);

  const double phase = rng.uniform(0.0, kTau);
  const std::ptrdiff_t off_y = static_cast<std::ptrdiff_t>(rng.uniform_index(5)) - 2;
  const std::ptrdiff_t off_x = static_cast<std::ptrdiff_t>(rng.uniform_index(5)) - 2;

  // blob orbit in the head region, sized so the square stays inside the frame
  // and above the torso even under the +-2 viewpoint offset
  const double cy = 0.14 * double(h), cx = 0.5 * double(w);
  const double ry = 0.035 * double(h), rx = 0.30 * double(w);
  const std::ptrdiff_t blob_half =
      std::max<std::ptrdiff_t>(1, std::lround(std::min<std::size_t>(h, 2 * w) / 28.0));
  const std::array<float, 3> blob_color{0.95f, 0.9f, 0.25f};
  const std::array<float, 3> background{0.1f, 0.1f, 0.12f};
  const std::array<float, 3> occluder{0.35f, 0.35f, 0.35f};

  std::vector<DenseTensor<float>> frames;
  frames.reserve(cfg.frames_per_tracklet);
  for (std::size_t t = 0; t < cfg.frames_per_tracklet; ++t) {
    DenseTensor<float> img({h, w, 3});
    fill_rect(img, 0, h, 0, w, background);
    // torso and two leg stripes
    fill_rect(img, std::lround(0.25 * h) + off_y, std::lround(0.62 * h) + off_y,
              std::lround(0.20 * w) + off_x, std::lround(0.80 * w) + off_x,
              style.torso_color);
    fill_rect(img, std::lround(0.62 * h) + off_y, std::lround(0.95 * h) + off_y,
              std::lround(0.22 * w) + off_x, std::lround(0.42 * w) + off_x,
              style.legs_color);
    fill_rect(img, std::lround(0.62 * h) + off_y, std::lround(0.95 * h) + off_y,
              std::lround(0.58 * w) + off_x, std::lround(0.78 * w) + off_x,
              style.legs_color);
    // orbiting blob, integer raster
    const double theta = phase + style.direction * kTau * double(t) / style.period;
    const std::ptrdiff_t by = std::lround(cy + ry * std::sin(theta)) + off_y;
    const std::ptrdiff_t bx = std::lround(cx + rx * std::cos(theta)) + off_x;
    fill_rect(img, by - blob_half, by + blob_half, bx - blob_half, bx + blob_half,
              blob_color);
    // occasional occluder bar across the full width
    if (rng.bernoulli(cfg.occlusion_prob)) {
      const std::ptrdiff_t bar_h = std::lround(0.2 * h);
      const std::ptrdiff_t y0 =
          static_cast<std::ptrdiff_t>(rng.uniform_index(h - static_cast<std::size_t>(bar_h)));
      fill_rect(img, y0, y0 + bar_h, 0, w, occluder);
    }
    // camera transform: brightness, noise, clamp to [0,1]
    const float sigma = static_cast<float>(cfg.pixel_noise) * cam.noise_scale;
    for (auto& v : img.data) {
      float px = v * cam.brightness;
      if (sigma > 0) px += static_cast<float>(rng.normal()) * sigma;
      v = std::clamp(px, 0.0f, 1.0f);
    }
    frames.push_back(std::move(img));
  }
  return frames;
}

void generate_synthetic(const SynthConfig& cfg, const fs::path& root, bool force) {
  cfg.validate();
  if (fs::exists(root) && !fs::is_empty(root) && !force)
    throw DataError("target directory is not empty (use force): " + root.string());
  fs::create_directories(root);

  char buf[64];
  for (std::size_t id = 0; id < cfg.num_identities; ++id) {
    const IdentityStyle style = identity_style(cfg, id);
    for (std::size_t k = 0; k < cfg.tracklets_per_identity; ++k) {
      // last two tracklets are the eval splits, under held-out cameras
      std::string split;
      int camera;
      if (k + 2 < cfg.tracklets_per_identity) {
        split = "train";
        camera = static_cast<int>(k % 2);
      } else if (k + 2 == cfg.tracklets_per_identity) {
        split = "query";
        camera = 2;
      } else {
        split = "gallery";
        camera = 3;
      }
      Rng rng = Rng::fork(cfg.seed, fnv1a("tracklet/" + std::to_string(id) + "/" +
                                          std::to_string(k)));
      auto frames = render_tracklet(cfg, style, camera, rng);

      std::snprintf(buf, sizeof(buf), "%04zu", id);
      fs::path dir = root / split / buf;
      std::snprintf(buf, sizeof(buf), "%02d", camera);
      dir /= buf;
      std::snprintf(buf, sizeof(buf), "%04zu", k);
      dir /= buf;
      fs::create_directories(dir);
      for (std::size_t f = 0; f < frames.size(); ++f) {
        std::snprintf(buf, sizeof(buf), "frame_%05zu.lst", f);
        save_tensor(dir / buf, frames[f]);
      }
    }
  }
}

}  // namespace lstrl
