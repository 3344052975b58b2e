#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lstrl/rng.hpp"
#include "lstrl/tape.hpp"

namespace lstrl {

// Bi-direction motion estimator. For every frame it pairs the frame's pooled
// global feature against the local features of its temporal neighbors in both
// directions and fuses the two motion maps into a short-term residual.

enum class MotionManner { global_to_local, local_to_local };
enum class MotionDirection { bi, single };

// Multiply counts of the neighbor-pairing step, for cost instrumentation.
// global_to_local pairs one vector against HW positions; local_to_local pairs
// every position against every position.
struct BmeCostCounter {
  std::uint64_t pairing_mults = 0;
};

template <typename T>
struct BmeParams {
  ParamTensor<T> phi_w, phi_b;          // C -> C/2, applied to the global feature
  ParamTensor<T> psi_w, psi_b;          // C -> C/2, applied to neighbor locals
  ParamTensor<T> upsilon_w, upsilon_b;  // fused motion -> C with ReLU, zero-init
  MotionManner manner = MotionManner::global_to_local;
  MotionDirection direction = MotionDirection::bi;
  std::size_t channels = 0;

  static BmeParams init(const std::string& prefix, std::size_t channels,
                        MotionManner manner, MotionDirection direction,
                        std::uint64_t seed) {
    LSTRL_CHECK_CFG(channels % 2 == 0,
                    "BME needs an even channel count, got " + std::to_string(channels));
    const std::size_t c2 = channels / 2;
    BmeParams p;
    p.manner = manner;
    p.direction = direction;
    p.channels = channels;
    Rng rphi = Rng::fork(seed, fnv1a(prefix + ".phi"));
    Rng rpsi = Rng::fork(seed, fnv1a(prefix + ".psi"));
    p.phi_w = ParamTensor<T>(prefix + ".phi.w",
                             glorot_uniform<T>({channels, c2}, channels, c2, rphi));
    p.phi_b = ParamTensor<T>(prefix + ".phi.b", DenseTensor<T>({c2}));
    p.psi_w = ParamTensor<T>(prefix + ".psi.w",
                             glorot_uniform<T>({channels, c2}, channels, c2, rpsi));
    p.psi_b = ParamTensor<T>(prefix + ".psi.b", DenseTensor<T>({c2}));
    const std::size_t fused_in = direction == MotionDirection::bi ? channels : c2;
    // zero-initialized fusion keeps the block an exact identity residual
    p.upsilon_w = ParamTensor<T>(prefix + ".upsilon.w", DenseTensor<T>({fused_in, channels}));
    p.upsilon_b = ParamTensor<T>(prefix + ".upsilon.b", DenseTensor<T>({channels}));
    return p;
  }

  std::vector<std::pair<std::string, ParamTensor<T>*>> named_params() {
    return {{phi_w.name, &phi_w},         {phi_b.name, &phi_b},
            {psi_w.name, &psi_w},         {psi_b.name, &psi_b},
            {upsilon_w.name, &upsilon_w}, {upsilon_b.name, &upsilon_b}};
  }
};

template <typename T>
struct BmeCapture {
  std::vector<DenseTensor<T>> m_fwd;  // per frame [H,W,C/2]
  std::vector<DenseTensor<T>> m_bwd;
};

// Spatial mean of one frame: [H,W,C] -> [1,1,C].
template <typename T>
Var frame_global(Tape<T>& tape, Var frame) {
  const Shape fs = tape.shape(frame);
  LSTRL_CHECK_DIM(fs.size() == 3, "frame_global expects [H,W,C], got " + shape_str(fs));
  return tape.reshape(tape.reduce_mean(frame, {0, 1}), {1, 1, fs[2]});
}

// Literal pairwise local-to-local estimate: every phi position multiplied
// against every psi position, averaged over the phi side. Kept for the cost
// ablation; value-wise it coincides with the global manner because the
// affine phi commutes with the mean.
template <typename T>
Var pairwise_motion(Tape<T>& tape, Var phi_local, Var psi_local, BmeCostCounter* cost) {
  const Shape ps = tape.shape(phi_local);
  const std::size_t h = ps[0], w = ps[1], c = ps[2];
  const std::size_t hw = h * w;
  const auto& pv = tape.value(phi_local);
  const auto& sv = tape.value(psi_local);
  DenseTensor<T> out({h, w, c});
  const T inv = T(1) / static_cast<T>(hw);
  for (std::size_t p = 0; p < hw; ++p)
    for (std::size_t q = 0; q < hw; ++q)
      for (std::size_t j = 0; j < c; ++j)
        out.data[p * c + j] += pv.data[q * c + j] * sv.data[p * c + j];
  for (auto& v : out.data) v *= inv;
  if (cost != nullptr) cost->pairing_mults += static_cast<std::uint64_t>(hw) * hw * c;
  return tape.custom("pairwise_motion", std::move(out), {phi_local, psi_local},
                     [hw, c, inv](Tape<T>& t, std::size_t id) {
                       const auto& g = t.out_grad(id);
                       const auto& pv = t.input_value(id, 0);
                       const auto& sv = t.input_value(id, 1);
                       // out[p,c] = psi[p,c] * mean_q phi[q,c]
                       DenseTensor<T> gphi(pv.shape), gpsi(sv.shape);
                       std::vector<T> phi_mean(c, T(0)), gpsi_dot(c, T(0));
                       for (std::size_t q = 0; q < hw; ++q)
                         for (std::size_t j = 0; j < c; ++j) {
                           phi_mean[j] += pv.data[q * c + j] * inv;
                           gpsi_dot[j] += g.data[q * c + j] * sv.data[q * c + j] * inv;
                         }
                       for (std::size_t p = 0; p < hw; ++p)
                         for (std::size_t j = 0; j < c; ++j) {
                           gpsi.data[p * c + j] = g.data[p * c + j] * phi_mean[j];
                           gphi.data[p * c + j] = gpsi_dot[j];
                         }
                       t.accumulate_input_grad(id, 0, gphi);
                       t.accumulate_input_grad(id, 1, gpsi);
                     });
}

// Motion map of frame f_t against a neighbor frame, [H,W,C] -> [H,W,C/2].
template <typename T>
Var estimate_motion(Tape<T>& tape, Var f_t, Var f_nbr, BmeParams<T>& p,
                    BmeCostCounter* cost = nullptr) {
  const Shape fs = tape.shape(f_t);
  LSTRL_CHECK_DIM(fs.size() == 3 && tape.shape(f_nbr) == fs,
                  "estimate_motion expects matching [H,W,C] frames");
  LSTRL_CHECK_CFG(fs[2] % 2 == 0,
                  "BME needs an even channel count, got " + std::to_string(fs[2]));
  Var psi_local = tape.pointwise_affine(f_nbr, p.psi_w, p.psi_b, false);
  if (p.manner == MotionManner::local_to_local) {
    Var phi_local = tape.pointwise_affine(f_t, p.phi_w, p.phi_b, false);
    return pairwise_motion(tape, phi_local, psi_local, cost);
  }
  Var phi_global = tape.pointwise_affine(frame_global(tape, f_t), p.phi_w, p.phi_b, false);
  if (cost != nullptr)
    cost->pairing_mults += static_cast<std::uint64_t>(fs[0]) * fs[1] * (fs[2] / 2);
  return tape.broadcast_hadamard(phi_global, psi_local);
}

// Full block over a clip [T,H,W,C]. Temporal boundaries clamp: frame 0 is its
// own predecessor, frame T-1 its own successor.
template <typename T>
Var bme_forward(Tape<T>& tape, Var f, BmeParams<T>& p, BmeCapture<T>* capture = nullptr,
                BmeCostCounter* cost = nullptr) {
  const Shape fs = tape.shape(f);
  LSTRL_CHECK_DIM(fs.size() == 4, "BME input must be [T,H,W,C], got " + shape_str(fs));
  const std::size_t tn = fs[0];
  std::vector<Var> frames(tn);
  for (std::size_t t = 0; t < tn; ++t) frames[t] = tape.select_index0(f, t);
  std::vector<Var> fused(tn);
  for (std::size_t t = 0; t < tn; ++t) {
    const std::size_t succ = (t + 1 < tn) ? t + 1 : t;
    const std::size_t pred = (t > 0) ? t - 1 : t;
    Var m_fwd = estimate_motion(tape, frames[t], frames[succ], p, cost);
    Var fuse_in = m_fwd;
    if (p.direction == MotionDirection::bi) {
      Var m_bwd = estimate_motion(tape, frames[t], frames[pred], p, cost);
      if (capture != nullptr) {
        capture->m_fwd.push_back(tape.value(m_fwd));
        capture->m_bwd.push_back(tape.value(m_bwd));
      }
      fuse_in = tape.concat_channels({m_fwd, m_bwd});
    } else if (capture != nullptr) {
      capture->m_fwd.push_back(tape.value(m_fwd));
    }
    fused[t] = tape.pointwise_affine(fuse_in, p.upsilon_w, p.upsilon_b, true);
  }
  return tape.stack_rows(fused);
}

}  // namespace lstrl
