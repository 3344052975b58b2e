#pragma once

#include <array>
#include <string>
#include <vector>

#include "lstrl/rng.hpp"
#include "lstrl/tape.hpp"

namespace lstrl {

// Multi-granularity appearance extractor. From a clip feature block
// F [T,H,W,C] it derives four pooled granularities X1..X4, one dependency
// matrix per granularity against every local position, aggregates the
// attended features back to full resolution and fuses them across channels
// into a long-term appearance residual of the input shape.

template <typename T>
struct MaeParams {
  ParamTensor<T> omega1_w, omega1_b;  // C -> C/4 channel reduction
  ParamTensor<T> omega2_w, omega2_b;  // fused granularities -> C, zero-init
  std::array<bool, 4> active{true, true, true, true};
  std::size_t channels = 0;

  static MaeParams init(const std::string& prefix, std::size_t channels,
                        const std::array<bool, 4>& active, std::uint64_t seed) {
    LSTRL_CHECK_CFG(channels % 4 == 0,
                    "MAE needs channels divisible by 4, got " + std::to_string(channels));
    std::size_t n_active = 0;
    for (bool a : active) n_active += a ? 1 : 0;
    LSTRL_CHECK_CFG(n_active >= 1, "MAE needs at least one active granularity");
    const std::size_t c4 = channels / 4;
    MaeParams p;
    p.active = active;
    p.channels = channels;
    Rng r1 = Rng::fork(seed, fnv1a(prefix + ".omega1"));
    p.omega1_w = ParamTensor<T>(prefix + ".omega1.w",
                                glorot_uniform<T>({channels, c4}, channels, c4, r1));
    p.omega1_b = ParamTensor<T>(prefix + ".omega1.b", DenseTensor<T>({c4}));
    // zero-initialized fusion keeps the block an exact identity residual
    p.omega2_w =
        ParamTensor<T>(prefix + ".omega2.w", DenseTensor<T>({n_active * c4, channels}));
    p.omega2_b = ParamTensor<T>(prefix + ".omega2.b", DenseTensor<T>({channels}));
    return p;
  }

  std::vector<std::pair<std::string, ParamTensor<T>*>> named_params() {
    return {{omega1_w.name, &omega1_w},
            {omega1_b.name, &omega1_b},
            {omega2_w.name, &omega2_w},
            {omega2_b.name, &omega2_b}};
  }
};

// The granularity features, their dependency matrices and re-extended
// aggregates. Inactive granularities keep invalid Vars.
template <typename T>
struct GranularitySet {
  std::array<Var, 4> x;  // X1 [THW,C/4], X2 [HW,C/4], X3 [T,C/4], X4 [1,C/4]
  std::array<Var, 4> d;  // D^i: rows {THW,HW,T,1}, THW columns
  std::array<Var, 4> a;  // A_i [THW,C/4]
  std::size_t t = 0, h = 0, w = 0, c4 = 0;
};

template <typename T>
struct MaeCapture {
  std::array<DenseTensor<T>, 4> deps;  // forward values of D^1..D^4
};

template <typename T>
GranularitySet<T> build_granularities(Tape<T>& tape, Var f, MaeParams<T>& p) {
  const Shape fs = tape.shape(f);
  LSTRL_CHECK_DIM(fs.size() == 4, "MAE input must be [T,H,W,C], got " + shape_str(fs));
  LSTRL_CHECK_CFG(fs[3] % 4 == 0,
                  "MAE needs channels divisible by 4, got " + std::to_string(fs[3]));
  LSTRL_CHECK_DIM(fs[3] == p.channels, "MAE params built for " +
                                           std::to_string(p.channels) + " channels, got " +
                                           shape_str(fs));
  GranularitySet<T> g;
  g.t = fs[0];
  g.h = fs[1];
  g.w = fs[2];
  g.c4 = fs[3] / 4;
  const std::size_t hw = g.h * g.w, thw = g.t * hw;

  Var reduced = tape.pointwise_affine(f, p.omega1_w, p.omega1_b, false);
  g.x[0] = tape.reshape(reduced, {thw, g.c4});
  Var as_t_hw = tape.reshape(g.x[0], {g.t, hw, g.c4});
  if (p.active[1]) g.x[1] = tape.reduce_mean(as_t_hw, {0});                      // TAP
  if (p.active[2]) g.x[2] = tape.reduce_mean(as_t_hw, {1});                      // GAP
  if (p.active[3]) g.x[3] = tape.reshape(tape.reduce_mean(as_t_hw, {0, 1}), {1, g.c4});
  return g;
}

template <typename T>
void compute_dependencies(Tape<T>& tape, GranularitySet<T>& g, const MaeParams<T>& p) {
  Var x1t = tape.transpose2d(g.x[0]);
  for (std::size_t i = 0; i < 4; ++i) {
    if (!p.active[i]) continue;
    g.d[i] = tape.softmax_rows(tape.matmul(g.x[i], x1t));
  }
}

template <typename T>
void aggregate_appearances(Tape<T>& tape, GranularitySet<T>& g, const MaeParams<T>& p) {
  const std::size_t hw = g.h * g.w, thw = g.t * hw;
  if (p.active[0]) g.a[0] = tape.matmul(g.d[0], g.x[0]);
  if (p.active[1]) g.a[1] = tape.tile_rows(tape.matmul(g.d[1], g.x[0]), g.t);
  if (p.active[2]) g.a[2] = tape.repeat_rows(tape.matmul(g.d[2], g.x[0]), hw);
  if (p.active[3]) g.a[3] = tape.tile_rows(tape.matmul(g.d[3], g.x[0]), thw);
}

// Full block: granularities -> dependencies -> aggregation -> channel fusion.
// Returns the appearance residual with the input's [T,H,W,C] shape.
template <typename T>
Var mae_forward(Tape<T>& tape, Var f, MaeParams<T>& p, MaeCapture<T>* capture = nullptr) {
  GranularitySet<T> g = build_granularities(tape, f, p);
  compute_dependencies(tape, g, p);
  aggregate_appearances(tape, g, p);
  if (capture != nullptr) {
    for (std::size_t i = 0; i < 4; ++i)
      if (p.active[i]) capture->deps[i] = tape.value(g.d[i]);
  }
  std::vector<Var> parts;
  for (std::size_t i = 0; i < 4; ++i)
    if (p.active[i]) parts.push_back(g.a[i]);
  Var fused = tape.pointwise_affine(tape.concat_channels(parts), p.omega2_w, p.omega2_b,
                                    false);
  return tape.reshape(fused, {g.t, g.h, g.w, g.c4 * 4});
}

}  // namespace lstrl
