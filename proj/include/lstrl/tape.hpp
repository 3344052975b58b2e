#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lstrl/error.hpp"
#include "lstrl/kernels.hpp"
#include "lstrl/tensor.hpp"

namespace lstrl {

// Handle to a tensor recorded on a tape.
struct Var {
  std::int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape. Operations append nodes in topological order
// (inputs always precede their consumers); backward() walks the nodes once in
// reverse, accumulates gradients into every contributing ParamTensor, and
// clears the tape. Forward execution is deterministic: identical inputs give
// bit-identical outputs regardless of thread count.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // NaN/Inf detection after every forward op (on by default).
  void set_check_finite(bool on) { check_finite_ = on; }

  std::size_t num_nodes() const { return nodes_.size(); }

  const DenseTensor<T>& value(Var v) const { return node_value(check_id(v)); }
  const Shape& shape(Var v) const { return value(v).shape; }

  // ---- leaves ----

  Var input(DenseTensor<T> v) {
    const bool needs_grad = v.requires_grad;
    return push("input", std::move(v), {}, nullptr, needs_grad);
  }

  Var param(ParamTensor<T>& p) {
    auto it = param_vars_.find(&p);
    if (it != param_vars_.end()) return it->second;
    Var v = push("param", p.value, {}, nullptr, /*needs_grad=*/true);
    nodes_[static_cast<std::size_t>(v.id)].param = &p;
    param_vars_.emplace(&p, v);
    return v;
  }

  // ---- operations ----

  // [m,k] x [k,n] -> [m,n]
  Var matmul(Var av, Var bv) {
    const auto& a = value(av);
    const auto& b = value(bv);
    LSTRL_CHECK_DIM(a.rank() == 2 && b.rank() == 2 && a.shape[1] == b.shape[0],
                    "matmul shape mismatch: " + shape_str(a.shape) + " x " +
                        shape_str(b.shape));
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    DenseTensor<T> out({m, n});
    detail::gemm_nn(a.data.data(), b.data.data(), out.data.data(), m, k, n);
    return push("matmul", std::move(out), {av, bv}, [m, k, n](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      const auto& g = node.grad;
      const auto& a = t.node_value_by_id(node.inputs[0]);
      const auto& b = t.node_value_by_id(node.inputs[1]);
      if (t.wants_grad(node.inputs[0]))  // dA = G B^T
        detail::gemm_nt(g.data.data(), b.data.data(),
                        t.grad_buffer(node.inputs[0]).data.data(), m, n, k);
      if (t.wants_grad(node.inputs[1]))  // dB = A^T G
        detail::gemm_tn(a.data.data(), g.data.data(),
                        t.grad_buffer(node.inputs[1]).data.data(), m, k, n);
    });
  }

  // [m,n] -> [n,m]
  Var transpose2d(Var xv) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() == 2, "transpose2d expects rank 2, got " + shape_str(x.shape));
    const std::size_t m = x.shape[0], n = x.shape[1];
    DenseTensor<T> out({n, m});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out.data[j * m + i] = x.data[i * n + j];
    return push("transpose2d", std::move(out), {xv}, [m, n](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      if (!t.wants_grad(node.inputs[0])) return;
      auto& gx = t.grad_buffer(node.inputs[0]);
      const auto& g = node.grad;
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t i = 0; i < m; ++i) gx.data[i * n + j] += g.data[j * m + i];
    });
  }

  // Row-wise softmax with max subtraction. Each output row sums to 1.
  Var softmax_rows(Var xv) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() == 2 && x.shape[1] >= 1,
                    "softmax_rows expects [m,n], n>=1, got " + shape_str(x.shape));
    const std::size_t m = x.shape[0], n = x.shape[1];
    DenseTensor<T> out({m, n});
    const std::int64_t mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * n > 8192)
    for (std::int64_t i = 0; i < mm; ++i) {
      const T* row = x.data.data() + static_cast<std::size_t>(i) * n;
      T* orow = out.data.data() + static_cast<std::size_t>(i) * n;
      T mx = row[0];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
      T sum = T(0);
      for (std::size_t j = 0; j < n; ++j) {
        orow[j] = std::exp(row[j] - mx);
        sum += orow[j];
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j < n; ++j) orow[j] *= inv;
    }
    return push("softmax_rows", std::move(out), {xv}, [m, n](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      if (!t.wants_grad(node.inputs[0])) return;
      const auto& y = node.value;
      const auto& g = node.grad;
      auto& gx = t.grad_buffer(node.inputs[0]);
      const std::int64_t mm = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static) if (m * n > 8192)
      for (std::int64_t i = 0; i < mm; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * n;
        T dot = T(0);
        for (std::size_t j = 0; j < n; ++j) dot += g.data[off + j] * y.data[off + j];
        for (std::size_t j = 0; j < n; ++j)
          gx.data[off + j] += y.data[off + j] * (g.data[off + j] - dot);
      }
    });
  }

  // Arithmetic mean over the given axes; reduced axes are removed from the
  // shape. An empty axis set returns the input unchanged.
  Var reduce_mean(Var xv, std::vector<std::size_t> axes) {
    const auto& x = value(xv);
    if (axes.empty()) return xv;
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    for (std::size_t a : axes)
      LSTRL_CHECK_DIM(a < x.rank(), "reduce_mean axis " + std::to_string(a) +
                                        " out of range for " + shape_str(x.shape));
    const Shape in_shape = x.shape;
    const auto in_strides = strides_of(in_shape);
    Shape out_shape;
    std::vector<std::size_t> kept_axes, red_axes;
    for (std::size_t d = 0; d < in_shape.size(); ++d) {
      if (std::binary_search(axes.begin(), axes.end(), d)) {
        red_axes.push_back(d);
      } else {
        kept_axes.push_back(d);
        out_shape.push_back(in_shape[d]);
      }
    }
    std::size_t red_count = 1;
    for (std::size_t d : red_axes) red_count *= in_shape[d];

    DenseTensor<T> out(out_shape);
    const std::int64_t on = static_cast<std::int64_t>(out.size());
    const T inv = T(1) / static_cast<T>(red_count);
#pragma omp parallel for schedule(static) if (out.size() * red_count > 16384)
    for (std::int64_t of = 0; of < on; ++of) {
      // base offset from kept coordinates
      std::size_t rem = static_cast<std::size_t>(of), base = 0;
      for (std::size_t d = kept_axes.size(); d-- > 0;) {
        const std::size_t dim = in_shape[kept_axes[d]];
        base += (rem % dim) * in_strides[kept_axes[d]];
        rem /= dim;
      }
      // odometer over reduced coordinates
      T sum = T(0);
      std::vector<std::size_t> ridx(red_axes.size(), 0);
      while (true) {
        std::size_t off = base;
        for (std::size_t d = 0; d < red_axes.size(); ++d)
          off += ridx[d] * in_strides[red_axes[d]];
        sum += x.data[off];
        std::size_t d = red_axes.size();
        while (d > 0) {
          --d;
          if (++ridx[d] < in_shape[red_axes[d]]) break;
          ridx[d] = 0;
          if (d == 0) goto done;
        }
        if (red_axes.empty()) break;
      }
    done:
      out.data[static_cast<std::size_t>(of)] = sum * inv;
    }

    auto kept = kept_axes;
    return push("reduce_mean", std::move(out), {xv},
                [in_shape, in_strides, kept, red_count](Tape& t, std::size_t id) {
                  auto& node = t.nodes_[id];
                  if (!t.wants_grad(node.inputs[0])) return;
                  const auto& g = node.grad;
                  auto& gx = t.grad_buffer(node.inputs[0]);
                  // kept-coordinate strides in the output
                  std::vector<std::size_t> out_strides(kept.size(), 1);
                  for (std::size_t d = kept.size(); d-- > 1;)
                    out_strides[d - 1] = out_strides[d] * in_shape[kept[d]];
                  const T inv = T(1) / static_cast<T>(red_count);
                  const std::int64_t nn = static_cast<std::int64_t>(gx.size());
#pragma omp parallel for schedule(static) if (gx.size() > 16384)
                  for (std::int64_t i = 0; i < nn; ++i) {
                    std::size_t of = 0;
                    for (std::size_t d = 0; d < kept.size(); ++d) {
                      const std::size_t coord =
                          (static_cast<std::size_t>(i) / in_strides[kept[d]]) %
                          in_shape[kept[d]];
                      of += coord * out_strides[d];
                    }
                    gx.data[static_cast<std::size_t>(i)] += g.data[of] * inv;
                  }
                });
  }

  // y[..., j] = sum_i x[..., i] w[i, j] + b[j], optionally ReLU-clamped.
  // A 1x1 convolution over channels applied at every leading position.
  Var pointwise_affine(Var xv, ParamTensor<T>& w, ParamTensor<T>& b, bool relu) {
    // register leaves first: pushing nodes may reallocate the node vector,
    // which would invalidate the value reference taken below
    Var wv = param(w);
    Var bv = param(b);
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() >= 1, "pointwise_affine input needs at least 1 dim");
    LSTRL_CHECK_DIM(w.value.rank() == 2 && b.value.rank() == 1 &&
                        w.value.shape[1] == b.value.shape[0],
                    "pointwise_affine weight/bias mismatch: " + shape_str(w.value.shape) +
                        " vs " + shape_str(b.value.shape));
    const std::size_t cin = w.value.shape[0], cout = w.value.shape[1];
    LSTRL_CHECK_DIM(x.shape.back() == cin,
                    "pointwise_affine channel mismatch: input " + shape_str(x.shape) +
                        " vs weight " + shape_str(w.value.shape));
    const std::size_t rows = x.size() / cin;
    Shape out_shape = x.shape;
    out_shape.back() = cout;
    DenseTensor<T> out(out_shape);
    detail::gemm_nn(x.data.data(), w.value.data.data(), out.data.data(), rows, cin, cout);
    const std::int64_t rr = static_cast<std::int64_t>(rows);
#pragma omp parallel for schedule(static) if (rows * cout > 16384)
    for (std::int64_t r = 0; r < rr; ++r) {
      T* orow = out.data.data() + static_cast<std::size_t>(r) * cout;
      for (std::size_t j = 0; j < cout; ++j) {
        orow[j] += b.value.data[j];
        if (relu && orow[j] < T(0)) orow[j] = T(0);
      }
    }
    return push("pointwise_affine", std::move(out), {xv, wv, bv},
                [rows, cin, cout, relu](Tape& t, std::size_t id) {
                  auto& node = t.nodes_[id];
                  const auto& y = node.value;
                  const auto& x = t.node_value_by_id(node.inputs[0]);
                  const auto& w = t.node_value_by_id(node.inputs[1]);
                  // ReLU mask folds into the upstream gradient
                  DenseTensor<T> gm;
                  const DenseTensor<T>* gp = &node.grad;
                  if (relu) {
                    gm = node.grad;
                    for (std::size_t i = 0; i < gm.size(); ++i)
                      if (y.data[i] <= T(0)) gm.data[i] = T(0);
                    gp = &gm;
                  }
                  if (t.wants_grad(node.inputs[0]))  // dX = G W^T
                    detail::gemm_nt(gp->data.data(), w.data.data(),
                                    t.grad_buffer(node.inputs[0]).data.data(), rows, cout,
                                    cin);
                  if (t.wants_grad(node.inputs[1]))  // dW = X^T G
                    detail::gemm_tn(x.data.data(), gp->data.data(),
                                    t.grad_buffer(node.inputs[1]).data.data(), rows, cin,
                                    cout);
                  if (t.wants_grad(node.inputs[2])) {  // db = column sums of G
                    auto& gb = t.grad_buffer(node.inputs[2]);
                    for (std::size_t r = 0; r < rows; ++r) {
                      const T* grow = gp->data.data() + r * cout;
                      for (std::size_t j = 0; j < cout; ++j) gb.data[j] += grow[j];
                    }
                  }
                });
  }

  // Concatenate along the last (channel) dimension.
  Var concat_channels(const std::vector<Var>& parts) {
    LSTRL_CHECK_DIM(!parts.empty(), "concat_channels needs at least one part");
    if (parts.size() == 1) return parts[0];
    const auto& first = value(parts[0]);
    Shape lead(first.shape.begin(), first.shape.end() - 1);
    std::size_t total_c = 0;
    std::vector<std::size_t> widths;
    for (Var p : parts) {
      const auto& t = value(p);
      LSTRL_CHECK_DIM(t.rank() == first.rank() &&
                          std::equal(lead.begin(), lead.end(), t.shape.begin()),
                      "concat_channels leading dims mismatch: " + shape_str(first.shape) +
                          " vs " + shape_str(t.shape));
      widths.push_back(t.shape.back());
      total_c += t.shape.back();
    }
    Shape out_shape = first.shape;
    out_shape.back() = total_c;
    DenseTensor<T> out(out_shape);
    const std::size_t rows = numel(lead);
    std::size_t col = 0;
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
      const auto& src = value(parts[pi]);
      const std::size_t wN = widths[pi];
      for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(src.data.data() + r * wN, wN, out.data.data() + r * total_c + col);
      col += wN;
    }
    return push("concat_channels", std::move(out), parts,
                [rows, widths, total_c](Tape& t, std::size_t id) {
                  auto& node = t.nodes_[id];
                  const auto& g = node.grad;
                  std::size_t col = 0;
                  for (std::size_t pi = 0; pi < node.inputs.size(); ++pi) {
                    const std::size_t wN = widths[pi];
                    if (t.wants_grad(node.inputs[pi])) {
                      auto& gx = t.grad_buffer(node.inputs[pi]);
                      for (std::size_t r = 0; r < rows; ++r) {
                        const T* grow = g.data.data() + r * total_c + col;
                        T* xrow = gx.data.data() + r * wN;
                        for (std::size_t j = 0; j < wN; ++j) xrow[j] += grow[j];
                      }
                    }
                    col += wN;
                  }
                });
  }

  // Stack same-shaped tensors along a new leading axis.
  Var stack_rows(const std::vector<Var>& parts) {
    LSTRL_CHECK_DIM(!parts.empty(), "stack_rows needs at least one part");
    const auto& first = value(parts[0]);
    for (Var p : parts)
      LSTRL_CHECK_DIM(value(p).shape == first.shape,
                      "stack_rows shape mismatch: " + shape_str(first.shape) + " vs " +
                          shape_str(value(p).shape));
    Shape out_shape;
    out_shape.push_back(parts.size());
    out_shape.insert(out_shape.end(), first.shape.begin(), first.shape.end());
    const std::size_t chunk = first.size();
    DenseTensor<T> out(out_shape);
    for (std::size_t pi = 0; pi < parts.size(); ++pi)
      std::copy_n(value(parts[pi]).data.data(), chunk, out.data.data() + pi * chunk);
    return push("stack_rows", std::move(out), parts, [chunk](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      const auto& g = node.grad;
      for (std::size_t pi = 0; pi < node.inputs.size(); ++pi) {
        if (!t.wants_grad(node.inputs[pi])) continue;
        auto& gx = t.grad_buffer(node.inputs[pi]);
        const T* src = g.data.data() + pi * chunk;
        for (std::size_t i = 0; i < chunk; ++i) gx.data[i] += src[i];
      }
    });
  }

  // out[h,w,c] = g[0,0,c] * l[h,w,c]; the gradient to g sums over positions.
  Var broadcast_hadamard(Var gv, Var lv) {
    const auto& gt = value(gv);
    const auto& lt = value(lv);
    LSTRL_CHECK_DIM(gt.rank() == 3 && gt.shape[0] == 1 && gt.shape[1] == 1,
                    "broadcast_hadamard global must be [1,1,C], got " + shape_str(gt.shape));
    LSTRL_CHECK_DIM(lt.rank() == 3 && lt.shape[2] == gt.shape[2],
                    "broadcast_hadamard channel mismatch: " + shape_str(gt.shape) + " vs " +
                        shape_str(lt.shape));
    const std::size_t hw = lt.shape[0] * lt.shape[1], c = lt.shape[2];
    DenseTensor<T> out(lt.shape);
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < c; ++j)
        out.data[p * c + j] = gt.data[j] * lt.data[p * c + j];
    return push("broadcast_hadamard", std::move(out), {gv, lv},
                [hw, c](Tape& t, std::size_t id) {
                  auto& node = t.nodes_[id];
                  const auto& g = node.grad;
                  const auto& gt = t.node_value_by_id(node.inputs[0]);
                  const auto& lt = t.node_value_by_id(node.inputs[1]);
                  if (t.wants_grad(node.inputs[0])) {
                    auto& gg = t.grad_buffer(node.inputs[0]);
                    for (std::size_t p = 0; p < hw; ++p)
                      for (std::size_t j = 0; j < c; ++j)
                        gg.data[j] += g.data[p * c + j] * lt.data[p * c + j];
                  }
                  if (t.wants_grad(node.inputs[1])) {
                    auto& gl = t.grad_buffer(node.inputs[1]);
                    for (std::size_t p = 0; p < hw; ++p)
                      for (std::size_t j = 0; j < c; ++j)
                        gl.data[p * c + j] += g.data[p * c + j] * gt.data[j];
                  }
                });
  }

  Var add(Var av, Var bv) {
    const auto& a = value(av);
    const auto& b = value(bv);
    LSTRL_CHECK_DIM(a.shape == b.shape, "add shape mismatch: " + shape_str(a.shape) +
                                            " vs " + shape_str(b.shape));
    DenseTensor<T> out(a.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.data[i] + b.data[i];
    return push("add", std::move(out), {av, bv}, [](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      for (int k = 0; k < 2; ++k) {
        if (!t.wants_grad(node.inputs[k])) continue;
        auto& gx = t.grad_buffer(node.inputs[k]);
        for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += node.grad.data[i];
      }
    });
  }

  Var scale(Var xv, T factor) {
    const auto& x = value(xv);
    DenseTensor<T> out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = x.data[i] * factor;
    return push("scale", std::move(out), {xv}, [factor](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      if (!t.wants_grad(node.inputs[0])) return;
      auto& gx = t.grad_buffer(node.inputs[0]);
      for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += node.grad.data[i] * factor;
    });
  }

  Var reshape(Var xv, Shape new_shape) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(numel(new_shape) == x.size(),
                    "reshape element count mismatch: " + shape_str(x.shape) + " -> " +
                        shape_str(new_shape));
    DenseTensor<T> out(new_shape, x.data);
    return push("reshape", std::move(out), {xv}, [](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      if (!t.wants_grad(node.inputs[0])) return;
      auto& gx = t.grad_buffer(node.inputs[0]);
      for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += node.grad.data[i];
    });
  }

  // [R,C] -> [n*R,C]; the whole block repeated n times.
  Var tile_rows(Var xv, std::size_t n) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() == 2 && n >= 1, "tile_rows expects [R,C] and n>=1");
    const std::size_t r = x.shape[0], c = x.shape[1];
    DenseTensor<T> out({n * r, c});
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(x.data.data(), r * c, out.data.data() + i * r * c);
    return push("tile_rows", std::move(out), {xv}, [n, r, c](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      if (!t.wants_grad(node.inputs[0])) return;
      auto& gx = t.grad_buffer(node.inputs[0]);
      for (std::size_t i = 0; i < n; ++i) {
        const T* src = node.grad.data.data() + i * r * c;
        for (std::size_t j = 0; j < r * c; ++j) gx.data[j] += src[j];
      }
    });
  }

  // [R,C] -> [R*k,C]; each row repeated k consecutive times.
  Var repeat_rows(Var xv, std::size_t k) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() == 2 && k >= 1, "repeat_rows expects [R,C] and k>=1");
    const std::size_t r = x.shape[0], c = x.shape[1];
    DenseTensor<T> out({r * k, c});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < k; ++j)
        std::copy_n(x.data.data() + i * c, c, out.data.data() + (i * k + j) * c);
    return push("repeat_rows", std::move(out), {xv}, [k, r, c](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      if (!t.wants_grad(node.inputs[0])) return;
      auto& gx = t.grad_buffer(node.inputs[0]);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const T* src = node.grad.data.data() + (i * k + j) * c;
          for (std::size_t q = 0; q < c; ++q) gx.data[i * c + q] += src[q];
        }
    });
  }

  // Select one index along axis 0: [N, ...] -> [...].
  Var select_index0(Var xv, std::size_t index) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() >= 1 && index < x.shape[0],
                    "select_index0 index " + std::to_string(index) + " out of range for " +
                        shape_str(x.shape));
    Shape out_shape(x.shape.begin() + 1, x.shape.end());
    const std::size_t chunk = numel(out_shape);
    DenseTensor<T> out(out_shape);
    std::copy_n(x.data.data() + index * chunk, chunk, out.data.data());
    return push("select_index0", std::move(out), {xv},
                [index, chunk](Tape& t, std::size_t id) {
                  auto& node = t.nodes_[id];
                  if (!t.wants_grad(node.inputs[0])) return;
                  auto& gx = t.grad_buffer(node.inputs[0]);
                  T* dst = gx.data.data() + index * chunk;
                  for (std::size_t i = 0; i < chunk; ++i) dst[i] += node.grad.data[i];
                });
  }

  // Zero-padded 3x3 neighborhood gather: [T,H,W,C] -> [T,H,W,9C], with the
  // window index outermost in the channel block.
  Var unfold3x3(Var xv) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() == 4, "unfold3x3 expects [T,H,W,C], got " + shape_str(x.shape));
    const std::size_t tn = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    DenseTensor<T> out({tn, h, w, 9 * c});
    const std::int64_t rows = static_cast<std::int64_t>(tn * h);
#pragma omp parallel for schedule(static) if (tn * h * w * c > 8192)
    for (std::int64_t th = 0; th < rows; ++th) {
      const std::size_t t0 = static_cast<std::size_t>(th) / h;
      const std::size_t hh = static_cast<std::size_t>(th) % h;
      for (std::size_t ww = 0; ww < w; ++ww) {
        T* dst = out.data.data() + (((t0 * h + hh) * w + ww) * 9) * c;
        for (int ky = 0; ky < 3; ++ky) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(hh) + ky - 1;
          for (int kx = 0; kx < 3; ++kx) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(ww) + kx - 1;
            T* cell = dst + (ky * 3 + kx) * c;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h) || sx < 0 ||
                sx >= static_cast<std::ptrdiff_t>(w)) {
              std::fill_n(cell, c, T(0));
            } else {
              const T* src = x.data.data() +
                             ((t0 * h + static_cast<std::size_t>(sy)) * w +
                              static_cast<std::size_t>(sx)) *
                                 c;
              std::copy_n(src, c, cell);
            }
          }
        }
      }
    }
    return push("unfold3x3", std::move(out), {xv}, [tn, h, w, c](Tape& t, std::size_t id) {
      auto& node = t.nodes_[id];
      if (!t.wants_grad(node.inputs[0])) return;
      auto& gx = t.grad_buffer(node.inputs[0]);
      const auto& g = node.grad;
      const std::int64_t rows = static_cast<std::int64_t>(tn * h);
#pragma omp parallel for schedule(static) if (tn * h * w * c > 8192)
      for (std::int64_t th = 0; th < rows; ++th) {
        const std::size_t t0 = static_cast<std::size_t>(th) / h;
        const std::size_t hh = static_cast<std::size_t>(th) % h;
        for (std::size_t ww = 0; ww < w; ++ww) {
          T* dst = gx.data.data() + ((t0 * h + hh) * w + ww) * c;
          // gather the 9 output cells that copied this input position
          for (int ky = 0; ky < 3; ++ky) {
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(hh) - (ky - 1);
            if (oy < 0 || oy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(ww) - (kx - 1);
              if (ox < 0 || ox >= static_cast<std::ptrdiff_t>(w)) continue;
              const T* src = g.data.data() +
                             (((t0 * h + static_cast<std::size_t>(oy)) * w +
                               static_cast<std::size_t>(ox)) *
                                  9 +
                              (ky * 3 + kx)) *
                                 c;
              for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
            }
          }
        }
      }
    });
  }

  // 2x spatial mean-pool on [T,H,W,C]. A dimension equal to 1 passes through.
  Var avgpool2x2(Var xv) {
    const auto& x = value(xv);
    LSTRL_CHECK_DIM(x.rank() == 4, "avgpool2x2 expects [T,H,W,C], got " + shape_str(x.shape));
    const std::size_t tn = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3];
    LSTRL_CHECK_DIM((h % 2 == 0 || h == 1) && (w % 2 == 0 || w == 1),
                    "avgpool2x2 needs even (or 1) spatial dims, got " + shape_str(x.shape));
    const std::size_t ph = (h == 1) ? 1 : 2, pw = (w == 1) ? 1 : 2;
    const std::size_t oh = h / ph, ow = w / pw;
    DenseTensor<T> out({tn, oh, ow, c});
    const T inv = T(1) / static_cast<T>(ph * pw);
    const std::int64_t orows = static_cast<std::int64_t>(tn * oh);
#pragma omp parallel for schedule(static) if (tn * h * w * c > 8192)
    for (std::int64_t to = 0; to < orows; ++to) {
      const std::size_t t0 = static_cast<std::size_t>(to) / oh;
      const std::size_t ho = static_cast<std::size_t>(to) % oh;
      for (std::size_t wo = 0; wo < ow; ++wo) {
        T* dst = out.data.data() + ((t0 * oh + ho) * ow + wo) * c;
        for (std::size_t j = 0; j < c; ++j) {
          T sum = T(0);
          for (std::size_t dy = 0; dy < ph; ++dy)
            for (std::size_t dx = 0; dx < pw; ++dx)
              sum += x.data[((t0 * h + ho * ph + dy) * w + wo * pw + dx) * c + j];
          dst[j] = sum * inv;
        }
      }
    }
    return push("avgpool2x2", std::move(out), {xv},
                [tn, h, w, c, ph, pw, oh, ow](Tape& t, std::size_t id) {
                  auto& node = t.nodes_[id];
                  if (!t.wants_grad(node.inputs[0])) return;
                  auto& gx = t.grad_buffer(node.inputs[0]);
                  const auto& g = node.grad;
                  const T inv = T(1) / static_cast<T>(ph * pw);
                  const std::int64_t rows = static_cast<std::int64_t>(tn * h);
#pragma omp parallel for schedule(static) if (tn * h * w * c > 8192)
                  for (std::int64_t th = 0; th < rows; ++th) {
                    const std::size_t t0 = static_cast<std::size_t>(th) / h;
                    const std::size_t hh = static_cast<std::size_t>(th) % h;
                    for (std::size_t ww = 0; ww < w; ++ww) {
                      const std::size_t of = ((t0 * oh + hh / ph) * ow + ww / pw) * c;
                      T* dst = gx.data.data() + ((t0 * h + hh) * w + ww) * c;
                      for (std::size_t j = 0; j < c; ++j) dst[j] += g.data[of + j] * inv;
                    }
                  }
                });
  }

  // Node with a caller-provided backward; used for composite ops such as the
  // losses. The closure receives the tape and its own node id and should use
  // out_grad / input_value / accumulate_input_grad.
  Var custom(const char* op, DenseTensor<T> value, const std::vector<Var>& inputs,
             BackwardFn backward) {
    return push(op, std::move(value), inputs, std::move(backward));
  }

  // ---- closure-facing helpers ----

  const DenseTensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }
  const DenseTensor<T>& input_value(std::size_t id, std::size_t k) const {
    return node_value_by_id(nodes_[id].inputs[k]);
  }
  bool input_needs_grad(std::size_t id, std::size_t k) const {
    return wants_grad(nodes_[id].inputs[k]);
  }
  // Adds `g` into input k's gradient buffer (no-op when the input is not on a
  // parameter path).
  void accumulate_input_grad(std::size_t id, std::size_t k, const DenseTensor<T>& g) {
    const std::int32_t in = nodes_[id].inputs[k];
    if (!wants_grad(in)) return;
    auto& gx = grad_buffer(in);
    LSTRL_CHECK_DIM(gx.shape == g.shape, "gradient shape mismatch in custom backward");
    for (std::size_t i = 0; i < gx.size(); ++i) gx.data[i] += g.data[i];
  }

  // ---- backward ----

  // Accumulates d(loss)/d(param) into every contributing ParamTensor's grad,
  // then clears the tape. Node storage is released as the sweep passes, so
  // read any forward values you need before calling this.
  void backward(Var loss) {
    const std::size_t lid = check_id(loss);
    LSTRL_CHECK_CONTRACT(nodes_[lid].value.size() == 1,
                         "backward requires a scalar loss, got " +
                             shape_str(nodes_[lid].value.shape));
    nodes_[lid].grad = DenseTensor<T>(nodes_[lid].value.shape, T(1));
    nodes_[lid].has_grad = true;
    for (std::size_t id = lid + 1; id-- > 0;) {
      Node& node = nodes_[id];
      if (node.has_grad) {
        if (node.param != nullptr) {
          auto& pg = node.param->grad;
          for (std::size_t i = 0; i < pg.size(); ++i) pg.data[i] += node.grad.data[i];
        } else if (node.backward) {
          node.backward(*this, id);
        }
      }
      // consumers have already run; this node's storage is dead
      release(node);
    }
    reset();
  }

  void reset() {
    nodes_.clear();
    param_vars_.clear();
  }

 private:
  struct Node {
    const char* op = "";
    DenseTensor<T> value;
    DenseTensor<T> grad;
    bool has_grad = false;
    bool needs_grad = false;
    ParamTensor<T>* param = nullptr;
    std::vector<std::int32_t> inputs;
    BackwardFn backward;
  };

  std::size_t check_id(Var v) const {
    LSTRL_CHECK_CONTRACT(v.valid() && static_cast<std::size_t>(v.id) < nodes_.size(),
                         "invalid tape var");
    return static_cast<std::size_t>(v.id);
  }

  const DenseTensor<T>& node_value(std::size_t id) const { return nodes_[id].value; }
  const DenseTensor<T>& node_value_by_id(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)].value;
  }

  bool wants_grad(std::int32_t id) const {
    return nodes_[static_cast<std::size_t>(id)].needs_grad;
  }

  DenseTensor<T>& grad_buffer(std::int32_t id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.has_grad) {
      n.grad = DenseTensor<T>(n.value.shape);
      n.has_grad = true;
    }
    return n.grad;
  }

  void release(Node& n) {
    n.value.data = std::vector<T>();
    n.grad.data = std::vector<T>();
    n.backward = nullptr;
  }

  Var push(const char* op, DenseTensor<T> value, const std::vector<Var>& inputs,
           BackwardFn backward, bool leaf_needs_grad = false) {
    if (check_finite_ && !all_finite(value))
      throw NumericError(std::string("non-finite value produced by op '") + op + "'");
    Node node;
    node.op = op;
    node.value = std::move(value);
    node.backward = std::move(backward);
    node.needs_grad = leaf_needs_grad;
    node.inputs.reserve(inputs.size());
    for (Var v : inputs) {
      const std::size_t id = check_id(v);
      node.inputs.push_back(v.id);
      node.needs_grad = node.needs_grad || nodes_[id].needs_grad;
    }
    nodes_.push_back(std::move(node));
    Var out;
    out.id = static_cast<std::int32_t>(nodes_.size() - 1);
    return out;
  }

  std::vector<Node> nodes_;
  std::unordered_map<const ParamTensor<T>*, Var> param_vars_;
  bool check_finite_ = true;
};

}  // namespace lstrl
