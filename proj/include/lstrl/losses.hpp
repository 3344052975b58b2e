#pragma once

#include <cmath>
#include <vector>

#include "lstrl/tape.hpp"

namespace lstrl {

// Mean cross-entropy over logits [N, num_ids]; gradient flows to the logits.
template <typename T>
Var cross_entropy(Tape<T>& tape, Var logits, const std::vector<int>& labels) {
  const auto& x = tape.value(logits);
  LSTRL_CHECK_DIM(x.rank() == 2, "cross_entropy expects [N,K] logits");
  const std::size_t n = x.shape[0], k = x.shape[1];
  LSTRL_CHECK_DIM(labels.size() == n, "cross_entropy label count mismatch");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= k)
      throw DataError("cross_entropy label " + std::to_string(l) + " out of range [0," +
                      std::to_string(k) + ")");

  // stable log-softmax; keep the softmax for the backward closure
  DenseTensor<T> softmax({n, k});
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = x.data.data() + i * k;
    T mx = row[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(double(row[j]) - double(mx));
    const double lse = double(mx) + std::log(sum);
    loss += (lse - double(row[labels[i]])) / double(n);
    for (std::size_t j = 0; j < k; ++j)
      softmax.data[i * k + j] = static_cast<T>(std::exp(double(row[j]) - lse));
  }

  DenseTensor<T> out({1}, std::vector<T>{static_cast<T>(loss)});
  auto labels_copy = labels;
  return tape.custom(
      "cross_entropy", std::move(out), {logits},
      [n, k, softmax, labels_copy](Tape<T>& t, std::size_t id) {
        const T g = t.out_grad(id).data[0];
        DenseTensor<T> gx({n, k});
        const T inv = g / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < k; ++j) {
            T v = softmax.data[i * k + j];
            if (static_cast<std::size_t>(labels_copy[i]) == j) v -= T(1);
            gx.data[i * k + j] = v * inv;
          }
        t.accumulate_input_grad(id, 0, gx);
      });
}

// Batch-hard triplet loss on embeddings [N, C] with unnormalized Euclidean
// distances: per anchor the farthest same-label and nearest different-label
// samples form the triplet; hinge at the given margin, averaged over anchors.
template <typename T>
Var batch_hard_triplet(Tape<T>& tape, Var embeddings, const std::vector<int>& labels,
                       double margin) {
  const auto& e = tape.value(embeddings);
  LSTRL_CHECK_DIM(e.rank() == 2, "batch_hard_triplet expects [N,C] embeddings");
  const std::size_t n = e.shape[0], c = e.shape[1];
  LSTRL_CHECK_DIM(labels.size() == n, "batch_hard_triplet label count mismatch");
  bool has_two_labels = false;
  for (std::size_t i = 1; i < n; ++i) has_two_labels |= labels[i] != labels[0];
  LSTRL_CHECK_CONTRACT(has_two_labels,
                       "batch_hard_triplet needs at least two distinct labels");
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t same = 0;
    for (std::size_t j = 0; j < n; ++j) same += labels[j] == labels[i] ? 1 : 0;
    LSTRL_CHECK_CONTRACT(same >= 2,
                         "batch_hard_triplet needs every label at least twice");
  }

  std::vector<T> dist(n * n, T(0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double acc = 0;
      for (std::size_t q = 0; q < c; ++q) {
        const double d = double(e.data[i * c + q]) - double(e.data[j * c + q]);
        acc += d * d;
      }
      const T d = static_cast<T>(std::sqrt(acc));
      dist[i * n + j] = d;
      dist[j * n + i] = d;
    }

  std::vector<std::size_t> pos_idx(n), neg_idx(n);
  std::vector<T> hinge(n, T(0));
  double loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T dpos = T(-1), dneg = T(0);
    std::size_t pi = i, ni = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      if (labels[j] == labels[i]) {
        if (dist[i * n + j] > dpos) {
          dpos = dist[i * n + j];
          pi = j;
        }
      } else if (ni == n || dist[i * n + j] < dneg) {
        dneg = dist[i * n + j];
        ni = j;
      }
    }
    pos_idx[i] = pi;
    neg_idx[i] = ni;
    const T h = static_cast<T>(margin) + dpos - dneg;
    hinge[i] = h > T(0) ? h : T(0);
    loss += double(hinge[i]) / double(n);
  }

  DenseTensor<T> out({1}, std::vector<T>{static_cast<T>(loss)});
  return tape.custom(
      "batch_hard_triplet", std::move(out), {embeddings},
      [n, c, dist, pos_idx, neg_idx, hinge](Tape<T>& t, std::size_t id) {
        const T g = t.out_grad(id).data[0];
        const auto& e = t.input_value(id, 0);
        DenseTensor<T> gx({n, c});
        const T inv = g / static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          if (hinge[i] <= T(0)) continue;  // inactive hinge: zero gradient
          const std::size_t pi = pos_idx[i], ni = neg_idx[i];
          const T dp = dist[i * n + pi], dn = dist[i * n + ni];
          if (dp > T(0)) {
            const T s = inv / dp;
            for (std::size_t q = 0; q < c; ++q) {
              const T u = (e.data[i * c + q] - e.data[pi * c + q]) * s;
              gx.data[i * c + q] += u;
              gx.data[pi * c + q] -= u;
            }
          }
          if (dn > T(0)) {
            const T s = inv / dn;
            for (std::size_t q = 0; q < c; ++q) {
              const T v = (e.data[i * c + q] - e.data[ni * c + q]) * s;
              gx.data[i * c + q] -= v;
              gx.data[ni * c + q] += v;
            }
          }
        }
        t.accumulate_input_grad(id, 0, gx);
      });
}

}  // namespace lstrl
