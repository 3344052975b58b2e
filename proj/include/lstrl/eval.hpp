#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <vector>

#include "lstrl/backbone.hpp"
#include "lstrl/data.hpp"

namespace lstrl {

enum class DistanceMetric { cosine, euclidean };

template <typename T>
struct RetrievalTable {
  DenseTensor<T> query_embeddings;    // [Q, C]
  DenseTensor<T> gallery_embeddings;  // [G, C]
  std::vector<int> query_ids, gallery_ids;
  std::vector<int> query_cams, gallery_cams;
};

struct EvalReport {
  std::map<int, double> rank_k;  // k -> accuracy, for k in {1, 5}
  double map_score = 0;
  std::size_t num_valid_queries = 0;
};

// Pairwise distances [Q, G]. Cosine distance is 1 - cosine similarity; pairs
// involving a zero-norm embedding are flagged and assigned distance 1.
template <typename T>
DenseTensor<T> distance_matrix(const DenseTensor<T>& q, const DenseTensor<T>& g,
                               DistanceMetric metric,
                               std::size_t* zero_norm_pairs = nullptr) {
  LSTRL_CHECK_DIM(q.rank() == 2 && g.rank() == 2 && q.shape[1] == g.shape[1],
                  "distance_matrix needs [Q,C] and [G,C] with matching C");
  const std::size_t qn = q.shape[0], gn = g.shape[0], c = q.shape[1];
  DenseTensor<T> out({qn, gn});
  std::size_t flagged = 0;
  std::vector<double> qnorm(qn), gnorm(gn);
  for (std::size_t i = 0; i < qn; ++i) {
    double acc = 0;
    for (std::size_t k = 0; k < c; ++k) acc += double(q.data[i * c + k]) * double(q.data[i * c + k]);
    qnorm[i] = std::sqrt(acc);
  }
  for (std::size_t j = 0; j < gn; ++j) {
    double acc = 0;
    for (std::size_t k = 0; k < c; ++k) acc += double(g.data[j * c + k]) * double(g.data[j * c + k]);
    gnorm[j] = std::sqrt(acc);
  }
  for (std::size_t i = 0; i < qn; ++i)
    for (std::size_t j = 0; j < gn; ++j) {
      double d;
      if (metric == DistanceMetric::euclidean) {
        double acc = 0;
        for (std::size_t k = 0; k < c; ++k) {
          const double diff = double(q.data[i * c + k]) - double(g.data[j * c + k]);
          acc += diff * diff;
        }
        d = std::sqrt(acc);
      } else {
        if (qnorm[i] == 0 || gnorm[j] == 0) {
          ++flagged;
          d = 1.0;
        } else {
          double dot = 0;
          for (std::size_t k = 0; k < c; ++k)
            dot += double(q.data[i * c + k]) * double(g.data[j * c + k]);
          d = 1.0 - dot / (qnorm[i] * gnorm[j]);
        }
      }
      out.data[i * gn + j] = static_cast<T>(d);
    }
  if (zero_norm_pairs != nullptr) *zero_norm_pairs = flagged;
  return out;
}

// CMC and mAP under the standard protocol: the gallery is sorted by ascending
// distance (ties broken by ascending gallery index), entries sharing both the
// query's identity and camera are discarded, queries without any remaining
// correct match are skipped and counted. AP averages precision at each
// correct position.
template <typename T>
EvalReport cmc_map(const RetrievalTable<T>& table, const DenseTensor<T>& dists) {
  const std::size_t qn = table.query_ids.size(), gn = table.gallery_ids.size();
  LSTRL_CHECK_DIM(dists.rank() == 2 && dists.shape[0] == qn && dists.shape[1] == gn,
                  "cmc_map distance matrix shape mismatch");
  LSTRL_CHECK_DIM(table.query_cams.size() == qn && table.gallery_cams.size() == gn,
                  "cmc_map camera label count mismatch");

  EvalReport report;
  report.rank_k[1] = 0;
  report.rank_k[5] = 0;
  double ap_sum = 0;
  for (std::size_t qi = 0; qi < qn; ++qi) {
    std::vector<std::size_t> order(gn);
    std::iota(order.begin(), order.end(), 0);
    const T* row = dists.data.data() + qi * gn;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return row[a] < row[b]; });

    std::size_t rank = 0, correct_seen = 0, first_correct = 0;
    double ap = 0;
    for (std::size_t j : order) {
      if (table.gallery_ids[j] == table.query_ids[qi] &&
          table.gallery_cams[j] == table.query_cams[qi])
        continue;  // protocol exclusion
      rank += 1;
      if (table.gallery_ids[j] == table.query_ids[qi]) {
        correct_seen += 1;
        if (correct_seen == 1) first_correct = rank;
        ap += double(correct_seen) / double(rank);
      }
    }
    if (correct_seen == 0) continue;  // skipped query
    report.num_valid_queries += 1;
    ap_sum += ap / double(correct_seen);
    if (first_correct <= 1) report.rank_k[1] += 1;
    if (first_correct <= 5) report.rank_k[5] += 1;
  }
  if (report.num_valid_queries == 0)
    throw DataError("retrieval protocol error: no valid queries");
  for (auto& [k, v] : report.rank_k) v /= double(report.num_valid_queries);
  report.map_score = ap_sum / double(report.num_valid_queries);
  return report;
}

// Deterministic per-tracklet embeddings of a split (eval-mode RRS), in
// dataset enumeration order. Clips are encoded independently, so the batch
// size does not affect the result.
template <typename T>
struct SplitEmbeddings {
  DenseTensor<T> embeddings;  // [N, C]
  std::vector<int> ids, cams;
};

template <typename T>
SplitEmbeddings<T> embed_split(Model<T>& model, const Dataset& split, FrameCache& cache,
                               std::size_t frames_per_clip, std::size_t batch_size = 8) {
  (void)batch_size;  // interface knob; clips are independent either way
  if (split.tracklets.empty()) throw DataError("embed_split on an empty split");
  SplitEmbeddings<T> out;
  const std::size_t c = model.config().embedding_dim();
  out.embeddings = DenseTensor<T>({split.tracklets.size(), c});
  Rng unused(0);
  for (std::size_t i = 0; i < split.tracklets.size(); ++i) {
    const Tracklet& tr = split.tracklets[i];
    auto idx =
        rrs_sample_indices(tr.frame_paths.size(), frames_per_clip, SampleMode::eval, unused);
    auto clip = load_clip(tr, idx, cache);
    Tape<T> tape;
    DenseTensor<T> clip_t;
    if constexpr (std::is_same_v<T, float>) {
      clip_t = std::move(clip);
    } else {
      clip_t = clip.template cast<T>();
    }
    auto res = model.encode_clip(tape, tape.input(clip_t));
    const auto& emb = tape.value(res.embedding);
    std::copy_n(emb.data.data(), c, out.embeddings.data.data() + i * c);
    out.ids.push_back(tr.identity_id);
    out.cams.push_back(tr.camera_id);
  }
  return out;
}

inline std::string format_eval_report(const EvalReport& r) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "R1=%.6f R5=%.6f mAP=%.6f valid=%zu",
                r.rank_k.at(1), r.rank_k.at(5), r.map_score, r.num_valid_queries);
  return buf;
}

}  // namespace lstrl
