#ifndef APIVR_RETRIEVAL_HPP_
#define APIVR_RETRIEVAL_HPP_

#include <string>
#include <vector>

#include "apivr/data.hpp"
#include "apivr/losses.hpp"
#include "apivr/model.hpp"

namespace apivr {

enum class WeightMode { Gmil, Mil, Uniform };

WeightMode weight_mode(const LossConfig& cfg);

// Test-time gallery: each video embedded from its intact bag (truncation is
// a training-loss device only) with the configured attention mode.
struct GalleryIndex {
  Matrix embeddings;        // r x G
  std::vector<int> labels;  // per entry
  std::vector<int> ids;     // 0..G-1, the deterministic tie-break key
};

GalleryIndex embed_gallery(const PairedDataset& ds,
                           const std::vector<int>& video_indices,
                           const ModelState& model, WeightMode mode,
                           int threads = 1);

struct RankedResult {
  int query_id = 0;
  std::vector<int> gallery_ids;         // ascending squared l2 distance
  std::vector<double> distances;        // non-decreasing
  std::vector<std::uint8_t> relevant;   // label match per rank
};

// Rank the whole gallery for an already-projected query.
RankedResult rank_embedded(const Vector& query_embedding, const GalleryIndex& index,
                           int query_label, int query_id);
// Projects a raw image feature first.
RankedResult rank_query(const Vector& image, const GalleryIndex& index,
                        const ModelState& model, int query_label, int query_id);

// AP@K with 1/min(R, K) normalization, R the number of relevant gallery
// items; mAP is the mean over queries. Throws NoRelevantItems for a query
// with no relevant gallery entry.
double average_precision_at_k(const RankedResult& result, int K);
double map_at_k(const std::vector<RankedResult>& results, int K);

// Queries = test images against the gallery of test videos.
std::vector<RankedResult> rank_test_queries(const PairedDataset& ds,
                                            const ModelState& model,
                                            WeightMode mode, int threads = 1);
double evaluate_test_map(const PairedDataset& ds, const ModelState& model,
                         WeightMode mode, int K, int threads = 1);

// One line per query: id, AP@K, then ranked gallery_id:distance pairs.
std::string format_results(const std::vector<RankedResult>& results, int K);

}  // namespace apivr

#endif  // APIVR_RETRIEVAL_HPP_
