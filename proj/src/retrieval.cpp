#include "apivr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

namespace apivr {

WeightMode weight_mode(const LossConfig& cfg) {
  if (cfg.wo_gmil) return WeightMode::Uniform;
  if (cfg.wo_graph) return WeightMode::Mil;
  return WeightMode::Gmil;
}

namespace {

Vector embed_video(const PairedItem& item, const ModelState& model,
                   WeightMode mode) {
  const Matrix vbar = project_video(item.bag.features, model.proj);
  Vector w;
  switch (mode) {
    case WeightMode::Gmil:
      w = gmil_weights(vbar, item.bag.sbar, model.gmil);
      break;
    case WeightMode::Mil:
      w = mil_weights(vbar, model.gmil);
      break;
    case WeightMode::Uniform:
      w = Vector::Constant(vbar.cols(), 1.0 / static_cast<double>(vbar.cols()));
      break;
  }
  return aggregate(vbar, w);
}

// Chunked parallel map over [0, count); each worker writes only its own
// slots, so the result is identical for any thread count.
void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(threads);
  for (int t = 0; t < threads; ++t) {
    workers.emplace_back([&, t]() {
      for (int i = t; i < count; i += threads) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

}  // namespace

GalleryIndex embed_gallery(const PairedDataset& ds,
                           const std::vector<int>& video_indices,
                           const ModelState& model, WeightMode mode,
                           int threads) {
  if (video_indices.empty()) throw EmptyGallery("embed_gallery: no videos");
  const ModelDims dims = dims_of(model);
  GalleryIndex index;
  const int g = static_cast<int>(video_indices.size());
  index.embeddings.resize(dims.r, g);
  index.labels.resize(g);
  index.ids.resize(g);
  parallel_for(g, threads, [&](int i) {
    const PairedItem& item = ds.items.at(video_indices[i]);
    index.embeddings.col(i) = embed_video(item, model, mode);
    index.labels[i] = item.label;
    index.ids[i] = i;
  });
  return index;
}

RankedResult rank_embedded(const Vector& query_embedding, const GalleryIndex& index,
                           int query_label, int query_id) {
  const int g = static_cast<int>(index.ids.size());
  if (g == 0) throw EmptyGallery("rank_embedded: empty gallery");
  if (query_embedding.size() != index.embeddings.rows()) {
    throw DimMismatch("rank_embedded: embedding dim mismatch");
  }
  std::vector<int> order(g);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> dist(g);
  for (int j = 0; j < g; ++j) {
    dist[j] = (query_embedding - index.embeddings.col(j)).squaredNorm();
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (dist[a] != dist[b]) return dist[a] < dist[b];
    return index.ids[a] < index.ids[b];
  });
  RankedResult result;
  result.query_id = query_id;
  result.gallery_ids.reserve(g);
  result.distances.reserve(g);
  result.relevant.reserve(g);
  for (int pos : order) {
    result.gallery_ids.push_back(index.ids[pos]);
    result.distances.push_back(dist[pos]);
    result.relevant.push_back(index.labels[pos] == query_label ? 1 : 0);
  }
  return result;
}

RankedResult rank_query(const Vector& image, const GalleryIndex& index,
                        const ModelState& model, int query_label, int query_id) {
  return rank_embedded(project_image(image, model.proj), index, query_label,
                       query_id);
}

double average_precision_at_k(const RankedResult& result, int K) {
  if (K < 1) throw ConfigError("average_precision_at_k: K must be >= 1");
  const int g = static_cast<int>(result.relevant.size());
  long total_relevant = 0;
  for (std::uint8_t r : result.relevant) total_relevant += r;
  if (total_relevant == 0) {
    throw NoRelevantItems("average_precision_at_k: query " +
                          std::to_string(result.query_id) +
                          " has no relevant gallery item");
  }
  const int upper = std::min(K, g);
  long hits = 0;
  double sum = 0.0;
  for (int j = 0; j < upper; ++j) {
    if (result.relevant[j]) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(j + 1);
    }
  }
  const double denom = static_cast<double>(
      std::min<long>(total_relevant, static_cast<long>(K)));
  return sum / denom;
}

double map_at_k(const std::vector<RankedResult>& results, int K) {
  if (results.empty()) throw DataError("map_at_k: no queries");
  double sum = 0.0;
  for (const RankedResult& r : results) sum += average_precision_at_k(r, K);
  return sum / static_cast<double>(results.size());
}

std::vector<RankedResult> rank_test_queries(const PairedDataset& ds,
                                            const ModelState& model,
                                            WeightMode mode, int threads) {
  const std::vector<int> test_idx = ds.test_indices();
  if (test_idx.empty()) throw DataError("rank_test_queries: dataset has no test split");
  const GalleryIndex index = embed_gallery(ds, test_idx, model, mode, threads);
  std::vector<RankedResult> results(test_idx.size());
  parallel_for(static_cast<int>(test_idx.size()), threads, [&](int i) {
    const PairedItem& item = ds.items[test_idx[i]];
    results[i] = rank_query(item.image, index, model, item.label, i);
  });
  return results;
}

double evaluate_test_map(const PairedDataset& ds, const ModelState& model,
                         WeightMode mode, int K, int threads) {
  return map_at_k(rank_test_queries(ds, model, mode, threads), K);
}

std::string format_results(const std::vector<RankedResult>& results, int K) {
  std::string out = "# query_id ap@" + std::to_string(K) +
                    " gallery_id:squared_distance...\n";
  char buf[64];
  for (const RankedResult& r : results) {
    out += std::to_string(r.query_id);
    std::snprintf(buf, sizeof(buf), " %.17g", average_precision_at_k(r, K));
    out += buf;
    for (size_t j = 0; j < r.gallery_ids.size(); ++j) {
      std::snprintf(buf, sizeof(buf), " %d:%.17g", r.gallery_ids[j], r.distances[j]);
      out += buf;
    }
    out += '\n';
  }
  return out;
}

}  // namespace apivr
