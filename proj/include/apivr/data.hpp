#ifndef APIVR_DATA_HPP_
#define APIVR_DATA_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "apivr/numerics.hpp"

namespace apivr {

// One video: k proposal feature rows plus the normalized similarity graph
// computed from the raw features at ingestion time. `clean_flags` is present
// for synthetic data only and marks which proposals carry the category signal.
struct ProposalBag {
  Matrix features;  // k x d1
  Matrix sbar;      // k x k
  std::vector<std::uint8_t> clean_flags;  // empty, or size k with 0/1
};

struct PairedItem {
  ProposalBag bag;
  Vector image;  // d2
  int label = 0;
  bool test_split = false;
};

struct PairedDataset {
  int C = 0, d1 = 0, d2 = 0, k = 0;
  std::vector<PairedItem> items;

  std::vector<int> train_indices() const;
  std::vector<int> test_indices() const;
};

// Desk-scale surrogate data: per category a random unit prototype in proposal
// space; clean proposals are noisy copies of the prototype, noisy proposals
// are category-independent background, and the paired image is a fixed random
// linear map of the prototype plus noise.
struct SyntheticConfig {
  int C = 5;
  int train_per_category = 40;
  int test_per_category = 10;
  int k = 8;
  int clean_per_bag = 3;
  int d1 = 32;
  int d2 = 16;
  double noise_sigma = 0.05;
  double background_scale = 1.0;
  std::uint64_t seed = 0;
};

PairedDataset generate_synthetic(const SyntheticConfig& cfg);

// Computes S-bar for one bag from raw features (cosine graph, clamped at 0,
// then degree-normalized with a self loop).
Matrix bag_adjacency(const Matrix& features);

// On-disk layout: a JSON manifest plus two feature containers. A container
// is "APVF" magic, u32 version, u64 row count, u32 dim, then row-major
// float64 rows in native byte order. The manifest records container paths
// relative to itself with CRC32 checksums, per-pair rows/labels/split tags,
// and optional clean flags. Round trips are bit-exact and re-saving an
// identical dataset produces identical bytes.
std::string save_dataset(const PairedDataset& ds, const std::string& dir);
PairedDataset load_dataset(const std::string& manifest_path);

std::uint32_t file_crc32(const std::string& path);

}  // namespace apivr

#endif  // APIVR_DATA_HPP_
