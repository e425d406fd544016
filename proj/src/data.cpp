#include "apivr/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

namespace apivr {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<int> PairedDataset::train_indices() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(items.size()); ++i) {
    if (!items[i].test_split) out.push_back(i);
  }
  return out;
}

std::vector<int> PairedDataset::test_indices() const {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(items.size()); ++i) {
    if (items[i].test_split) out.push_back(i);
  }
  return out;
}

Matrix bag_adjacency(const Matrix& features) {
  return normalize_adjacency(cosine_similarity_graph(features));
}

PairedDataset generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.C < 2) throw ConfigError("generate_synthetic: C must be >= 2");
  if (cfg.k < 1 || cfg.clean_per_bag < 1 || cfg.clean_per_bag > cfg.k) {
    throw ConfigError("generate_synthetic: need 1 <= clean_per_bag <= k");
  }
  if (cfg.d1 < 1 || cfg.d2 < 1 || cfg.train_per_category < 0 ||
      cfg.test_per_category < 0 ||
      cfg.train_per_category + cfg.test_per_category < 1) {
    throw ConfigError("generate_synthetic: invalid sizes");
  }
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto normal_vec = [&](int n) {
    Vector v(n);
    for (int i = 0; i < n; ++i) v(i) = gauss(rng);
    return v;
  };

  // Category prototypes: random unit vectors in proposal space.
  std::vector<Vector> prototypes;
  prototypes.reserve(cfg.C);
  for (int c = 0; c < cfg.C; ++c) {
    Vector g = normal_vec(cfg.d1);
    prototypes.push_back(g / g.norm());
  }
  // Shared linear map from proposal space to image space.
  Matrix map(cfg.d2, cfg.d1);
  const double map_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d1));
  for (int i = 0; i < cfg.d2; ++i) {
    for (int j = 0; j < cfg.d1; ++j) map(i, j) = map_scale * gauss(rng);
  }

  PairedDataset ds;
  ds.C = cfg.C;
  ds.d1 = cfg.d1;
  ds.d2 = cfg.d2;
  ds.k = cfg.k;
  std::vector<int> positions(cfg.k);
  for (int c = 0; c < cfg.C; ++c) {
    const int total = cfg.train_per_category + cfg.test_per_category;
    for (int pair = 0; pair < total; ++pair) {
      PairedItem item;
      item.label = c;
      item.test_split = pair >= cfg.train_per_category;
      std::iota(positions.begin(), positions.end(), 0);
      std::shuffle(positions.begin(), positions.end(), rng);
      item.bag.features.resize(cfg.k, cfg.d1);
      item.bag.clean_flags.assign(cfg.k, 0);
      for (int slot = 0; slot < cfg.k; ++slot) {
        const int pos = positions[slot];
        if (slot < cfg.clean_per_bag) {
          item.bag.features.row(pos) =
              (prototypes[c] + cfg.noise_sigma * normal_vec(cfg.d1)).transpose();
          item.bag.clean_flags[pos] = 1;
        } else {
          item.bag.features.row(pos) =
              (cfg.background_scale * normal_vec(cfg.d1)).transpose();
        }
      }
      item.image = map * prototypes[c] + cfg.noise_sigma * normal_vec(cfg.d2);
      item.bag.sbar = bag_adjacency(item.bag.features);
      ds.items.push_back(std::move(item));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Container + manifest IO
// ---------------------------------------------------------------------------

namespace {

constexpr char kContainerMagic[4] = {'A', 'P', 'V', 'F'};
constexpr std::uint32_t kContainerVersion = 1;
constexpr int kManifestVersion = 1;

class FileCloser {
 public:
  explicit FileCloser(std::FILE* f) : f_(f) {}
  ~FileCloser() {
    if (f_) std::fclose(f_);
  }

 private:
  std::FILE* f_;
};

void write_container(const std::string& path, const Matrix& rows) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw FormatError("container: cannot open " + path + " for writing");
  FileCloser closer(f);
  const std::uint64_t count = static_cast<std::uint64_t>(rows.rows());
  const std::uint32_t dim = static_cast<std::uint32_t>(rows.cols());
  bool ok = std::fwrite(kContainerMagic, 1, 4, f) == 4 &&
            std::fwrite(&kContainerVersion, sizeof(kContainerVersion), 1, f) == 1 &&
            std::fwrite(&count, sizeof(count), 1, f) == 1 &&
            std::fwrite(&dim, sizeof(dim), 1, f) == 1;
  if (!ok) throw FormatError("container: header write failed for " + path);
  std::vector<double> row(rows.cols());
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    for (Eigen::Index j = 0; j < rows.cols(); ++j) row[j] = rows(i, j);
    if (std::fwrite(row.data(), sizeof(double), row.size(), f) != row.size()) {
      throw FormatError("container: row write failed for " + path);
    }
  }
}

Matrix read_container(const std::string& path, std::uint64_t expect_rows,
                      std::uint32_t expect_dim) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("container: cannot open " + path);
  FileCloser closer(f);
  char magic[4];
  std::uint32_t version = 0, dim = 0;
  std::uint64_t count = 0;
  if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, kContainerMagic, 4) != 0) {
    throw FormatError("container: bad magic in " + path);
  }
  if (std::fread(&version, sizeof(version), 1, f) != 1 || version != kContainerVersion) {
    throw FormatError("container: unsupported version in " + path);
  }
  if (std::fread(&count, sizeof(count), 1, f) != 1 ||
      std::fread(&dim, sizeof(dim), 1, f) != 1) {
    throw FormatError("container: truncated header in " + path);
  }
  if (count != expect_rows || dim != expect_dim) {
    throw FormatError("container: shape mismatch in " + path);
  }
  Matrix rows(static_cast<Eigen::Index>(count), static_cast<Eigen::Index>(dim));
  std::vector<double> row(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    if (std::fread(row.data(), sizeof(double), row.size(), f) != row.size()) {
      throw FormatError("container: truncated data in " + path);
    }
    for (std::uint32_t j = 0; j < dim; ++j) {
      rows(static_cast<Eigen::Index>(i), j) = row[j];
    }
  }
  if (std::fgetc(f) != EOF) throw FormatError("container: trailing bytes in " + path);
  if (!rows.allFinite()) throw FormatError("container: non-finite values in " + path);
  return rows;
}

std::string crc_hex(std::uint32_t crc) {
  char buf[9];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return buf;
}

void check_known_keys(const json& obj, std::initializer_list<const char*> known,
                      const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return it.key() == k;
        }) == known.end()) {
      throw FormatError("manifest: unknown key \"" + it.key() + "\" in " + where);
    }
  }
}

}  // namespace

std::uint32_t file_crc32(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw FormatError("crc32: cannot open " + path);
  FileCloser closer(f);
  uLong crc = crc32(0L, Z_NULL, 0);
  unsigned char buf[65536];
  size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), f)) > 0) {
    crc = crc32(crc, buf, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::string save_dataset(const PairedDataset& ds, const std::string& dir) {
  if (ds.items.empty()) throw DataError("save_dataset: empty dataset");
  fs::create_directories(dir);
  const int n = static_cast<int>(ds.items.size());

  Matrix videos(static_cast<Eigen::Index>(n) * ds.k, ds.d1);
  Matrix images(n, ds.d2);
  for (int i = 0; i < n; ++i) {
    videos.middleRows(static_cast<Eigen::Index>(i) * ds.k, ds.k) =
        ds.items[i].bag.features;
    images.row(i) = ds.items[i].image.transpose();
  }
  const std::string videos_path = (fs::path(dir) / "videos.apvf").string();
  const std::string images_path = (fs::path(dir) / "images.apvf").string();
  write_container(videos_path, videos);
  write_container(images_path, images);

  json manifest;
  manifest["format"] = "apivr-dataset";
  manifest["version"] = kManifestVersion;
  manifest["categories"] = ds.C;
  manifest["d1"] = ds.d1;
  manifest["d2"] = ds.d2;
  manifest["k"] = ds.k;
  manifest["containers"] = {
      {"videos", {{"path", "videos.apvf"}, {"crc32", crc_hex(file_crc32(videos_path))}}},
      {"images", {{"path", "images.apvf"}, {"crc32", crc_hex(file_crc32(images_path))}}},
  };
  json pairs = json::array();
  for (int i = 0; i < n; ++i) {
    const PairedItem& item = ds.items[i];
    json rec;
    rec["split"] = item.test_split ? "test" : "train";
    rec["label"] = item.label;
    rec["video_row"] = i * ds.k;
    rec["image_row"] = i;
    if (!item.bag.clean_flags.empty()) {
      std::string flags(ds.k, '0');
      for (int j = 0; j < ds.k; ++j) {
        if (item.bag.clean_flags[j]) flags[j] = '1';
      }
      rec["clean"] = flags;
    }
    pairs.push_back(std::move(rec));
  }
  manifest["pairs"] = std::move(pairs);

  const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw FormatError("save_dataset: cannot write " + manifest_path);
  out << manifest.dump(2) << "\n";
  out.close();
  if (!out) throw FormatError("save_dataset: write failed for " + manifest_path);
  return manifest_path;
}

PairedDataset load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw FormatError("load_dataset: cannot open " + manifest_path);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("load_dataset: invalid JSON in " + manifest_path + ": " + e.what());
  }
  check_known_keys(manifest,
                   {"format", "version", "categories", "d1", "d2", "k",
                    "containers", "pairs"},
                   manifest_path);
  try {
    if (manifest.at("format").get<std::string>() != "apivr-dataset") {
      throw FormatError("load_dataset: unrecognized format tag in " + manifest_path);
    }
    if (manifest.at("version").get<int>() != kManifestVersion) {
      throw FormatError("load_dataset: unsupported manifest version in " + manifest_path);
    }
    PairedDataset ds;
    ds.C = manifest.at("categories").get<int>();
    ds.d1 = manifest.at("d1").get<int>();
    ds.d2 = manifest.at("d2").get<int>();
    ds.k = manifest.at("k").get<int>();
    if (ds.C < 2 || ds.d1 < 1 || ds.d2 < 1 || ds.k < 1) {
      throw FormatError("load_dataset: invalid dimensions in " + manifest_path);
    }

    const fs::path base = fs::path(manifest_path).parent_path();
    const json& containers = manifest.at("containers");
    check_known_keys(containers, {"videos", "images"}, "containers");
    auto resolve = [&](const json& c, const char* which) {
      check_known_keys(c, {"path", "crc32"}, std::string("containers.") + which);
      const std::string rel = c.at("path").get<std::string>();
      const std::string path = (base / rel).string();
      if (!fs::exists(path)) {
        throw FormatError("load_dataset: missing container " + path);
      }
      const std::string recorded = c.at("crc32").get<std::string>();
      const std::string actual = crc_hex(file_crc32(path));
      if (recorded != actual) {
        throw FormatError("load_dataset: checksum mismatch for " + path +
                          " (manifest " + recorded + ", file " + actual + ")");
      }
      return path;
    };
    const std::string videos_path = resolve(containers.at("videos"), "videos");
    const std::string images_path = resolve(containers.at("images"), "images");

    const json& pairs = manifest.at("pairs");
    if (!pairs.is_array() || pairs.empty()) {
      throw FormatError("load_dataset: empty pair list in " + manifest_path);
    }
    const int n = static_cast<int>(pairs.size());
    Matrix videos = read_container(videos_path, static_cast<std::uint64_t>(n) * ds.k,
                                   static_cast<std::uint32_t>(ds.d1));
    Matrix images = read_container(images_path, static_cast<std::uint64_t>(n),
                                   static_cast<std::uint32_t>(ds.d2));

    ds.items.reserve(n);
    for (int i = 0; i < n; ++i) {
      const json& rec = pairs.at(i);
      check_known_keys(rec, {"split", "label", "video_row", "image_row", "clean"},
                       "pairs[" + std::to_string(i) + "]");
      PairedItem item;
      const std::string split = rec.at("split").get<std::string>();
      if (split != "train" && split != "test") {
        throw FormatError("load_dataset: bad split tag in pair " + std::to_string(i));
      }
      item.test_split = split == "test";
      item.label = rec.at("label").get<int>();
      if (item.label < 0 || item.label >= ds.C) {
        throw LabelOutOfRange("load_dataset: pair " + std::to_string(i) + " has label " +
                              std::to_string(item.label) + " outside [0, " +
                              std::to_string(ds.C) + ")");
      }
      const std::int64_t vrow = rec.at("video_row").get<std::int64_t>();
      const std::int64_t irow = rec.at("image_row").get<std::int64_t>();
      if (vrow < 0 || vrow + ds.k > videos.rows() || irow < 0 || irow >= images.rows()) {
        throw FormatError("load_dataset: row reference out of range in pair " +
                          std::to_string(i));
      }
      item.bag.features = videos.middleRows(vrow, ds.k);
      item.image = images.row(irow).transpose();
      if (rec.contains("clean")) {
        const std::string flags = rec.at("clean").get<std::string>();
        if (static_cast<int>(flags.size()) != ds.k) {
          throw FormatError("load_dataset: clean flag length mismatch in pair " +
                            std::to_string(i));
        }
        item.bag.clean_flags.resize(ds.k);
        for (int j = 0; j < ds.k; ++j) {
          if (flags[j] != '0' && flags[j] != '1') {
            throw FormatError("load_dataset: bad clean flag in pair " + std::to_string(i));
          }
          item.bag.clean_flags[j] = flags[j] == '1';
        }
      }
      item.bag.sbar = bag_adjacency(item.bag.features);
      ds.items.push_back(std::move(item));
    }
    return ds;
  } catch (const json::exception& e) {
    throw FormatError("load_dataset: malformed manifest " + manifest_path + ": " +
                      e.what());
  }
}

}  // namespace apivr
