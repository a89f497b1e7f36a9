#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sslbd/manifest.hpp"

namespace sslbd::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 gen(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("sslbd_" + tag + "_" + std::to_string(gen() % 1000000007ULL));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& p) const { return path_ / p; }

 private:
  std::filesystem::path path_;
};

// In-memory train manifest with `per_class` 32x32 entries per class.
inline DatasetManifest synthetic_manifest(const std::vector<int>& per_class, Split split = Split::kTrain,
                                          int size = 32) {
  DatasetManifest m;
  m.dataset_name = "fixture";
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    const std::string name = "class" + std::to_string(c);
    m.classes.push_back(name);
    for (int i = 0; i < per_class[c]; ++i) {
      ManifestEntry e;
      e.image_id = name + "_" + std::to_string(i);
      e.relative_path = to_string(split) + "/" + name + "/" + e.image_id + ".png";
      e.label = static_cast<int>(c);
      e.split = split;
      e.width = size;
      e.height = size;
      m.entries.push_back(e);
    }
  }
  return m;
}

}  // namespace sslbd::testing
