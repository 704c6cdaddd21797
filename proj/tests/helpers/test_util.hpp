#pragma once

#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "eggscan/image.hpp"

namespace eggscan::testing {

// Fresh directory under the system temp root, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    namespace fs = std::filesystem;
    const fs::path base = fs::temp_directory_path();
    for (int i = 0; i < 10000; ++i) {
      fs::path candidate =
          base / (tag + "-" + std::to_string(::getpid()) + "-" +
                  std::to_string(counter_++));
      std::error_code ec;
      if (fs::create_directory(candidate, ec)) {
        path_ = candidate;
        return;
      }
    }
    throw std::runtime_error("cannot allocate temp dir");
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path_.string() : (path_ / rel).string();
  }

 private:
  static inline int counter_ = 0;
  std::filesystem::path path_;
};

inline ImageBuffer constant_image(int w, int h, int channels,
                                  std::uint8_t value) {
  ImageBuffer img(w, h, channels);
  std::fill(img.pixels.begin(), img.pixels.end(), value);
  return img;
}

}  // namespace eggscan::testing
