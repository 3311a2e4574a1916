#pragma once

// Shared test scaffolding: temporary directories, random tensors, synthetic
// datasets, finite differences and golden files.

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <unistd.h>

#include "allnet/allnet.hpp"

namespace fixture {

namespace fs = std::filesystem;
using namespace allnet;

/// Unique directory under the system temp dir, removed on destruction.
class TempDir {
public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("allnet-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

private:
  fs::path path_;
};

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(s);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(lo, hi));
  return t;
}

/// Values that are pairwise at least `gap` apart (a shuffled ramp), so max
/// pooling has no near-ties within a finite-difference step.
inline Tensor separated_tensor(Shape s, Rng& rng, double gap = 0.01) {
  std::vector<float> v(s.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>((static_cast<double>(i) - v.size() / 2.0) * gap);
  rng.shuffle(v);
  return Tensor(s, std::move(v));
}

inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

/// Central difference of `loss` with respect to `v`.
inline double central(const std::function<double()>& loss, double& v, double h = 1e-3) {
  const double saved = v;
  v = saved + h;
  const double up = loss();
  v = saved - h;
  const double down = loss();
  v = saved;
  return (up - down) / (2 * h);
}

template <typename T> double sum(const BasicTensor<T>& t) {
  double s = 0;
  for (T v : t.data()) s += static_cast<double>(v);
  return s;
}

/// One 3-channel image whose channel means depend on the label: channels 0
/// and 2 shift by +0.25 for label 1 and -0.25 for label 0, channel 1 the
/// other way, plus uniform noise of +-0.2.
inline Tensor separable_image(int label, std::size_t side, Rng& rng) {
  Tensor img(Shape{1, 3, side, side});
  const std::size_t plane = side * side;
  for (std::size_t c = 0; c < 3; ++c) {
    const double sign = (c == 1 ? -1.0 : 1.0) * (label == 1 ? 1.0 : -1.0);
    for (std::size_t i = 0; i < plane; ++i) {
      img[c * plane + i] = static_cast<float>(0.5 + 0.25 * sign + rng.uniform(-0.2, 0.2));
    }
  }
  return img;
}

struct MemorySet {
  std::shared_ptr<MemoryImageSource> source = std::make_shared<MemoryImageSource>();
  Manifest manifest;
};

/// `n` images with alternating labels, held in memory.
inline MemorySet separable_set(std::size_t n, std::size_t side, std::uint64_t seed, const std::string& prefix = "img") {
  MemorySet s;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const std::string path = prefix + std::to_string(i) + ".ppm";
    s.source->add(path, separable_image(label, side, rng));
    s.manifest.entries.push_back({path, label});
  }
  return s;
}

/// Rounds pixel values to what an 8-bit PPM can hold.
inline Tensor quantize(const Tensor& img) {
  Tensor out = img;
  for (float& v : out.data()) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)) / 255.0f;
  return out;
}

/// Writes the separable set as PPM files plus manifest.csv under `dir`.
inline fs::path write_ppm_set(const fs::path& dir, std::size_t n, std::size_t side, std::uint64_t seed) {
  fs::create_directories(dir / "images");
  Manifest m;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    const std::string rel = "images/cell" + std::to_string(i) + ".ppm";
    io::write_file(dir / rel, encode_ppm(quantize(separable_image(label, side, rng))));
    m.entries.push_back({rel, label});
  }
  save_manifest(dir / "manifest.csv", m);
  return dir / "manifest.csv";
}

/// Image source that counts how many decoded images are alive at once. Each
/// load hands out a lease; the count drops when the last copy is released.
class CountingSource : public ImageSource {
public:
  explicit CountingSource(const ImageSource& inner) : inner_(inner) {}

  LoadedImage load(const std::string& path) const override {
    LoadedImage li = inner_.load(path);
    const int now = ++live_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    ++loads_;
    li.lease = std::shared_ptr<const void>(nullptr, [this](const void*) { --live_; });
    return li;
  }

  int live() const { return live_; }
  int peak() const { return peak_; }
  int loads() const { return loads_; }

private:
  const ImageSource& inner_;
  mutable std::atomic<int> live_{0};
  mutable std::atomic<int> peak_{0};
  mutable std::atomic<int> loads_{0};
};

/// Compares `actual` with the golden file; regenerates it instead when
/// ALLNET_UPDATE_GOLDEN is set. Returns an empty string on match.
inline std::string golden_mismatch(const std::string& name, const std::string& actual) {
  const fs::path file = fs::path(ALLNET_GOLDEN_DIR) / name;
  if (std::getenv("ALLNET_UPDATE_GOLDEN")) {
    io::write_file(file, actual);
    return "";
  }
  if (!fs::exists(file)) return "missing golden file " + file.string();
  const std::string expected = io::read_text(file);
  if (expected == actual) return "";
  return "golden mismatch for " + file.string() + "\n--- expected\n" + expected + "--- actual\n" + actual;
}

} // namespace fixture
