#pragma once

// Manifest-driven dataset handling: CSV manifests, seeded splits, PPM
// decoding, bilinear resizing, training-split standardization statistics,
// and a batch stream that decodes images only when a batch is assembled.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <variant>
#include <vector>

#include "error.hpp"
#include "io.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace allnet {

// ---------------------------------------------------------------------------
// Manifest

/// Label 1 is ALL (the positive class), 0 healthy.
struct ManifestEntry {
  std::string path;
  int label = 0;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct Manifest {
  std::vector<ManifestEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  std::size_t positives() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.label == 1;
    return n;
  }
  std::size_t negatives() const { return size() - positives(); }
};

/// Parses `path,label` CSV text. `source` names the file in error messages.
inline Manifest parse_manifest(std::string_view text, const std::string& source = "manifest") {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    if (end == text.size()) break;
    start = end + 1;
  }
  if (!lines.empty() && lines.back().empty()) lines.pop_back();

  if (lines.empty() || lines[0] != "path,label") {
    throw DataError(source + ":1: header must be exactly 'path,label'");
  }
  Manifest m;
  std::unordered_map<std::string, std::size_t> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::string where = source + ":" + std::to_string(i + 1);
    const std::string_view line = lines[i];
    const std::size_t comma = line.rfind(',');
    if (comma == std::string_view::npos || comma == 0) throw DataError(where + ": expected 'path,label'");
    const std::string path(line.substr(0, comma));
    const std::string_view label = line.substr(comma + 1);
    if (path.front() == '/') throw DataError(where + ": path must be relative, got '" + path + "'");
    if (label != "0" && label != "1") {
      throw DataError(where + ": label must be 0 or 1, got '" + std::string(label) + "'");
    }
    if (auto [it, fresh] = seen.emplace(path, i + 1); !fresh) {
      throw DataError(where + ": duplicate path '" + path + "' (first on line " + std::to_string(it->second) + ")");
    }
    m.entries.push_back({path, label == "1" ? 1 : 0});
  }
  return m;
}

inline Manifest load_manifest(const std::filesystem::path& file) {
  return parse_manifest(io::read_text(file), file.string());
}

inline std::string format_manifest(const Manifest& m) {
  std::string out = "path,label\n";
  for (const auto& e : m.entries) {
    out += e.path;
    out += e.label ? ",1\n" : ",0\n";
  }
  return out;
}

inline void save_manifest(const std::filesystem::path& file, const Manifest& m) {
  io::write_file(file, format_manifest(m));
}

// ---------------------------------------------------------------------------
// Split

struct SplitSpec {
  std::array<double, 3> ratios{0.6, 0.2, 0.2};
  std::uint64_t seed = 0;

  void validate() const {
    double sum = 0;
    for (double r : ratios) {
      if (!(r >= 0)) throw UsageError("split ratios must be non-negative");
      sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw UsageError("split ratios must sum to 1, got " + std::to_string(sum));
  }
};

struct SplitResult {
  Manifest train;
  Manifest val;
  Manifest test;
};

/// Seeded shuffle, then contiguous slices of floor(n*r0) and floor(n*r1)
/// entries; the test split takes the remainder.
inline SplitResult split(const Manifest& manifest, const SplitSpec& spec) {
  spec.validate();
  if (manifest.empty()) throw DataError("cannot split an empty manifest");
  const std::size_t n = manifest.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(spec.seed);
  rng.shuffle(order);

  // The epsilon keeps products like 100 * 0.29 from flooring one short.
  auto count = [n](double r) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9)); };
  const std::size_t n_train = std::min(n, count(spec.ratios[0]));
  const std::size_t n_val = std::min(n - n_train, count(spec.ratios[1]));

  SplitResult out;
  for (std::size_t i = 0; i < n; ++i) {
    Manifest& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.entries.push_back(manifest.entries[order[i]]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Images

/// Decodes a binary 8-bit PPM (P6, maxval 255) into a (1, 3, H, W) tensor
/// with values in [0, 1].
inline Tensor decode_ppm(std::span<const std::uint8_t> bytes, const std::string& name = "image") {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> DataError { return DataError(name + ": " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
      value = value * 10 + (bytes[pos++] - '0');
      if (++digits > 9) throw fail(std::string(what) + " is too large");
    }
    if (digits == 0) throw fail(std::string("missing ") + what);
    return value;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw fail("not a binary PPM (bad magic)");
  pos = 2;
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (width == 0 || height == 0) throw fail("zero image dimension");
  if (maxval != 255) throw fail("maxval must be 255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw fail("truncated header");
  ++pos;
  const std::size_t plane = width * height;
  if (bytes.size() - pos < 3 * plane) {
    throw fail("truncated payload: " + std::to_string(bytes.size() - pos) + " of " + std::to_string(3 * plane) +
               " bytes");
  }
  Tensor img(Shape{1, 3, height, width});
  auto data = img.data();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) data[c * plane + i] = static_cast<float>(bytes[pos + 3 * i + c]) / 255.0f;
  }
  return img;
}

/// Inverse of decode_ppm; values are clamped to [0, 1] and rounded.
inline std::vector<std::uint8_t> encode_ppm(const Tensor& img) {
  const Shape s = img.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("encode_ppm needs a (1, 3, H, W) image, got " + s.str());
  const std::string header = "P6\n" + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const std::size_t plane = s.plane();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(img[c * plane + i], 0.0f, 1.0f);
      out.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0f)));
    }
  }
  return out;
}

/// Bilinear resize with half-pixel centres (align_corners = false); source
/// coordinates are clamped to the image.
inline Tensor resize(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  const Shape s = img.shape();
  if (out_h < 1 || out_w < 1) throw ShapeError("resize target must be at least 1x1");
  if (s.h == out_h && s.w == out_w) return img;
  Tensor out(Shape{s.n, s.c, out_h, out_w});
  const double sy = static_cast<double>(s.h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(s.w) / static_cast<double>(out_w);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t out_n, std::size_t in_n, double scale) {
    std::vector<Tap> t(out_n);
    for (std::size_t i = 0; i < out_n; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(in_n - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, in_n - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const auto ty = taps(out_h, s.h, sy);
  const auto tx = taps(out_w, s.w, sx);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < out_h; ++y) {
        for (std::size_t x = 0; x < out_w; ++x) {
          const double top = img.at(n, c, ty[y].lo, tx[x].lo) * (1 - tx[x].frac) + img.at(n, c, ty[y].lo, tx[x].hi) * tx[x].frac;
          const double bot = img.at(n, c, ty[y].hi, tx[x].lo) * (1 - tx[x].frac) + img.at(n, c, ty[y].hi, tx[x].hi) * tx[x].frac;
          out.at(n, c, y, x) = static_cast<float>(top * (1 - ty[y].frac) + bot * ty[y].frac);
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Image sources

/// A decoded image plus an optional token held for as long as the image
/// data is resident in a batch. Instrumented sources use the token to
/// observe residency.
struct LoadedImage {
  Tensor pixels;
  std::shared_ptr<const void> lease;
};

class ImageSource {
public:
  virtual ~ImageSource() = default;
  /// Decodes the image at `path` as (1, 3, H, W) in [0, 1]. Throws
  /// DataError naming the path on failure.
  virtual LoadedImage load(const std::string& path) const = 0;
};

/// Reads PPM files relative to a root directory.
class DirectoryImageSource : public ImageSource {
public:
  explicit DirectoryImageSource(std::filesystem::path root) : root_(std::move(root)) {}

  LoadedImage load(const std::string& path) const override {
    const auto full = root_ / path;
    std::vector<std::uint8_t> bytes;
    try {
      bytes = io::read_file(full);
    } catch (const IoError&) {
      throw DataError("cannot read image " + full.string());
    }
    return {decode_ppm(bytes, full.string()), nullptr};
  }

  const std::filesystem::path& root() const { return root_; }

private:
  std::filesystem::path root_;
};

/// Images held in memory, keyed by manifest path.
class MemoryImageSource : public ImageSource {
public:
  void add(std::string path, Tensor img) { images_[std::move(path)] = std::move(img); }

  Tensor& at(const std::string& path) { return images_.at(path); }

  LoadedImage load(const std::string& path) const override {
    auto it = images_.find(path);
    if (it == images_.end()) throw DataError("no image for " + path);
    return {it->second, nullptr};
  }

private:
  std::map<std::string, Tensor> images_;
};

// ---------------------------------------------------------------------------
// Standardization

struct StandardizationStats {
  std::array<double, 3> mean{0, 0, 0};
  std::array<double, 3> std{1, 1, 1};
  double epsilon = 1e-8;

  double divisor(std::size_t c) const { return std::max(std[c], epsilon); }

  friend bool operator==(const StandardizationStats&, const StandardizationStats&) = default;
};

/// key=value text, 9 significant digits.
inline std::string format_stats(const StandardizationStats& s) {
  static constexpr const char* channel[] = {"r", "g", "b"};
  std::string out;
  char buf[64];
  for (std::size_t c = 0; c < 3; ++c) {
    std::snprintf(buf, sizeof buf, "mean_%s=%.9g\n", channel[c], s.mean[c]);
    out += buf;
  }
  for (std::size_t c = 0; c < 3; ++c) {
    std::snprintf(buf, sizeof buf, "std_%s=%.9g\n", channel[c], s.std[c]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "epsilon=%.9g\n", s.epsilon);
  return out + buf;
}

inline StandardizationStats parse_stats(std::string_view text, const std::string& source = "stats") {
  std::map<std::string, double> kv;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(source + ":" + std::to_string(lineno) + ": expected key=value");
    try {
      std::size_t used = 0;
      const double v = std::stod(line.substr(eq + 1), &used);
      if (used != line.size() - eq - 1) throw std::invalid_argument("trailing characters");
      kv[line.substr(0, eq)] = v;
    } catch (const std::exception&) {
      throw DataError(source + ":" + std::to_string(lineno) + ": bad number in '" + line + "'");
    }
  }
  StandardizationStats s;
  static constexpr const char* keys[] = {"mean_r", "mean_g", "mean_b", "std_r", "std_g", "std_b", "epsilon"};
  for (const char* key : keys) {
    if (!kv.count(key)) throw DataError(source + ": missing key " + key);
  }
  for (std::size_t c = 0; c < 3; ++c) {
    s.mean[c] = kv.at(keys[c]);
    s.std[c] = kv.at(keys[3 + c]);
    if (s.std[c] < 0) throw DataError(source + ": negative standard deviation");
  }
  s.epsilon = kv.at("epsilon");
  if (kv.size() != 7) throw DataError(source + ": unknown keys present");
  return s;
}

/// Per-channel mean and population standard deviation over every pixel of
/// every training image after resizing to height x width. One streaming
/// pass: only one decoded image is alive at a time.
inline StandardizationStats compute_stats(const Manifest& train, const ImageSource& source, std::size_t height,
                                          std::size_t width) {
  if (train.empty()) throw DataError("cannot compute statistics of an empty training split");
  std::array<double, 3> sum{0, 0, 0};
  std::array<double, 3> sum_sq{0, 0, 0};
  double count = 0;
  for (const auto& e : train.entries) {
    const Tensor img = resize(source.load(e.path).pixels, height, width);
    if (img.shape().c != 3) throw DataError(e.path + ": expected 3 channels");
    const std::size_t plane = img.shape().plane();
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        const double v = img[c * plane + i];
        sum[c] += v;
        sum_sq[c] += v * v;
      }
    }
    count += static_cast<double>(plane);
  }
  StandardizationStats s;
  for (std::size_t c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / count;
    s.std[c] = std::sqrt(std::max(0.0, sum_sq[c] / count - s.mean[c] * s.mean[c]));
  }
  return s;
}

/// (x - mean[c]) / max(std[c], epsilon) per channel.
inline Tensor standardize(const Tensor& img, const StandardizationStats& s) {
  const Shape sh = img.shape();
  if (sh.c != 3) throw ShapeError("standardize expects 3 channels, got " + sh.str());
  Tensor out(sh);
  for (std::size_t n = 0; n < sh.n; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      const double mean = s.mean[c];
      const double div = s.divisor(c);
      const std::size_t base = img.index(n, c, 0, 0);
      for (std::size_t i = 0; i < sh.plane(); ++i)
        out[base + i] = static_cast<float>((static_cast<double>(img[base + i]) - mean) / div);
    }
  }
  return out;
}

inline Tensor destandardize(const Tensor& img, const StandardizationStats& s) {
  const Shape sh = img.shape();
  if (sh.c != 3) throw ShapeError("destandardize expects 3 channels, got " + sh.str());
  Tensor out(sh);
  for (std::size_t n = 0; n < sh.n; ++n) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t base = img.index(n, c, 0, 0);
      for (std::size_t i = 0; i < sh.plane(); ++i)
        out[base + i] = static_cast<float>(static_cast<double>(img[base + i]) * s.divisor(c) + s.mean[c]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Batch streaming

/// A manifest bound to its image source, statistics, and target size.
struct Dataset {
  Manifest manifest;
  const ImageSource* source = nullptr;
  StandardizationStats stats;
  std::size_t height = 64;
  std::size_t width = 64;
  bool prefetch = true;

  /// Decode, resize, standardize: the full per-image pipeline.
  LoadedImage prepare(const std::string& path) const {
    LoadedImage li = source->load(path);
    li.pixels = standardize(resize(li.pixels, height, width), stats);
    return li;
  }
};

struct Batch {
  Tensor images; ///< (B, 3, H, W), standardized
  std::vector<int> labels;
  std::vector<std::string> paths;
  std::vector<std::shared_ptr<const void>> leases;
};

/// Streams ceil(n / batch_size) batches. Images are decoded when their
/// batch is assembled, and at most one further batch is prepared ahead on a
/// worker thread, which starts only once the previous batch has been handed
/// over. Order is manifest order, or a permutation fixed by `shuffle_seed`.
class BatchIterator {
public:
  BatchIterator(const Dataset& data, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed = std::nullopt)
      : data_(&data), batch_size_(batch_size) {
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    if (!data.source) throw UsageError("dataset has no image source");
    order_.resize(data.manifest.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle_seed) {
      Rng rng(*shuffle_seed);
      rng.shuffle(order_);
    }
    batches_ = (order_.size() + batch_size - 1) / batch_size;
    if (data.prefetch && batches_ > 0) worker_ = std::thread([this] { run(); });
  }

  BatchIterator(const BatchIterator&) = delete;
  BatchIterator& operator=(const BatchIterator&) = delete;

  ~BatchIterator() {
    if (worker_.joinable()) {
      {
        std::lock_guard lock(mu_);
        stop_ = true;
      }
      cv_.notify_all();
      worker_.join();
    }
  }

  std::size_t batch_count() const { return batches_; }

  /// Next batch, or nullopt at the end of the epoch. Errors raised while
  /// decoding surface here.
  std::optional<Batch> next() {
    if (consumed_ >= batches_) return std::nullopt;
    if (!worker_.joinable()) {
      try {
        return build(consumed_++);
      } catch (...) {
        consumed_ = batches_;
        throw;
      }
    }
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return slot_.has_value(); });
    auto item = std::move(*slot_);
    slot_.reset();
    ++consumed_;
    lock.unlock();
    cv_.notify_all();
    if (auto* err = std::get_if<std::exception_ptr>(&item)) {
      consumed_ = batches_;
      std::rethrow_exception(*err);
    }
    return std::move(std::get<Batch>(item));
  }

private:
  Batch build(std::size_t b) const {
    const std::size_t begin = b * batch_size_;
    const std::size_t end = std::min(begin + batch_size_, order_.size());
    Batch batch{Tensor(Shape{end - begin, 3, data_->height, data_->width}), {}, {}, {}};
    for (std::size_t i = begin; i < end; ++i) {
      const ManifestEntry& e = data_->manifest.entries[order_[i]];
      LoadedImage li = data_->prepare(e.path);
      auto dst = batch.images.sample(i - begin);
      std::copy(li.pixels.data().begin(), li.pixels.data().end(), dst.begin());
      batch.labels.push_back(e.label);
      batch.paths.push_back(e.path);
      batch.leases.push_back(std::move(li.lease));
    }
    return batch;
  }

  void run() {
    for (std::size_t b = 0; b < batches_; ++b) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || !slot_.has_value(); });
        if (stop_) return;
      }
      std::variant<Batch, std::exception_ptr> item;
      try {
        item = build(b);
      } catch (...) {
        item = std::current_exception();
      }
      const bool failed = std::holds_alternative<std::exception_ptr>(item);
      {
        std::lock_guard lock(mu_);
        slot_ = std::move(item);
      }
      cv_.notify_all();
      if (failed) return;
    }
  }

  const Dataset* data_;
  std::size_t batch_size_;
  std::vector<std::size_t> order_;
  std::size_t batches_ = 0;
  std::size_t consumed_ = 0;

  std::thread worker_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::optional<std::variant<Batch, std::exception_ptr>> slot_;
  bool stop_ = false;
};

} // namespace allnet
