#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace acaptcha {

enum class Valence : std::uint8_t { pleasing, displeasing };

constexpr Valence opposite(Valence v) noexcept {
  return v == Valence::pleasing ? Valence::displeasing : Valence::pleasing;
}

std::string_view to_string(Valence v) noexcept;
std::optional<Valence> parse_valence(std::string_view s) noexcept;

struct ImageRecord {
  std::string id;
  std::string category;
  Valence valence = Valence::pleasing;
  std::filesystem::path bytes_ref;
  std::string source_url;
  std::string license;
};

/// Pool size parameters: m images in total, p pleasing, d displeasing.
struct PoolStats {
  std::uint64_t m = 0;
  std::uint64_t p = 0;
  std::uint64_t d = 0;

  friend bool operator==(const PoolStats&, const PoolStats&) = default;
};

struct TransformSeed {
  std::uint64_t seed = 0;

  friend bool operator==(const TransformSeed&, const TransformSeed&) = default;
};

using Rng = std::mt19937_64;

class ManifestError : public std::runtime_error {
 public:
  enum class Kind { parse, missing_image, duplicate_id };

  ManifestError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class InsufficientPoolError : public std::runtime_error {
 public:
  InsufficientPoolError(std::size_t requested, std::size_t available, const std::string& what)
      : std::runtime_error(what), requested_(requested), available_(available) {}

  std::size_t requested() const noexcept { return requested_; }
  std::size_t available() const noexcept { return available_; }

 private:
  std::size_t requested_;
  std::size_t available_;
};

/// Immutable view of one ingested pool. Safe for concurrent readers.
class PoolSnapshot {
 public:
  PoolSnapshot() = default;

  /// Builds a snapshot from records already in memory. Throws
  /// ManifestError(duplicate_id) on repeated ids; image files are not touched.
  static PoolSnapshot from_records(std::vector<ImageRecord> records);

  const PoolStats& stats() const noexcept { return stats_; }
  std::span<const ImageRecord> records() const noexcept { return records_; }
  const ImageRecord* find(std::string_view id) const;

  /// Categories in first-seen manifest order.
  const std::vector<std::string>& categories() const noexcept { return categories_; }

  /// Number of images with the given valence, optionally restricted to one category.
  std::size_t count(Valence valence, const std::optional<std::string>& category = std::nullopt) const;

  /// Uniform sample of `count` distinct records without replacement.
  /// The returned order is itself uniformly random.
  std::vector<ImageRecord> sample_images(Valence valence,
                                         const std::optional<std::string>& category,
                                         std::size_t count, Rng& rng) const;

 private:
  const std::vector<std::size_t>* bucket(Valence valence,
                                         const std::optional<std::string>& category) const;

  std::vector<ImageRecord> records_;
  PoolStats stats_;
  std::vector<std::string> categories_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::vector<std::size_t> by_valence_[2];
  std::unordered_map<std::string, std::vector<std::size_t>> by_category_[2];
};

/// The live pool. Readers take a snapshot; ingestion builds a complete new
/// snapshot and swaps it in, so readers never observe a half-loaded pool.
class ImagePool {
 public:
  ImagePool();

  /// Parses the manifest, checks that every image exists and decodes, and
  /// replaces the current contents. On error the previous contents remain.
  PoolStats ingest_manifest(const std::filesystem::path& manifest_path);

  void replace(PoolSnapshot snapshot);

  std::shared_ptr<const PoolSnapshot> snapshot() const;
  PoolStats stats() const { return snapshot()->stats(); }

  std::vector<ImageRecord> sample_images(Valence valence,
                                         const std::optional<std::string>& category,
                                         std::size_t count, Rng& rng) const {
    return snapshot()->sample_images(valence, category, count, rng);
  }

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const PoolSnapshot> current_;
};

/// A pool of placeholder records (ids "img-000000"...) with no image bytes,
/// pleasing first. For simulations that never render images.
PoolSnapshot synthetic_snapshot(std::uint64_t pleasing, std::uint64_t displeasing,
                                const std::string& category = "synthetic");

/// Reads and validates a manifest without installing it anywhere.
PoolSnapshot load_manifest(const std::filesystem::path& manifest_path);

/// floor(m / n): how many puzzles of n images can be drawn with pairwise
/// disjoint image sets. n must be at least 1.
std::uint64_t max_disjoint_puzzles(const PoolStats& stats, std::uint64_t n);

/// Side length of every served image.
inline constexpr int kCanonicalSize = 256;

/// Seeded anti-cataloguing transform: bounded crop (at most 6% per edge),
/// bilinear resize to 256x256 with a seeded horizontal sub-pixel phase,
/// brightness and contrast jitter within +/-8%, then PNG re-encode.
/// Output depends only on (image_bytes, seed). Throws DecodeError.
std::vector<std::uint8_t> transform(std::span<const std::uint8_t> image_bytes, TransformSeed seed);

}  // namespace acaptcha
