#include "acaptcha/image_pool.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "acaptcha/raster.hpp"

namespace acaptcha {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(Valence v) noexcept {
  return v == Valence::pleasing ? "pleasing" : "displeasing";
}

std::optional<Valence> parse_valence(std::string_view s) noexcept {
  if (s == "pleasing") return Valence::pleasing;
  if (s == "displeasing") return Valence::displeasing;
  return std::nullopt;
}

PoolSnapshot PoolSnapshot::from_records(std::vector<ImageRecord> records) {
  PoolSnapshot snap;
  snap.records_ = std::move(records);
  for (std::size_t i = 0; i < snap.records_.size(); ++i) {
    const ImageRecord& r = snap.records_[i];
    if (!snap.by_id_.emplace(r.id, i).second) {
      throw ManifestError(ManifestError::Kind::duplicate_id, "duplicate image id '" + r.id + "'");
    }
    const auto v = static_cast<std::size_t>(r.valence);
    snap.by_valence_[v].push_back(i);
    auto& cat = snap.by_category_[v][r.category];
    if (cat.empty() && !snap.by_category_[1 - v].contains(r.category)) {
      snap.categories_.push_back(r.category);
    }
    cat.push_back(i);
  }
  snap.stats_.p = snap.by_valence_[static_cast<std::size_t>(Valence::pleasing)].size();
  snap.stats_.d = snap.by_valence_[static_cast<std::size_t>(Valence::displeasing)].size();
  snap.stats_.m = snap.records_.size();
  return snap;
}

const ImageRecord* PoolSnapshot::find(std::string_view id) const {
  const auto it = by_id_.find(std::string(id));
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const std::vector<std::size_t>* PoolSnapshot::bucket(Valence valence,
                                                     const std::optional<std::string>& category) const {
  const auto v = static_cast<std::size_t>(valence);
  if (!category) return &by_valence_[v];
  const auto it = by_category_[v].find(*category);
  return it == by_category_[v].end() ? nullptr : &it->second;
}

std::size_t PoolSnapshot::count(Valence valence, const std::optional<std::string>& category) const {
  const auto* b = bucket(valence, category);
  return b ? b->size() : 0;
}

std::vector<ImageRecord> PoolSnapshot::sample_images(Valence valence,
                                                     const std::optional<std::string>& category,
                                                     std::size_t count, Rng& rng) const {
  const auto* b = bucket(valence, category);
  const std::size_t available = b ? b->size() : 0;
  if (count == 0) throw std::invalid_argument("sample_images: count must be positive");
  if (available < count) {
    std::string what = "requested " + std::to_string(count) + " " + std::string(to_string(valence)) +
                       " images";
    if (category) what += " in category '" + *category + "'";
    what += ", pool has " + std::to_string(available);
    throw InsufficientPoolError(count, available, what);
  }

  // Floyd's algorithm: count distinct positions in O(count) draws.
  std::vector<std::size_t> picked;
  picked.reserve(count);
  std::unordered_set<std::size_t> seen;
  for (std::size_t j = available - count; j < available; ++j) {
    const std::size_t t = std::uniform_int_distribution<std::size_t>(0, j)(rng);
    if (seen.insert(t).second) {
      picked.push_back(t);
    } else {
      seen.insert(j);
      picked.push_back(j);
    }
  }
  std::shuffle(picked.begin(), picked.end(), rng);

  std::vector<ImageRecord> out;
  out.reserve(count);
  for (std::size_t pos : picked) out.push_back(records_[(*b)[pos]]);
  return out;
}

namespace {

std::string required_string(const json& entry, const char* key, std::size_t index) {
  const auto it = entry.find(key);
  if (it == entry.end() || !it->is_string()) {
    throw ManifestError(ManifestError::Kind::parse, "images[" + std::to_string(index) +
                                                        "]: missing string field '" + key + "'");
  }
  return it->get<std::string>();
}

}  // namespace

PoolSnapshot load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw ManifestError(ManifestError::Kind::parse, "cannot open manifest " + manifest_path.string());
  }
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ManifestError(ManifestError::Kind::parse, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ManifestError(ManifestError::Kind::parse, "manifest must be a JSON object");
  const auto version = doc.find("version");
  if (version == doc.end() || !version->is_number_integer() || version->get<int>() != 1) {
    throw ManifestError(ManifestError::Kind::parse, "manifest version must be 1");
  }
  const auto images = doc.find("images");
  if (images == doc.end() || !images->is_array()) {
    throw ManifestError(ManifestError::Kind::parse, "manifest 'images' must be an array");
  }

  const fs::path base = manifest_path.parent_path();
  std::vector<ImageRecord> records;
  records.reserve(images->size());
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < images->size(); ++i) {
    const json& entry = (*images)[i];
    if (!entry.is_object()) {
      throw ManifestError(ManifestError::Kind::parse, "images[" + std::to_string(i) + "] is not an object");
    }
    ImageRecord r;
    r.id = required_string(entry, "id", i);
    r.category = required_string(entry, "category", i);
    const std::string valence = required_string(entry, "valence", i);
    const auto parsed = parse_valence(valence);
    if (!parsed) {
      throw ManifestError(ManifestError::Kind::parse,
                          "images[" + std::to_string(i) + "]: valence '" + valence + "' is not pleasing|displeasing");
    }
    r.valence = *parsed;
    r.source_url = required_string(entry, "source_url", i);
    r.license = required_string(entry, "license", i);
    r.bytes_ref = base / required_string(entry, "path", i);

    if (!ids.insert(r.id).second) {
      throw ManifestError(ManifestError::Kind::duplicate_id, "duplicate image id '" + r.id + "'");
    }
    std::error_code ec;
    if (!fs::is_regular_file(r.bytes_ref, ec)) {
      throw ManifestError(ManifestError::Kind::missing_image,
                          "image '" + r.id + "': no file at " + r.bytes_ref.string());
    }
    try {
      decode_image(read_file(r.bytes_ref));
    } catch (const std::exception& e) {
      throw ManifestError(ManifestError::Kind::missing_image,
                          "image '" + r.id + "' does not decode: " + e.what());
    }
    records.push_back(std::move(r));
  }
  return PoolSnapshot::from_records(std::move(records));
}

ImagePool::ImagePool() : current_(std::make_shared<const PoolSnapshot>()) {}

PoolStats ImagePool::ingest_manifest(const fs::path& manifest_path) {
  auto next = std::make_shared<const PoolSnapshot>(load_manifest(manifest_path));
  const PoolStats stats = next->stats();
  std::lock_guard lock(mu_);
  current_ = std::move(next);
  return stats;
}

void ImagePool::replace(PoolSnapshot snapshot) {
  auto next = std::make_shared<const PoolSnapshot>(std::move(snapshot));
  std::lock_guard lock(mu_);
  current_ = std::move(next);
}

std::shared_ptr<const PoolSnapshot> ImagePool::snapshot() const {
  std::lock_guard lock(mu_);
  return current_;
}

PoolSnapshot synthetic_snapshot(std::uint64_t pleasing, std::uint64_t displeasing, const std::string& category) {
  std::vector<ImageRecord> records(pleasing + displeasing);
  for (std::uint64_t i = 0; i < records.size(); ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "img-%06llu", static_cast<unsigned long long>(i));
    records[i].id = id;
    records[i].category = category;
    records[i].valence = i < pleasing ? Valence::pleasing : Valence::displeasing;
  }
  return PoolSnapshot::from_records(std::move(records));
}

std::uint64_t max_disjoint_puzzles(const PoolStats& stats, std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("max_disjoint_puzzles: n must be at least 1");
  return stats.m / n;
}

}  // namespace acaptcha
