#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <set>
#include <thread>

#include "acaptcha/image_pool.hpp"
#include "test_support.hpp"

using namespace acaptcha;
using testing::TempDir;

namespace {

ImageRecord rec(std::string id, std::string category, Valence v) {
  ImageRecord r;
  r.id = std::move(id);
  r.category = std::move(category);
  r.valence = v;
  return r;
}

std::string entry(const std::string& id, const std::string& path, const std::string& valence = "pleasing") {
  return R"({"id": ")" + id + R"(", "path": ")" + path + R"(", "category": "cars", "valence": ")" + valence +
         R"(", "source_url": "", "license": "CC0-1.0"})";
}

std::string manifest_of(const std::string& a, const std::string& b) {
  return R"({"version": 1, "images": [)" + a + ", " + b + "]}";
}

std::string fixture_png() { return testing::fixture("pool200/img/cars_01.png").string(); }

ManifestError::Kind error_kind(const std::filesystem::path& path) {
  try {
    load_manifest(path);
  } catch (const ManifestError& e) {
    return e.kind();
  }
  FAIL("manifest was accepted");
  return ManifestError::Kind::parse;
}

}  // namespace

TEST_CASE("fixture manifest has 100 pleasing and 100 displeasing images") {
  ImagePool pool;
  const PoolStats s = pool.ingest_manifest(testing::pool200_manifest());
  CHECK(s == PoolStats{200, 100, 100});
  CHECK(pool.stats() == s);
  CHECK(pool.snapshot()->categories().size() == 5);
  const ImageRecord* r = pool.snapshot()->find("cars-03");
  REQUIRE(r);
  CHECK(r->valence == Valence::pleasing);
  CHECK(r->category == "cars");
  CHECK(std::filesystem::exists(r->bytes_ref));
  CHECK(pool.snapshot()->count(Valence::displeasing, std::string("cars")) == 20);
}

TEST_CASE("empty manifest gives an empty pool") {
  TempDir dir;
  ImagePool pool;
  CHECK(pool.ingest_manifest(dir.write("m.json", R"({"version": 1, "images": []})")) == PoolStats{0, 0, 0});
}

TEST_CASE("manifest errors") {
  TempDir dir;
  const std::string png = fixture_png();
  CHECK(error_kind(dir.write("dup.json", manifest_of(entry("a", png), entry("a", png, "displeasing")))) ==
        ManifestError::Kind::duplicate_id);
  CHECK(error_kind(dir.write("missing.json", manifest_of(entry("a", png), entry("b", "nope.png")))) ==
        ManifestError::Kind::missing_image);
  CHECK(error_kind(dir.write("neutral.json", manifest_of(entry("a", png), entry("b", png, "neutral")))) ==
        ManifestError::Kind::parse);
  CHECK(error_kind(dir.write("trunc.json", R"({"version": 1, "images": [)")) == ManifestError::Kind::parse);
  CHECK(error_kind(dir.write("version.json", R"({"version": 2, "images": []})")) == ManifestError::Kind::parse);
  CHECK(error_kind(dir.write("noid.json", R"({"version": 1, "images": [{"path": "x.png"}]})")) ==
        ManifestError::Kind::parse);

  dir.write("garbage.png", "not an image");
  CHECK(error_kind(dir.write("corrupt.json", manifest_of(entry("a", png), entry("b", "garbage.png")))) ==
        ManifestError::Kind::missing_image);
}

TEST_CASE("failed ingest keeps the previous pool") {
  TempDir dir;
  ImagePool pool;
  pool.ingest_manifest(testing::pool200_manifest());
  CHECK_THROWS_AS(pool.ingest_manifest(dir.write("bad.json", "{")), ManifestError);
  CHECK(pool.stats() == PoolStats{200, 100, 100});
}

TEST_CASE("paths resolve relative to the manifest") {
  TempDir dir;
  std::filesystem::create_directories(dir.path / "img");
  std::filesystem::copy_file(fixture_png(), dir.path / "img" / "a.png");
  const auto snap = load_manifest(dir.write("m.json", manifest_of(entry("a", "img/a.png"), entry("b", "img/a.png", "displeasing"))));
  CHECK(snap.stats() == PoolStats{2, 1, 1});
}

TEST_CASE("sample_images") {
  const PoolSnapshot pool = load_manifest(testing::pool200_manifest());
  Rng rng(3);

  SUBCASE("one displeasing image") {
    const auto out = pool.sample_images(Valence::displeasing, std::nullopt, 1, rng);
    REQUIRE(out.size() == 1);
    CHECK(out[0].valence == Valence::displeasing);
  }

  SUBCASE("category filter") {
    const auto out = pool.sample_images(Valence::pleasing, std::string("animals"), 7, rng);
    REQUIRE(out.size() == 7);
    for (const auto& r : out) {
      CHECK(r.category == "animals");
      CHECK(r.valence == Valence::pleasing);
    }
  }

  SUBCASE("8 of 8 pleasing cars returns exactly those") {
    std::vector<ImageRecord> records;
    std::set<std::string> cars;
    for (int i = 0; i < 8; ++i) {
      records.push_back(rec("car" + std::to_string(i), "cars", Valence::pleasing));
      cars.insert("car" + std::to_string(i));
    }
    for (int i = 0; i < 5; ++i) records.push_back(rec("dog" + std::to_string(i), "animals", Valence::pleasing));
    const auto snap = PoolSnapshot::from_records(records);
    const auto out = snap.sample_images(Valence::pleasing, std::string("cars"), 8, rng);
    std::set<std::string> ids;
    for (const auto& r : out) ids.insert(r.id);
    CHECK(ids == cars);
  }

  SUBCASE("insufficient pool reports what is available") {
    const auto snap = synthetic_snapshot(5, 20);
    try {
      snap.sample_images(Valence::pleasing, std::nullopt, 9, rng);
      FAIL("expected InsufficientPoolError");
    } catch (const InsufficientPoolError& e) {
      CHECK(e.available() == 5);
      CHECK(e.requested() == 9);
    }
    CHECK_THROWS_AS(pool.sample_images(Valence::pleasing, std::string("boats"), 1, rng), InsufficientPoolError);
  }

  SUBCASE("zero count is rejected") {
    CHECK_THROWS_AS(pool.sample_images(Valence::pleasing, std::nullopt, 0, rng), std::invalid_argument);
  }
}

TEST_CASE("sample_images never repeats an image within one call") {
  const auto snap = synthetic_snapshot(40, 40);
  Rng rng(11);
  std::uniform_int_distribution<std::size_t> count(1, 40);
  for (int call = 0; call < 10000; ++call) {
    const auto out = snap.sample_images(call % 2 ? Valence::pleasing : Valence::displeasing, std::nullopt, count(rng), rng);
    std::set<std::string> ids;
    for (const auto& r : out) ids.insert(r.id);
    REQUIRE(ids.size() == out.size());
  }
}

TEST_CASE("sample_images is uniform over the bucket") {
  const auto snap = synthetic_snapshot(10, 0);
  Rng rng(5);
  std::map<std::string, int> hits;
  const int calls = 20000;
  for (int i = 0; i < calls; ++i) {
    for (const auto& r : snap.sample_images(Valence::pleasing, std::nullopt, 3, rng)) ++hits[r.id];
  }
  REQUIRE(hits.size() == 10);
  // Each id expected 6000 times; sd is about 65.
  for (const auto& [id, n] : hits) CHECK(std::abs(n - 6000) < 400);
}

TEST_CASE("from_records rejects duplicate ids") {
  CHECK_THROWS_AS(PoolSnapshot::from_records({rec("x", "a", Valence::pleasing), rec("x", "b", Valence::displeasing)}),
                  ManifestError);
}

TEST_CASE("pool stats always satisfy m = p + d") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const std::uint64_t p = rng() % 50, d = rng() % 50;
    const auto s = synthetic_snapshot(p, d).stats();
    CHECK(s.m == s.p + s.d);
    CHECK(s.p == p);
  }
}

TEST_CASE("max_disjoint_puzzles") {
  CHECK(max_disjoint_puzzles({10000, 5000, 5000}, 9) == 1111);
  CHECK(max_disjoint_puzzles({9, 8, 1}, 9) == 1);
  CHECK(max_disjoint_puzzles({200, 100, 100}, 9) == 22);
  CHECK(max_disjoint_puzzles({0, 0, 0}, 9) == 0);
  CHECK_THROWS_AS(max_disjoint_puzzles({10, 5, 5}, 0), std::invalid_argument);

  for (std::uint64_t m = 0; m < 300; ++m) {
    for (std::uint64_t n = 1; n < 20; ++n) {
      const std::uint64_t q = max_disjoint_puzzles({m, m, 0}, n);
      CHECK(q * n <= m);
      CHECK((q + 1) * n > m);
    }
  }
}

TEST_CASE("concurrent readers see whole pools during ingestion") {
  auto pool = std::make_shared<ImagePool>();
  pool->replace(synthetic_snapshot(10, 10));
  std::atomic<bool> stop{false};
  std::atomic<int> torn{0};
  std::vector<std::thread> readers;
  for (int t = 0; t < 4; ++t) {
    readers.emplace_back([&] {
      while (!stop) {
        const auto s = pool->snapshot()->stats();
        if (s.m != s.p + s.d || (s.m != 20 && s.m != 200)) ++torn;
      }
    });
  }
  for (int i = 0; i < 200; ++i) pool->replace(synthetic_snapshot(i % 2 ? 100 : 10, i % 2 ? 100 : 10));
  stop = true;
  for (auto& t : readers) t.join();
  CHECK(torn == 0);
}
