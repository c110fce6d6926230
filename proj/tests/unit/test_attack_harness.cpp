#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "acaptcha/attack_harness.hpp"
#include "test_support.hpp"

using namespace acaptcha;
using nlohmann::json;

namespace {

ServiceConfig measurement_config(std::uint64_t seed) {
  ServiceConfig cfg;
  cfg.rate_limit_per_minute = 0;
  cfg.escalation_enabled = false;
  cfg.shared_secret = "h";
  cfg.seed = seed;
  return cfg;
}

PuzzleSpec spec_of(int n, int k) {
  PuzzleSpec s;
  s.n = n;
  s.k = k;
  return s;
}

struct Harness {
  ChallengeService svc;
  InProcessTarget target;
  Harness(const PuzzleSpec& spec, ServiceConfig cfg)
      : svc(testing::synthetic_pool(100, 100), with_spec(std::move(cfg), spec)), target(svc, "h") {}
  Harness(const PuzzleSpec& spec, std::uint64_t seed) : Harness(spec, measurement_config(seed)) {}
  static ServiceConfig with_spec(ServiceConfig cfg, const PuzzleSpec& spec) {
    cfg.base_spec = spec;
    return cfg;
  }
};

std::string run_command(const std::string& cmd) {
  std::string out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe);
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe)) out += buf;
  CHECK(pclose(pipe) == 0);
  return out;
}

}  // namespace

TEST_CASE("report invariants") {
  const AttackReport r = make_report(AttackerKind::random, "x", 9, 1, 400, 100, 0.25);
  CHECK(r.empirical_rate == 0.25);
  CHECK(r.stderr_rate == doctest::Approx(std::sqrt(0.25 * 0.75 / 400)));
  CHECK(r.within_sigmas(0.1));
  const AttackReport no_theory = make_report(AttackerKind::random, "x", 9, 1, 400, 100, std::nullopt);
  CHECK_FALSE(no_theory.within_sigmas(100));

  const AttackReport m = merge_reports(r, make_report(AttackerKind::random, "x", 9, 1, 600, 50, 0.25));
  CHECK(m.trials == 1000);
  CHECK(m.successes == 150);
  CHECK(m.empirical_rate == doctest::Approx(0.15));
}

TEST_CASE("random guessing matches 1/C(n,k)") {
  struct Case {
    int n, k;
    double expected;
  };
  for (const Case c : {Case{9, 1, 1.0 / 9}, Case{4, 1, 0.25}, Case{2, 1, 0.5}, Case{12, 2, 1.0 / 66}}) {
    CAPTURE(c.n);
    Harness h(spec_of(c.n, c.k), 100 + static_cast<std::uint64_t>(c.n));
    const AttackReport r = run_random_guess(h.target, spec_of(c.n, c.k), 20000, 7);
    CHECK(r.trials == 20000);
    CHECK(r.theoretical_rate == doctest::Approx(c.expected));
    CHECK(r.empirical_rate == doctest::Approx(static_cast<double>(r.successes) / 20000.0));
    CHECK(r.within_sigmas(3.0));
  }
}

TEST_CASE("random guessing rejects a service that issues another n") {
  Harness h(spec_of(12, 2), 3);
  CHECK_THROWS_AS(run_random_guess(h.target, spec_of(9, 1), 10, 1), SpecMismatchError);
  CHECK_THROWS_AS(run_random_guess(h.target, spec_of(9, 1), 0, 1), std::invalid_argument);
}

TEST_CASE("without the measurement config the bot sees escalation") {
  ServiceConfig cfg;
  cfg.shared_secret = "h";
  cfg.seed = 9;
  cfg.polarity_mix = 0.0;
  Harness h(spec_of(9, 1), cfg);
  RandomGuessOptions opts;
  opts.enforce_spec = false;
  opts.record_trace = true;
  const AttackReport r = run_random_guess(h.target, spec_of(9, 1), 60, 21, opts);
  REQUIRE(r.issued_n.size() == 60);
  // The bot fails most of the time, so n climbs to 12 and stays.
  CHECK(r.issued_n.front() == 9);
  CHECK(std::count(r.issued_n.begin(), r.issued_n.end(), 12) > 30);
  std::size_t first12 = 0;
  while (r.issued_n[first12] != 12) ++first12;
  CHECK(first12 >= 3);
}

TEST_CASE("reports are reproducible with one seed and one worker") {
  auto run = [] {
    Harness h(spec_of(9, 1), 55);
    return to_json(run_random_guess(h.target, spec_of(9, 1), 3000, 8), false).dump();
  };
  CHECK(run() == run());

  auto catalogue = [] { return to_json(run_catalogue({200, 100, 100}, spec_of(9, 1), 50, 4), false).dump(); };
  CHECK(catalogue() == catalogue());
}

TEST_CASE("parallel workers merge into one report") {
  Harness h(spec_of(9, 1), 12);
  RandomGuessOptions opts;
  opts.workers = 4;
  const AttackReport r = run_random_guess(h.target, spec_of(9, 1), 8001, 3, opts);
  CHECK(r.trials == 8001);
  CHECK(r.within_sigmas(3.0));
}

TEST_CASE("replay bot") {
  Harness h(spec_of(9, 1), 31);
  SUBCASE("fixed slot on fresh challenges") {
    const ReplayReport r = run_replay(h.target, spec_of(9, 1), 20000, {0}, 5);
    CHECK(r.fresh_challenge.within_sigmas(3.0));
    CHECK(r.first_verify_ok);
    CHECK(r.token_replay.trials == 20000);
    CHECK(r.token_replay.successes == 0);
  }
  SUBCASE("over-selection never passes") {
    const ReplayReport r = run_replay(h.target, spec_of(9, 1), 2000, {0, 1}, 5);
    CHECK(r.fresh_challenge.successes == 0);
    CHECK(r.fresh_challenge.theoretical_rate == 0.0);
  }
  SUBCASE("index outside the grid is rejected") {
    CHECK_THROWS_AS(run_replay(h.target, spec_of(9, 1), 10, {9}, 5), std::invalid_argument);
  }
}

TEST_CASE("catalogue coverage examples") {
  CatalogueOptions single;
  single.polarity_mix = 0.0;
  const auto full = run_catalogue({9, 8, 1}, spec_of(9, 1), 1, 1, single);
  CHECK(full.coverage == 1.0);
  CHECK(full.state.observed_ids.size() == 9);
  CHECK(full.expected_coverage == doctest::Approx(1.0));

  const auto none = run_catalogue({200, 100, 100}, spec_of(9, 1), 0, 1);
  CHECK(none.coverage == 0.0);
  CHECK(none.state.observed_ids.empty());
  CHECK(none.expected_coverage == 0.0);

  CHECK_THROWS_AS(run_catalogue({200, 100, 50}, spec_of(9, 1), 10, 1), std::invalid_argument);
}

TEST_CASE("catalogue coverage is monotone in Q and converges") {
  CatalogueOptions opts;
  opts.repeats = 200;
  double previous = 0.0;
  for (std::uint64_t q : {0, 10, 25, 50, 100, 150, 222}) {
    const auto r = run_catalogue({200, 100, 100}, spec_of(9, 1), q, 77, opts);
    CHECK(r.mean_coverage >= previous);
    CHECK(r.expected_coverage >= previous - 1e-12);
    CHECK(std::abs(r.mean_coverage - r.expected_coverage) < 0.01);
    for (const auto& id : r.state.observed_ids) CHECK(id.rfind("img-", 0) == 0);
    CHECK(r.state.observed_ids.size() <= 200);
    previous = r.mean_coverage;
  }
  // Q = 10 m / n
  CHECK(previous > 0.99);
  CHECK(expected_coverage({200, 100, 100}, spec_of(9, 1), 100000, 0.25) == doctest::Approx(1.0));
}

TEST_CASE("closed form reduces to 1 - (1 - n/m)^Q when the pool matches the puzzle mix") {
  // With p:d equal to (n-k):k every image is included with probability n/m.
  for (std::uint64_t q : {1, 10, 100}) {
    const double uniform = 1.0 - std::pow(1.0 - 9.0 / 180.0, static_cast<double>(q));
    CHECK(expected_coverage({180, 160, 20}, spec_of(9, 1), q, 0.0) == doctest::Approx(uniform));
  }
}

TEST_CASE("catalogue matches the frozen Monte Carlo oracle") {
  const json oracle = json::parse(std::ifstream(testing::fixture("catalogue_oracle.json")));
  CatalogueOptions opts;
  opts.repeats = 1000;
  opts.polarity_mix = oracle["polarity_mix"];
  const PoolStats stats{oracle["m"], oracle["p"], static_cast<std::uint64_t>(oracle["m"]) - oracle["p"].get<std::uint64_t>()};
  const auto r = run_catalogue(stats, spec_of(oracle["n"], oracle["k"]), oracle["q"], 2024, opts);
  CHECK(std::abs(r.mean_coverage - oracle["mean_coverage"].get<double>()) < 0.02);
  CHECK(r.expected_coverage == doctest::Approx(oracle["closed_form"].get<double>()).epsilon(1e-5));
  REQUIRE(r.state.pool_size_estimate);
  CHECK(*r.state.pool_size_estimate > 150);
  CHECK(*r.state.pool_size_estimate < 260);
}

TEST_CASE("oracle executable reproduces its frozen output") {
  const json frozen = json::parse(std::ifstream(testing::fixture("catalogue_oracle.json")));
  const std::string cmd = std::string(CATALOGUE_ORACLE_EXE) + " --m 200 --p 100 --n 9 --k 1 --q 100 --mix 0.25" +
                          " --repeats 20000 --seed 1";
  const json now = json::parse(run_command(cmd));
  CHECK(now == frozen);
}

TEST_CASE("comparison table") {
  const auto rows = comparison_table();
  REQUIRE(rows.size() == 5);
  auto row = [&](const std::string& name) -> const ComparisonRow& {
    for (const auto& r : rows) {
      if (r.scheme == name) return r;
    }
    FAIL("missing row " << name);
    return rows.front();
  };
  CHECK(row("Image-based reCAPTCHA").probability == Probability{1, 56});
  CHECK(row("Image-based reCAPTCHA").rendered == "1.8%");
  CHECK(row("sweetCaptcha").probability == Probability{1, 4});
  CHECK(row("sweetCaptcha").rendered == "25%");
  CHECK(row("Aesthetic CAPTCHA").probability == Probability{1, 9});
  CHECK(row("Aesthetic CAPTCHA").rendered == "11.1%");
  CHECK(row("Text-based reCAPTCHA").rendered == "<1%");
  CHECK_FALSE(row("Text-based reCAPTCHA").probability);
  CHECK(row("NCRC").rendered == "N/A");
  CHECK(row("NCRC").note == "fixed action (checking a box)");

  const json j = to_json(rows);
  CHECK(j[1]["fraction"] == "1/56");
  CHECK(j[2]["probability"].is_null());
  const std::string text = render_table(rows);
  CHECK(text.find("sweetCaptcha") != std::string::npos);
}

TEST_CASE("text rendering") {
  const auto r = make_report(AttackerKind::replay, "token-replay", 9, 1, 100, 0, 0.0);
  const std::string text = render_reports({r});
  CHECK(text.find("token-replay") != std::string::npos);
  CHECK(text.find("replay") != std::string::npos);
  const json j = to_json(r);
  CHECK(j["attacker"] == "replay");
  CHECK(j.contains("wall_time_ms"));
  CHECK_FALSE(to_json(r, false).contains("wall_time_ms"));
}
