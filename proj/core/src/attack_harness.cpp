#include "acaptcha/attack_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "acaptcha/http_api.hpp"

namespace acaptcha {

using nlohmann::json;
using SteadyClock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Targets

InProcessTarget::InProcessTarget(ChallengeService& service, std::string secret, std::string fingerprint)
    : service_(service), secret_(std::move(secret)), fingerprint_(std::move(fingerprint)) {}

ChallengeDescriptor InProcessTarget::create(const std::string& site_key) {
  return service_.create_challenge(site_key, fingerprint_);
}

SubmitResult InProcessTarget::submit(const std::string& token, const std::set<int>& selection) {
  return service_.submit_answer(token, selection);
}

VerifyResult InProcessTarget::verify(const std::string& token) { return service_.verify_token(secret_, token); }

HttpTarget::HttpTarget(std::string base_url, std::string secret)
    : base_url_(std::move(base_url)), secret_(std::move(secret)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

json HttpTarget::post(const std::string& path, const json& body) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(5);
  client.set_read_timeout(30);
  const auto res = client.Post(path, body.dump(), "application/json");
  if (!res) {
    throw ServiceUnreachableError(base_url_ + path + ": " + httplib::to_string(res.error()));
  }
  json parsed = json::parse(res->body, nullptr, false);
  if (res->status == 429) throw RateLimitedError(base_url_ + path + ": rate limited");
  if (res->status == 401) throw AuthenticationError(base_url_ + path + ": unauthorized");
  if (res->status == 503) throw InsufficientPoolError(0, 0, base_url_ + path + ": pool exhausted");
  if (res->status == 400) throw MalformedSelectionError(base_url_ + path + ": " + res->body);
  if (res->status != 200 || parsed.is_discarded()) {
    throw ServiceUnreachableError(base_url_ + path + ": HTTP " + std::to_string(res->status));
  }
  return parsed;
}

ChallengeDescriptor HttpTarget::create(const std::string& site_key) {
  return descriptor_from_json(post("/api/v1/challenge", {{"site_key", site_key}}));
}

SubmitResult HttpTarget::submit(const std::string& token, const std::set<int>& selection) {
  return submit_result_from_json(
      post("/api/v1/answer", {{"token", token}, {"selection", std::vector<int>(selection.begin(), selection.end())}}));
}

VerifyResult HttpTarget::verify(const std::string& token) {
  return verify_result_from_json(post("/api/v1/verify", {{"secret", secret_}, {"token", token}}));
}

// ---------------------------------------------------------------------------
// Reports

std::string_view to_string(AttackerKind k) noexcept {
  switch (k) {
    case AttackerKind::random: return "random";
    case AttackerKind::replay: return "replay";
    case AttackerKind::catalogue: return "catalogue";
  }
  return "?";
}

bool AttackReport::within_sigmas(double sigmas) const {
  if (!theoretical_rate || trials == 0) return false;
  const double p = *theoretical_rate;
  const double se = std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
  return std::abs(empirical_rate - p) <= sigmas * se;
}

AttackReport make_report(AttackerKind attacker, std::string label, int n, int k, std::uint64_t trials,
                         std::uint64_t successes, std::optional<double> theoretical) {
  AttackReport r;
  r.attacker = attacker;
  r.label = std::move(label);
  r.n = n;
  r.k = k;
  r.trials = trials;
  r.successes = successes;
  r.empirical_rate = trials ? static_cast<double>(successes) / static_cast<double>(trials) : 0.0;
  r.stderr_rate = trials ? std::sqrt(r.empirical_rate * (1.0 - r.empirical_rate) / static_cast<double>(trials)) : 0.0;
  r.theoretical_rate = theoretical;
  return r;
}

AttackReport merge_reports(const AttackReport& a, const AttackReport& b) {
  AttackReport r = make_report(a.attacker, a.label, a.n, a.k, a.trials + b.trials, a.successes + b.successes,
                               a.theoretical_rate);
  r.wall_time = std::max(a.wall_time, b.wall_time);
  r.issued_n = a.issued_n;
  r.issued_n.insert(r.issued_n.end(), b.issued_n.begin(), b.issued_n.end());
  return r;
}

namespace {

std::set<int> random_subset(int n, int k, Rng& rng) {
  std::vector<int> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> picked;
  std::sample(all.begin(), all.end(), std::back_inserter(picked), k, rng);
  return {picked.begin(), picked.end()};
}

double theoretical_for(const PuzzleSpec& spec) { return random_guess_probability(spec).value(); }

// Hands out the next challenge: the replacement from the last failure when
// there is one, a freshly requested challenge otherwise.
class ChallengeFeed {
 public:
  ChallengeFeed(CaptchaTarget& target, std::string site_key) : target_(target), site_key_(std::move(site_key)) {}

  ChallengeDescriptor next() {
    if (pending_) {
      ChallengeDescriptor d = std::move(*pending_);
      pending_.reset();
      return d;
    }
    return target_.create(site_key_);
  }
  void offer(std::optional<ChallengeDescriptor> d) { pending_ = std::move(d); }

 private:
  CaptchaTarget& target_;
  std::string site_key_;
  std::optional<ChallengeDescriptor> pending_;
};

AttackReport random_guess_worker(CaptchaTarget& target, const PuzzleSpec& spec, std::uint64_t trials, Rng rng,
                                 const RandomGuessOptions& options) {
  ChallengeFeed feed(target, options.site_key);
  std::uint64_t successes = 0;
  std::vector<int> trace;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const ChallengeDescriptor d = feed.next();
    if (options.record_trace) trace.push_back(d.n);
    if (options.enforce_spec && d.n != spec.n) {
      throw SpecMismatchError("service issued n=" + std::to_string(d.n) + ", expected n=" + std::to_string(spec.n));
    }
    const int k = std::min(spec.k, d.n - 1);
    SubmitResult r = target.submit(d.token, random_subset(d.n, k, rng));
    if (r.status == SubmitStatus::pass) ++successes;
    feed.offer(std::move(r.next_challenge));
  }
  AttackReport report =
      make_report(AttackerKind::random, "random-guess", spec.n, spec.k, trials, successes, theoretical_for(spec));
  report.issued_n = std::move(trace);
  return report;
}

}  // namespace

AttackReport run_random_guess(CaptchaTarget& target, const PuzzleSpec& spec, std::uint64_t trials,
                              std::uint64_t seed, const RandomGuessOptions& options) {
  if (trials == 0) throw std::invalid_argument("run_random_guess: trials must be positive");
  if (!spec.valid()) throw InvalidSpecError("run_random_guess: invalid spec");
  const auto start = SteadyClock::now();
  const int workers = std::max(1, options.workers);

  AttackReport total;
  if (workers == 1) {
    total = random_guess_worker(target, spec, trials, Rng(seed), options);
  } else {
    std::vector<AttackReport> parts(static_cast<std::size_t>(workers));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) {
      const std::uint64_t share = trials / static_cast<std::uint64_t>(workers) +
                                  (static_cast<std::uint64_t>(w) < trials % static_cast<std::uint64_t>(workers) ? 1 : 0);
      std::seed_seq seq{seed, static_cast<std::uint64_t>(w)};
      threads.emplace_back([&, w, share, rng = Rng(seq)]() mutable {
        try {
          parts[static_cast<std::size_t>(w)] = random_guess_worker(target, spec, share, std::move(rng), options);
        } catch (...) {
          errors[static_cast<std::size_t>(w)] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) total = merge_reports(total, parts[i]);
  }
  total.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(SteadyClock::now() - start);
  return total;
}

ReplayReport run_replay(CaptchaTarget& target, const PuzzleSpec& spec, std::uint64_t trials,
                        const std::set<int>& fixed_selection, std::uint64_t seed, const std::string& site_key) {
  if (trials == 0) throw std::invalid_argument("run_replay: trials must be positive");
  if (!spec.valid()) throw InvalidSpecError("run_replay: invalid spec");
  ReplayReport out;

  // (a) recorded clicks against fresh challenges.
  auto start = SteadyClock::now();
  ChallengeFeed feed(target, site_key);
  std::uint64_t successes = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const ChallengeDescriptor d = feed.next();
    for (int idx : fixed_selection) {
      if (idx < 0 || idx >= d.n) {
        throw std::invalid_argument("run_replay: selection index " + std::to_string(idx) + " invalid for n=" +
                                    std::to_string(d.n));
      }
    }
    SubmitResult r = target.submit(d.token, fixed_selection);
    if (r.status == SubmitStatus::pass) ++successes;
    feed.offer(std::move(r.next_challenge));
  }
  const double theoretical =
      static_cast<int>(fixed_selection.size()) == spec.k ? theoretical_for(spec) : 0.0;
  out.fresh_challenge =
      make_report(AttackerKind::replay, "fresh-challenge", spec.n, spec.k, trials, successes, theoretical);
  out.fresh_challenge.wall_time =
      std::chrono::duration_cast<std::chrono::milliseconds>(SteadyClock::now() - start);

  // (b) a solved token replayed after its legitimate redemption.
  start = SteadyClock::now();
  Rng rng(seed);
  std::optional<std::string> solved;
  std::set<int> winning;
  for (int attempt = 0; attempt < 1'000'000 && !solved; ++attempt) {
    const ChallengeDescriptor d = feed.next();
    const std::set<int> guess = random_subset(d.n, std::min(spec.k, d.n - 1), rng);
    SubmitResult r = target.submit(d.token, guess);
    if (r.status == SubmitStatus::pass) {
      solved = d.token;
      winning = guess;
    }
    feed.offer(std::move(r.next_challenge));
  }
  if (!solved) throw std::runtime_error("run_replay: could not obtain a solved token");
  out.first_verify_ok = target.verify(*solved).success;

  std::uint64_t replay_successes = 0;
  for (std::uint64_t t = 0; t < trials; ++t) {
    const bool resubmitted = target.submit(*solved, winning).status == SubmitStatus::pass;
    const bool reverified = target.verify(*solved).success;
    if (resubmitted || reverified) ++replay_successes;
  }
  out.token_replay = make_report(AttackerKind::replay, "token-replay", spec.n, spec.k, trials, replay_successes, 0.0);
  out.token_replay.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(SteadyClock::now() - start);
  return out;
}

// ---------------------------------------------------------------------------
// Cataloguing

double expected_coverage(const PoolStats& pool_stats, const PuzzleSpec& spec, std::uint64_t puzzles_observed,
                         double polarity_mix) {
  if (pool_stats.m == 0) return 0.0;
  const double n = spec.n;
  const double k = spec.k;
  // Expected slots per puzzle holding each valence, over the polarity mix.
  const double base_target_slots = k;
  const double base_other_slots = n - k;
  const Valence base_target = target_valence(spec.polarity);
  const double slots_base_target = (1.0 - polarity_mix) * base_target_slots + polarity_mix * base_other_slots;
  const double slots_base_other = (1.0 - polarity_mix) * base_other_slots + polarity_mix * base_target_slots;

  auto part = [&](std::uint64_t count, double slots) {
    if (count == 0) return 0.0;
    const double inclusion = slots / static_cast<double>(count);
    return static_cast<double>(count) *
           (1.0 - std::pow(1.0 - inclusion, static_cast<double>(puzzles_observed)));
  };
  const std::uint64_t target_count = base_target == Valence::pleasing ? pool_stats.p : pool_stats.d;
  const std::uint64_t other_count = pool_stats.m - target_count;
  return (part(target_count, slots_base_target) + part(other_count, slots_base_other)) /
         static_cast<double>(pool_stats.m);
}

CatalogueResult run_catalogue(const PoolStats& pool_stats, const PuzzleSpec& spec, std::uint64_t puzzles_observed,
                              std::uint64_t seed, const CatalogueOptions& options) {
  if (pool_stats.m != pool_stats.p + pool_stats.d) throw std::invalid_argument("run_catalogue: m != p + d");
  if (options.repeats < 1) throw std::invalid_argument("run_catalogue: repeats must be positive");
  const auto start = SteadyClock::now();

  const PoolSnapshot pool = synthetic_snapshot(pool_stats.p, pool_stats.d);

  Rng master(seed);
  CatalogueResult result;
  double sum = 0.0;
  double sum_sq = 0.0;
  std::uint64_t observed_total = 0;
  for (int rep = 0; rep < options.repeats; ++rep) {
    Rng rng(master());
    CatalogueState state;
    std::set<std::string> first_half;
    std::set<std::string> second_half;
    for (std::uint64_t q = 0; q < puzzles_observed; ++q) {
      PuzzleSpec s = spec;
      if (std::bernoulli_distribution(options.polarity_mix)(rng)) {
        s.polarity = s.polarity == Polarity::find_displeasing ? Polarity::find_pleasing : Polarity::find_displeasing;
      }
      const Puzzle puzzle = generate_puzzle(s, pool, rng);
      auto& half = q < puzzles_observed / 2 ? first_half : second_half;
      for (const auto& slot : puzzle.slots) {
        state.observed_ids.insert(slot.image.id);
        half.insert(slot.image.id);
      }
      ++state.puzzles_solved;
    }
    if (!first_half.empty() && !second_half.empty()) {
      std::size_t overlap = 0;
      for (const auto& id : second_half) overlap += first_half.count(id);
      if (overlap > 0) state.pool_size_estimate = first_half.size() * second_half.size() / overlap;
    }
    const double cov = pool_stats.m ? static_cast<double>(state.observed_ids.size()) / static_cast<double>(pool_stats.m)
                                    : 0.0;
    sum += cov;
    sum_sq += cov * cov;
    observed_total += state.observed_ids.size();
    result.coverage = cov;
    result.state = std::move(state);
  }
  const double reps = options.repeats;
  result.mean_coverage = sum / reps;
  result.stddev_coverage = std::sqrt(std::max(0.0, sum_sq / reps - result.mean_coverage * result.mean_coverage));
  result.expected_coverage = expected_coverage(pool_stats, spec, puzzles_observed, options.polarity_mix);
  result.report = make_report(AttackerKind::catalogue, "coverage", spec.n, spec.k,
                              pool_stats.m * static_cast<std::uint64_t>(options.repeats), observed_total,
                              result.expected_coverage);
  result.report.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(SteadyClock::now() - start);
  return result;
}

// ---------------------------------------------------------------------------
// Comparison table

std::vector<ComparisonRow> comparison_table() {
  auto closed = [](int n, int k) {
    PuzzleSpec s;
    s.n = n;
    s.k = k;
    return random_guess_probability(s);
  };
  const Probability image_recaptcha = closed(8, 3);
  const Probability sweet = closed(4, 1);
  const Probability aesthetic = closed(9, 1);
  return {
      {"Text-based reCAPTCHA", std::nullopt, "<1%", "negligible; upper bound, no character model"},
      {"Image-based reCAPTCHA", image_recaptcha, image_recaptcha.percent(1), "select 3 of 8 images"},
      {"NCRC", std::nullopt, "N/A", "fixed action (checking a box)"},
      {"sweetCaptcha", sweet, sweet.percent(1), "1 of 4 images"},
      {"Aesthetic CAPTCHA", aesthetic, aesthetic.percent(1), "1 of 9 images"},
  };
}

// ---------------------------------------------------------------------------
// Serialisation

json to_json(const AttackReport& r, bool include_timing) {
  json j = {{"attacker", std::string(to_string(r.attacker))},
            {"label", r.label},
            {"n", r.n},
            {"k", r.k},
            {"trials", r.trials},
            {"successes", r.successes},
            {"empirical_rate", r.empirical_rate},
            {"stderr", r.stderr_rate}};
  j["theoretical_rate"] = r.theoretical_rate ? json(*r.theoretical_rate) : json(nullptr);
  if (include_timing) j["wall_time_ms"] = r.wall_time.count();
  if (!r.issued_n.empty()) j["issued_n"] = r.issued_n;
  return j;
}

json to_json(const CatalogueResult& r, bool include_timing) {
  json j = to_json(r.report, include_timing);
  j["mean_coverage"] = r.mean_coverage;
  j["stddev_coverage"] = r.stddev_coverage;
  j["expected_coverage"] = r.expected_coverage;
  j["last_coverage"] = r.coverage;
  j["observed_ids"] = r.state.observed_ids.size();
  j["puzzles_solved"] = r.state.puzzles_solved;
  j["pool_size_estimate"] = r.state.pool_size_estimate ? json(*r.state.pool_size_estimate) : json(nullptr);
  return j;
}

json to_json(const std::vector<ComparisonRow>& rows) {
  json out = json::array();
  for (const auto& row : rows) {
    json j = {{"scheme", row.scheme}, {"rendered", row.rendered}, {"note", row.note}};
    if (row.probability) {
      j["fraction"] = row.probability->fraction();
      j["probability"] = row.probability->value();
    } else {
      j["fraction"] = nullptr;
      j["probability"] = nullptr;
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::string render_reports(const std::vector<AttackReport>& reports) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-10s %-16s %4s %3s %9s %9s %10s %10s %10s %9s\n", "attacker", "measurement", "n",
                "k", "trials", "successes", "empirical", "theory", "stderr", "wall_ms");
  os << line;
  for (const auto& r : reports) {
    char theory[32] = "-";
    if (r.theoretical_rate) std::snprintf(theory, sizeof theory, "%.6f", *r.theoretical_rate);
    std::snprintf(line, sizeof line, "%-10s %-16s %4d %3d %9llu %9llu %10.6f %10s %10.6f %9lld\n",
                  std::string(to_string(r.attacker)).c_str(), r.label.c_str(), r.n, r.k,
                  static_cast<unsigned long long>(r.trials), static_cast<unsigned long long>(r.successes),
                  r.empirical_rate, theory, r.stderr_rate, static_cast<long long>(r.wall_time.count()));
    os << line;
  }
  return os.str();
}

std::string render_table(const std::vector<ComparisonRow>& rows) {
  std::ostringstream os;
  char line[256];
  std::snprintf(line, sizeof line, "%-24s %-10s %-8s %s\n", "scheme", "P(guess)", "exact", "note");
  os << line;
  for (const auto& row : rows) {
    const std::string exact = row.probability ? row.probability->fraction() : "-";
    std::snprintf(line, sizeof line, "%-24s %-10s %-8s %s\n", row.scheme.c_str(), row.rendered.c_str(),
                  exact.c_str(), row.note.c_str());
    os << line;
  }
  return os.str();
}

}  // namespace acaptcha
