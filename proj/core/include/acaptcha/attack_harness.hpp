#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acaptcha/challenge_service.hpp"
#include "acaptcha/image_pool.hpp"
#include "acaptcha/puzzle_engine.hpp"

namespace acaptcha {

/// The attacker's view of a CAPTCHA deployment: what a bot can do through
/// the public protocol, plus the relying party's verify call.
class CaptchaTarget {
 public:
  virtual ~CaptchaTarget() = default;
  virtual ChallengeDescriptor create(const std::string& site_key) = 0;
  virtual SubmitResult submit(const std::string& token, const std::set<int>& selection) = 0;
  virtual VerifyResult verify(const std::string& token) = 0;
};

/// Drives a ChallengeService directly, posing as one client fingerprint.
class InProcessTarget final : public CaptchaTarget {
 public:
  InProcessTarget(ChallengeService& service, std::string secret, std::string fingerprint = "attacker");
  ChallengeDescriptor create(const std::string& site_key) override;
  SubmitResult submit(const std::string& token, const std::set<int>& selection) override;
  VerifyResult verify(const std::string& token) override;

 private:
  ChallengeService& service_;
  std::string secret_;
  std::string fingerprint_;
};

class ServiceUnreachableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Talks to a running server over the JSON API. Each call opens its own
/// connection, so one instance may be shared by several workers.
class HttpTarget final : public CaptchaTarget {
 public:
  /// `base_url` like "http://127.0.0.1:8080".
  HttpTarget(std::string base_url, std::string secret);
  ChallengeDescriptor create(const std::string& site_key) override;
  SubmitResult submit(const std::string& token, const std::set<int>& selection) override;
  VerifyResult verify(const std::string& token) override;

 private:
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  std::string base_url_;
  std::string secret_;
};

enum class AttackerKind : std::uint8_t { random, replay, catalogue };
std::string_view to_string(AttackerKind k) noexcept;

struct AttackReport {
  AttackerKind attacker = AttackerKind::random;
  /// Distinguishes the measurements of one attacker (e.g. "fresh-challenge").
  std::string label;
  int n = 0;
  int k = 0;
  std::uint64_t trials = 0;
  std::uint64_t successes = 0;
  double empirical_rate = 0.0;
  std::optional<double> theoretical_rate;
  /// sqrt(rate * (1 - rate) / trials) at the empirical rate.
  double stderr_rate = 0.0;
  std::chrono::milliseconds wall_time{0};
  /// n of every issued challenge, in order; only filled when tracing.
  std::vector<int> issued_n;

  /// |empirical - theoretical| <= sigmas * standard error at the theoretical
  /// rate. Returns false when there is no theoretical rate.
  bool within_sigmas(double sigmas) const;
};

AttackReport make_report(AttackerKind attacker, std::string label, int n, int k, std::uint64_t trials,
                         std::uint64_t successes, std::optional<double> theoretical);

/// Adds counts of b into a (same attacker and label); rates are recomputed.
AttackReport merge_reports(const AttackReport& a, const AttackReport& b);

class SpecMismatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RandomGuessOptions {
  std::string site_key = "attack-harness";
  /// Throw SpecMismatchError when the issued n differs from spec.n. Turn off
  /// to observe escalation against a normally configured service.
  bool enforce_spec = true;
  bool record_trace = false;
  /// Parallel workers; each gets its own generator derived from one seed.
  int workers = 1;
};

/// Random-guess bot: one uniformly random k-subset per challenge. After a
/// failure the bot continues with the replacement challenge it was handed.
AttackReport run_random_guess(CaptchaTarget& target, const PuzzleSpec& spec, std::uint64_t trials,
                              std::uint64_t seed, const RandomGuessOptions& options = {});

struct ReplayReport {
  /// The same recorded clicks replayed on fresh challenges.
  AttackReport fresh_challenge;
  /// A solved token re-submitted and re-verified after the relying party redeemed it.
  AttackReport token_replay;
  /// The single legitimate redemption that preceded the replays.
  bool first_verify_ok = false;
};

/// Macro-recorder bot. `spec` gives n and k for the theoretical rate. The
/// solved token for the token-replay half is obtained by guessing.
ReplayReport run_replay(CaptchaTarget& target, const PuzzleSpec& spec, std::uint64_t trials,
                        const std::set<int>& fixed_selection, std::uint64_t seed,
                        const std::string& site_key = "attack-harness");

struct CatalogueState {
  std::set<std::string> observed_ids;
  std::uint64_t puzzles_solved = 0;
  /// Capture-recapture estimate from the first and second half of the puzzles.
  std::optional<std::uint64_t> pool_size_estimate;
};

struct CatalogueOptions {
  /// Share of observed puzzles that use the reversed polarity.
  double polarity_mix = 0.25;
  int repeats = 1;
};

struct CatalogueResult {
  CatalogueState state;  // from the last repeat
  double coverage = 0.0;  // of the last repeat
  double mean_coverage = 0.0;
  double stddev_coverage = 0.0;
  /// Exact expectation of coverage under the generator's sampling.
  double expected_coverage = 0.0;
  AttackReport report;
};

/// Cataloguing attacker: records the ids of every image in Q observed
/// puzzles drawn from a synthetic pool with the given (m, p, d).
CatalogueResult run_catalogue(const PoolStats& pool_stats, const PuzzleSpec& spec, std::uint64_t puzzles_observed,
                              std::uint64_t seed, const CatalogueOptions& options = {});

/// Expected fraction of the pool seen after Q puzzles. An image of valence v
/// appears in one puzzle with probability (mix-weighted slots of v) / |v|.
double expected_coverage(const PoolStats& pool_stats, const PuzzleSpec& spec, std::uint64_t puzzles_observed,
                         double polarity_mix);

struct ComparisonRow {
  std::string scheme;
  /// Exact closed form where one exists.
  std::optional<Probability> probability;
  std::string rendered;
  std::string note;
};

/// Random-guess success for the compared CAPTCHA schemes, from closed forms.
std::vector<ComparisonRow> comparison_table();

nlohmann::json to_json(const AttackReport& r, bool include_timing = true);
nlohmann::json to_json(const CatalogueResult& r, bool include_timing = true);
nlohmann::json to_json(const std::vector<ComparisonRow>& rows);

/// Fixed-width text rendering for terminals.
std::string render_reports(const std::vector<AttackReport>& reports);
std::string render_table(const std::vector<ComparisonRow>& rows);

}  // namespace acaptcha
