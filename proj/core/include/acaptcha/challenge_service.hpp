#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "acaptcha/image_pool.hpp"
#include "acaptcha/puzzle_engine.hpp"

namespace acaptcha {

using TimePoint = std::chrono::system_clock::time_point;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual TimePoint now() const = 0;
};

class SystemClock final : public Clock {
 public:
  TimePoint now() const override { return std::chrono::system_clock::now(); }
};

/// Test clock, advanced by hand. Thread-safe.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(TimePoint start = TimePoint{} + std::chrono::hours(24 * 365 * 50)) : now_(start) {}
  TimePoint now() const override {
    std::lock_guard lock(mu_);
    return now_;
  }
  void advance(std::chrono::milliseconds d) {
    std::lock_guard lock(mu_);
    now_ += d;
  }

 private:
  mutable std::mutex mu_;
  TimePoint now_;
};

enum class ChallengeState : std::uint8_t { pending, solved, failed, expired, consumed };

std::string_view to_string(ChallengeState s) noexcept;

struct Challenge {
  std::string token;
  Puzzle puzzle;
  ChallengeState state = ChallengeState::pending;
  TimePoint issued_at;
  TimePoint expires_at;
  std::optional<TimePoint> solved_at;
  std::string site_key;
  std::string client_fingerprint;
  std::optional<std::chrono::milliseconds> solve_duration;
  /// Recent failures of this client when the challenge was issued.
  int failure_count_for_client = 0;
};

struct ImageLocator {
  int slot = 0;
  std::string url;
};

/// What a client is told about a challenge. Carries nothing derived from
/// valences or the answer set.
struct ChallengeDescriptor {
  std::string token;
  int n = 0;
  std::string instruction;
  std::vector<ImageLocator> images;
  TimePoint expires_at;
};

enum class SubmitStatus : std::uint8_t { pass, fail, expired, unknown };
std::string_view to_string(SubmitStatus s) noexcept;

struct SubmitResult {
  SubmitStatus status = SubmitStatus::unknown;
  std::optional<ChallengeDescriptor> next_challenge;
};

enum class VerifyReason : std::uint8_t { ok, unknown_token, not_solved, already_consumed, expired };
std::string_view to_string(VerifyReason r) noexcept;

struct VerifyResult {
  bool success = false;
  VerifyReason reason = VerifyReason::unknown_token;
  std::optional<TimePoint> solved_at;
};

class RateLimitedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AuthenticationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MalformedSelectionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ServiceConfig {
  PuzzleSpec base_spec{};
  /// Fraction of challenges issued with the reversed (find-pleasing) polarity.
  double polarity_mix = 0.25;
  std::chrono::seconds pending_ttl{120};
  /// How long a solved token stays redeemable at /verify.
  std::chrono::seconds solved_ttl{120};
  /// Challenge creations per fingerprint per fixed one-minute window; 0 disables.
  int rate_limit_per_minute = 100;
  bool escalation_enabled = true;
  /// Recent failures needed per escalation level.
  int failures_per_level = 3;
  std::chrono::seconds failure_window{600};
  /// Terminal challenges are kept this long past their last deadline, so
  /// late verify calls still see already-consumed rather than unknown-token.
  std::chrono::seconds retention{600};
  std::string shared_secret;
  /// Seeds puzzle generation; unseeded services draw from std::random_device.
  std::optional<std::uint64_t> seed;
};

/// Storage seam for challenges. Every callback runs with exclusive access to
/// the challenge it receives, which makes each state transition atomic.
class ChallengeStore {
 public:
  virtual ~ChallengeStore() = default;
  virtual void insert(Challenge challenge) = 0;
  /// Returns false when the token is unknown.
  virtual bool update(const std::string& token, const std::function<void(Challenge&)>& fn) = 0;
  /// Visits every challenge; entries for which `keep` returns false are erased.
  virtual void scan(const std::function<bool(Challenge&)>& keep) = 0;
  virtual std::size_t size() const = 0;
};

class InMemoryChallengeStore final : public ChallengeStore {
 public:
  void insert(Challenge challenge) override;
  bool update(const std::string& token, const std::function<void(Challenge&)>& fn) override;
  void scan(const std::function<bool(Challenge&)>& keep) override;
  std::size_t size() const override;

 private:
  static constexpr std::size_t kShards = 16;
  struct Shard {
    mutable std::mutex mu;
    std::unordered_map<std::string, Challenge> items;
  };
  Shard& shard_for(const std::string& token);

  Shard shards_[kShards];
};

struct ServiceStats {
  PoolStats pool;
  std::uint64_t challenges_issued = 0;
  std::uint64_t passes = 0;
  std::uint64_t failures = 0;
  /// passes / (passes + failures); 0 before any answer.
  double pass_rate = 0.0;
  /// Mean solve time over passes; 0 before any pass.
  double mean_solve_ms = 0.0;
};

/// Issues challenges, checks answers and redeems tokens for relying parties.
/// All public members are safe to call concurrently.
class ChallengeService {
 public:
  ChallengeService(std::shared_ptr<ImagePool> pool, ServiceConfig config,
                   std::shared_ptr<const Clock> clock = std::make_shared<SystemClock>(),
                   std::unique_ptr<ChallengeStore> store = std::make_unique<InMemoryChallengeStore>());

  /// Throws RateLimitedError or InsufficientPoolError.
  ChallengeDescriptor create_challenge(const std::string& site_key, const std::string& client_fingerprint);

  /// `client_solve_ms`, when present and plausible, is recorded as the solve
  /// time instead of the server-side issue-to-answer interval.
  /// Throws MalformedSelectionError for an index outside [0, n).
  SubmitResult submit_answer(const std::string& token, const std::set<int>& selection,
                             std::optional<std::int64_t> client_solve_ms = std::nullopt);

  /// Throws AuthenticationError when the secret does not match (or none is configured).
  VerifyResult verify_token(const std::string& shared_secret, const std::string& token);

  /// Expires overdue pending and solved challenges, drops long-dead ones.
  /// Returns how many challenges moved to expired.
  std::size_t sweep_expired(TimePoint now);

  /// Transformed PNG for one slot of a pending challenge; nullopt otherwise.
  std::optional<std::vector<std::uint8_t>> image_png(const std::string& token, int slot);

  ServiceStats stats() const;
  /// Copy of a stored challenge, for diagnostics and tests.
  std::optional<Challenge> inspect(const std::string& token) const;
  /// The spec a client would be issued right now (before polarity mixing).
  PuzzleSpec spec_for_client(const std::string& client_fingerprint);

  const ServiceConfig& config() const noexcept { return config_; }
  const Clock& clock() const noexcept { return *clock_; }
  ImagePool& pool() noexcept { return *pool_; }

 private:
  struct ClientState {
    TimePoint window_start{};
    int window_count = 0;
    std::deque<TimePoint> failures;
  };

  void admit(const std::string& fingerprint, TimePoint now);
  int recent_failures_locked(ClientState& client, TimePoint now);
  int recent_failures(const std::string& fingerprint, TimePoint now);
  PuzzleSpec spec_for_failures(int failures) const;
  void record_failure(const std::string& fingerprint, TimePoint now);
  void clear_failures(const std::string& fingerprint);
  Rng fork_rng();
  ChallengeDescriptor describe(const Challenge& c) const;

  std::shared_ptr<ImagePool> pool_;
  ServiceConfig config_;
  std::shared_ptr<const Clock> clock_;
  std::unique_ptr<ChallengeStore> store_;

  std::mutex rng_mu_;
  Rng rng_;

  std::mutex clients_mu_;
  std::unordered_map<std::string, ClientState> clients_;

  std::atomic<std::uint64_t> issued_{0};
  std::atomic<std::uint64_t> passes_{0};
  std::atomic<std::uint64_t> failures_{0};
  std::atomic<std::uint64_t> solve_ms_total_{0};
};

/// Runs sweep_expired on a fixed period until destroyed.
class ExpirySweeper {
 public:
  ExpirySweeper(ChallengeService& service, std::chrono::milliseconds period);
  ~ExpirySweeper();
  ExpirySweeper(const ExpirySweeper&) = delete;
  ExpirySweeper& operator=(const ExpirySweeper&) = delete;

 private:
  ChallengeService& service_;
  std::chrono::milliseconds period_;
  std::mutex mu_;
  std::condition_variable cv_;
  bool stop_ = false;
  std::thread worker_;
};

/// Opaque client identity: a hash of the remote address and site key.
std::string client_fingerprint(const std::string& remote_addr, const std::string& site_key);

/// RFC 3339 UTC timestamp with millisecond precision.
std::string format_rfc3339(TimePoint t);
std::optional<TimePoint> parse_rfc3339(const std::string& s);

}  // namespace acaptcha
