#include "acaptcha/challenge_service.hpp"

#include <ctime>
#include <functional>

#include "acaptcha/crypto.hpp"
#include "acaptcha/raster.hpp"

namespace acaptcha {

using std::chrono::duration_cast;
using std::chrono::milliseconds;

std::string_view to_string(ChallengeState s) noexcept {
  switch (s) {
    case ChallengeState::pending: return "pending";
    case ChallengeState::solved: return "solved";
    case ChallengeState::failed: return "failed";
    case ChallengeState::expired: return "expired";
    case ChallengeState::consumed: return "consumed";
  }
  return "?";
}

std::string_view to_string(SubmitStatus s) noexcept {
  switch (s) {
    case SubmitStatus::pass: return "pass";
    case SubmitStatus::fail: return "fail";
    case SubmitStatus::expired: return "expired";
    case SubmitStatus::unknown: return "unknown";
  }
  return "?";
}

std::string_view to_string(VerifyReason r) noexcept {
  switch (r) {
    case VerifyReason::ok: return "ok";
    case VerifyReason::unknown_token: return "unknown-token";
    case VerifyReason::not_solved: return "not-solved";
    case VerifyReason::already_consumed: return "already-consumed";
    case VerifyReason::expired: return "expired";
  }
  return "?";
}

// ---------------------------------------------------------------------------

InMemoryChallengeStore::Shard& InMemoryChallengeStore::shard_for(const std::string& token) {
  return shards_[std::hash<std::string>{}(token) % kShards];
}

void InMemoryChallengeStore::insert(Challenge challenge) {
  Shard& s = shard_for(challenge.token);
  std::lock_guard lock(s.mu);
  const std::string key = challenge.token;
  s.items.insert_or_assign(key, std::move(challenge));
}

bool InMemoryChallengeStore::update(const std::string& token, const std::function<void(Challenge&)>& fn) {
  Shard& s = shard_for(token);
  std::lock_guard lock(s.mu);
  const auto it = s.items.find(token);
  if (it == s.items.end()) return false;
  fn(it->second);
  return true;
}

void InMemoryChallengeStore::scan(const std::function<bool(Challenge&)>& keep) {
  for (Shard& s : shards_) {
    std::lock_guard lock(s.mu);
    for (auto it = s.items.begin(); it != s.items.end();) {
      if (keep(it->second)) {
        ++it;
      } else {
        it = s.items.erase(it);
      }
    }
  }
}

std::size_t InMemoryChallengeStore::size() const {
  std::size_t n = 0;
  for (const Shard& s : shards_) {
    std::lock_guard lock(s.mu);
    n += s.items.size();
  }
  return n;
}

// ---------------------------------------------------------------------------

ChallengeService::ChallengeService(std::shared_ptr<ImagePool> pool, ServiceConfig config,
                                   std::shared_ptr<const Clock> clock, std::unique_ptr<ChallengeStore> store)
    : pool_(std::move(pool)),
      config_(std::move(config)),
      clock_(std::move(clock)),
      store_(std::move(store)),
      rng_(config_.seed ? *config_.seed : std::random_device{}()) {
  if (!pool_) throw std::invalid_argument("ChallengeService: null pool");
  if (!config_.base_spec.valid()) throw InvalidSpecError("ChallengeService: invalid base spec");
  if (config_.polarity_mix < 0.0 || config_.polarity_mix > 1.0) {
    throw std::invalid_argument("ChallengeService: polarity_mix must lie in [0, 1]");
  }
  if (config_.failures_per_level < 1) throw std::invalid_argument("ChallengeService: failures_per_level < 1");
}

Rng ChallengeService::fork_rng() {
  std::lock_guard lock(rng_mu_);
  return Rng(rng_());
}

void ChallengeService::admit(const std::string& fingerprint, TimePoint now) {
  if (config_.rate_limit_per_minute <= 0) return;
  std::lock_guard lock(clients_mu_);
  ClientState& c = clients_[fingerprint];
  if (c.window_count == 0 || now - c.window_start >= std::chrono::minutes(1)) {
    c.window_start = now;
    c.window_count = 0;
  }
  if (c.window_count >= config_.rate_limit_per_minute) {
    throw RateLimitedError("rate limit of " + std::to_string(config_.rate_limit_per_minute) +
                           " challenges per minute exceeded");
  }
  ++c.window_count;
}

int ChallengeService::recent_failures_locked(ClientState& client, TimePoint now) {
  while (!client.failures.empty() && now - client.failures.front() >= config_.failure_window) {
    client.failures.pop_front();
  }
  return static_cast<int>(client.failures.size());
}

void ChallengeService::record_failure(const std::string& fingerprint, TimePoint now) {
  std::lock_guard lock(clients_mu_);
  clients_[fingerprint].failures.push_back(now);
}

void ChallengeService::clear_failures(const std::string& fingerprint) {
  std::lock_guard lock(clients_mu_);
  const auto it = clients_.find(fingerprint);
  if (it != clients_.end()) it->second.failures.clear();
}

int ChallengeService::recent_failures(const std::string& fingerprint, TimePoint now) {
  std::lock_guard lock(clients_mu_);
  const auto it = clients_.find(fingerprint);
  return it == clients_.end() ? 0 : recent_failures_locked(it->second, now);
}

PuzzleSpec ChallengeService::spec_for_failures(int failures) const {
  if (!config_.escalation_enabled) return config_.base_spec;
  return escalate_by(config_.base_spec, failures / config_.failures_per_level);
}

PuzzleSpec ChallengeService::spec_for_client(const std::string& client_fingerprint) {
  return spec_for_failures(recent_failures(client_fingerprint, clock_->now()));
}

ChallengeDescriptor ChallengeService::describe(const Challenge& c) const {
  ChallengeDescriptor d;
  d.token = c.token;
  d.n = c.puzzle.spec.n;
  d.instruction = c.puzzle.instruction;
  d.expires_at = c.expires_at;
  d.images.reserve(c.puzzle.slots.size());
  for (int i = 0; i < d.n; ++i) {
    d.images.push_back({i, "/img/" + c.token + "/" + std::to_string(i)});
  }
  return d;
}

ChallengeDescriptor ChallengeService::create_challenge(const std::string& site_key,
                                                       const std::string& client_fingerprint) {
  const TimePoint now = clock_->now();
  admit(client_fingerprint, now);

  const int failures = recent_failures(client_fingerprint, now);
  PuzzleSpec spec = spec_for_failures(failures);

  Rng rng = fork_rng();
  if (config_.polarity_mix > 0.0 && std::bernoulli_distribution(config_.polarity_mix)(rng)) {
    spec.polarity = spec.polarity == Polarity::find_displeasing ? Polarity::find_pleasing
                                                                : Polarity::find_displeasing;
  }

  Challenge c;
  c.puzzle = generate_puzzle(spec, *pool_->snapshot(), rng);
  c.token = random_hex(16);
  c.issued_at = now;
  c.expires_at = now + config_.pending_ttl;
  c.site_key = site_key;
  c.client_fingerprint = client_fingerprint;
  c.failure_count_for_client = failures;

  ChallengeDescriptor d = describe(c);
  store_->insert(std::move(c));
  issued_.fetch_add(1, std::memory_order_relaxed);
  return d;
}

SubmitResult ChallengeService::submit_answer(const std::string& token, const std::set<int>& selection,
                                             std::optional<std::int64_t> client_solve_ms) {
  const TimePoint now = clock_->now();
  SubmitResult result;
  std::string fingerprint;
  std::string site_key;
  std::optional<std::string> malformed;
  std::int64_t solve_ms = 0;

  const bool found = store_->update(token, [&](Challenge& c) {
    if (c.state != ChallengeState::pending) {
      result.status = c.state == ChallengeState::expired ? SubmitStatus::expired : SubmitStatus::unknown;
      return;
    }
    if (now >= c.expires_at) {
      c.state = ChallengeState::expired;
      result.status = SubmitStatus::expired;
      return;
    }
    bool correct = false;
    try {
      correct = verify_answer(c.puzzle, selection);
    } catch (const std::out_of_range& e) {
      malformed = e.what();
      return;
    }
    fingerprint = c.client_fingerprint;
    site_key = c.site_key;
    if (correct) {
      c.state = ChallengeState::solved;
      c.solved_at = now;
      const std::int64_t server_ms = duration_cast<milliseconds>(now - c.issued_at).count();
      const std::int64_t ttl_ms = duration_cast<milliseconds>(config_.pending_ttl).count();
      solve_ms = (client_solve_ms && *client_solve_ms >= 0 && *client_solve_ms <= ttl_ms) ? *client_solve_ms
                                                                                        : server_ms;
      c.solve_duration = milliseconds(solve_ms);
      result.status = SubmitStatus::pass;
    } else {
      c.state = ChallengeState::failed;
      result.status = SubmitStatus::fail;
    }
  });

  if (malformed) throw MalformedSelectionError(*malformed);
  if (!found) return result;

  if (result.status == SubmitStatus::pass) {
    passes_.fetch_add(1, std::memory_order_relaxed);
    solve_ms_total_.fetch_add(static_cast<std::uint64_t>(solve_ms), std::memory_order_relaxed);
    clear_failures(fingerprint);
  } else if (result.status == SubmitStatus::fail) {
    failures_.fetch_add(1, std::memory_order_relaxed);
    record_failure(fingerprint, now);
    try {
      result.next_challenge = create_challenge(site_key, fingerprint);
    } catch (const RateLimitedError&) {
    } catch (const InsufficientPoolError&) {
    }
  }
  return result;
}

VerifyResult ChallengeService::verify_token(const std::string& shared_secret, const std::string& token) {
  if (config_.shared_secret.empty() || !secure_equals(shared_secret, config_.shared_secret)) {
    throw AuthenticationError("shared secret mismatch");
  }
  const TimePoint now = clock_->now();
  VerifyResult result;
  store_->update(token, [&](Challenge& c) {
    switch (c.state) {
      case ChallengeState::solved:
        if (now >= *c.solved_at + config_.solved_ttl) {
          c.state = ChallengeState::expired;
          result.reason = VerifyReason::expired;
        } else {
          c.state = ChallengeState::consumed;
          result.success = true;
          result.reason = VerifyReason::ok;
          result.solved_at = c.solved_at;
        }
        break;
      case ChallengeState::consumed: result.reason = VerifyReason::already_consumed; break;
      case ChallengeState::expired: result.reason = VerifyReason::expired; break;
      case ChallengeState::pending:
      case ChallengeState::failed: result.reason = VerifyReason::not_solved; break;
    }
  });
  return result;
}

std::size_t ChallengeService::sweep_expired(TimePoint now) {
  std::size_t expired = 0;
  const auto dead_after = config_.pending_ttl + config_.solved_ttl + config_.retention;
  store_->scan([&](Challenge& c) {
    if (c.state == ChallengeState::pending && c.expires_at <= now) {
      c.state = ChallengeState::expired;
      ++expired;
    } else if (c.state == ChallengeState::solved && *c.solved_at + config_.solved_ttl <= now) {
      c.state = ChallengeState::expired;
      ++expired;
    }
    const bool terminal = c.state == ChallengeState::failed || c.state == ChallengeState::expired ||
                          c.state == ChallengeState::consumed;
    return !(terminal && c.issued_at + dead_after <= now);
  });

  std::lock_guard lock(clients_mu_);
  for (auto it = clients_.begin(); it != clients_.end();) {
    ClientState& c = it->second;
    const bool window_idle = c.window_count == 0 || now - c.window_start >= std::chrono::minutes(1);
    if (window_idle && recent_failures_locked(c, now) == 0) {
      it = clients_.erase(it);
    } else {
      ++it;
    }
  }
  return expired;
}

std::optional<std::vector<std::uint8_t>> ChallengeService::image_png(const std::string& token, int slot) {
  const TimePoint now = clock_->now();
  std::optional<PuzzleSlot> target;
  store_->update(token, [&](Challenge& c) {
    if (c.state != ChallengeState::pending) return;
    if (now >= c.expires_at) {
      c.state = ChallengeState::expired;
      return;
    }
    if (slot < 0 || slot >= static_cast<int>(c.puzzle.slots.size())) return;
    target = c.puzzle.slots[static_cast<std::size_t>(slot)];
  });
  if (!target) return std::nullopt;
  return transform(read_file(target->image.bytes_ref), target->seed);
}

ServiceStats ChallengeService::stats() const {
  ServiceStats s;
  s.pool = pool_->stats();
  s.challenges_issued = issued_.load(std::memory_order_relaxed);
  s.passes = passes_.load(std::memory_order_relaxed);
  s.failures = failures_.load(std::memory_order_relaxed);
  const std::uint64_t answered = s.passes + s.failures;
  s.pass_rate = answered ? static_cast<double>(s.passes) / static_cast<double>(answered) : 0.0;
  s.mean_solve_ms =
      s.passes ? static_cast<double>(solve_ms_total_.load(std::memory_order_relaxed)) / static_cast<double>(s.passes)
               : 0.0;
  return s;
}

std::optional<Challenge> ChallengeService::inspect(const std::string& token) const {
  std::optional<Challenge> out;
  store_->update(token, [&](Challenge& c) { out = c; });
  return out;
}

// ---------------------------------------------------------------------------

ExpirySweeper::ExpirySweeper(ChallengeService& service, std::chrono::milliseconds period)
    : service_(service), period_(period) {
  worker_ = std::thread([this] {
    std::unique_lock lock(mu_);
    while (!cv_.wait_for(lock, period_, [this] { return stop_; })) {
      lock.unlock();
      service_.sweep_expired(service_.clock().now());
      lock.lock();
    }
  });
}

ExpirySweeper::~ExpirySweeper() {
  {
    std::lock_guard lock(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  worker_.join();
}

// ---------------------------------------------------------------------------

std::string client_fingerprint(const std::string& remote_addr, const std::string& site_key) {
  return sha256_hex(remote_addr + "\n" + site_key).substr(0, 32);
}

std::string format_rfc3339(TimePoint t) {
  const auto ms = duration_cast<milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000 - (ms % 1000 < 0 ? 1 : 0));
  const int frac = static_cast<int>(((ms % 1000) + 1000) % 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  const std::size_t len = std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%.*s.%03dZ", static_cast<int>(len), buf, frac);
  return out;
}

std::optional<TimePoint> parse_rfc3339(const std::string& s) {
  std::tm tm{};
  int ms = 0;
  char tail = 0;
  int consumed = 0;
  if (std::sscanf(s.c_str(), "%4d-%2d-%2dT%2d:%2d:%2d%n", &tm.tm_year, &tm.tm_mon, &tm.tm_mday, &tm.tm_hour,
                  &tm.tm_min, &tm.tm_sec, &consumed) != 6) {
    return std::nullopt;
  }
  const char* rest = s.c_str() + consumed;
  if (*rest == '.') {
    int digits = 0;
    ++rest;
    while (*rest >= '0' && *rest <= '9') {
      if (digits < 3) ms = ms * 10 + (*rest - '0');
      ++digits;
      ++rest;
    }
    if (digits == 0) return std::nullopt;
    for (; digits < 3; ++digits) ms *= 10;
  }
  tail = *rest;
  if (tail != 'Z' || rest[1] != '\0') return std::nullopt;
  tm.tm_year -= 1900;
  tm.tm_mon -= 1;
  const std::time_t secs = timegm(&tm);
  return TimePoint{} + std::chrono::seconds(secs) + milliseconds(ms);
}

}  // namespace acaptcha
