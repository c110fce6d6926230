#include "acaptcha/puzzle_engine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace acaptcha {

std::string_view to_string(Polarity p) noexcept {
  return p == Polarity::find_displeasing ? "find-displeasing" : "find-pleasing";
}

std::string_view to_string(CategoryMode m) noexcept {
  return m == CategoryMode::mixed ? "mixed" : "homogeneous";
}

std::uint64_t binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) throw std::domain_error("binomial: k > n");
  if (n > 64) throw std::domain_error("binomial: n > 64 is not supported");
  k = std::min(k, n - k);
  // r holds C(n, i), so r * (n - i) is divisible by i + 1. The 128-bit
  // intermediate keeps the product from overflowing up to n = 64.
  unsigned __int128 r = 1;
  for (std::uint64_t i = 0; i < k; ++i) {
    r = r * (n - i) / (i + 1);
  }
  return static_cast<std::uint64_t>(r);
}

std::string Probability::percent(int decimals) const {
  const double pct = 100.0 * value();
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, pct);
  std::string s = buf;
  if (decimals > 0) {
    const auto dot = s.find('.');
    if (s.find_first_not_of('0', dot + 1) == std::string::npos) s.erase(dot);
  }
  return s + "%";
}

std::string Probability::fraction() const {
  return std::to_string(numerator) + "/" + std::to_string(denominator);
}

Probability random_guess_probability(const PuzzleSpec& spec) {
  if (!spec.valid()) throw InvalidSpecError("random_guess_probability: invalid puzzle spec");
  return {1, binomial(static_cast<std::uint64_t>(spec.n), static_cast<std::uint64_t>(spec.k))};
}

std::string instruction_for(Polarity polarity, int k) {
  const bool plural = k > 1;
  if (polarity == Polarity::find_displeasing) {
    return plural ? "click on the images that do not look nice" : "click on the image that does not look nice";
  }
  return plural ? "click on the images that look nice" : "click on the image that looks nice";
}

Puzzle generate_puzzle(const PuzzleSpec& spec, const PoolSnapshot& pool, Rng& rng) {
  if (!spec.valid()) throw InvalidSpecError("generate_puzzle: invalid puzzle spec");
  const Valence target = target_valence(spec.polarity);
  const Valence other = opposite(target);
  const auto k = static_cast<std::size_t>(spec.k);
  const auto rest = static_cast<std::size_t>(spec.n - spec.k);

  std::optional<std::string> category;
  if (spec.category_mode == CategoryMode::homogeneous) {
    std::vector<const std::string*> eligible;
    for (const auto& c : pool.categories()) {
      if (pool.count(target, c) >= k && pool.count(other, c) >= rest) eligible.push_back(&c);
    }
    if (eligible.empty()) {
      throw InsufficientPoolError(static_cast<std::size_t>(spec.n), 0,
                                  "no category holds " + std::to_string(k) + " " +
                                      std::string(to_string(target)) + " and " + std::to_string(rest) +
                                      " " + std::string(to_string(other)) + " images");
    }
    category = *eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
  }

  std::vector<ImageRecord> targets = pool.sample_images(target, category, k, rng);
  std::vector<ImageRecord> others = pool.sample_images(other, category, rest, rng);

  // Which slots hold targets: a uniform k-subset of [0, n) via a shuffled index list.
  std::vector<int> order(static_cast<std::size_t>(spec.n));
  for (int i = 0; i < spec.n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::shuffle(order.begin(), order.end(), rng);

  Puzzle puzzle;
  puzzle.spec = spec;
  puzzle.instruction = instruction_for(spec.polarity, spec.k);
  puzzle.slots.resize(static_cast<std::size_t>(spec.n));
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto slot = static_cast<std::size_t>(order[i]);
    if (i < k) {
      puzzle.slots[slot].image = std::move(targets[i]);
      puzzle.answer_set.insert(order[i]);
    } else {
      puzzle.slots[slot].image = std::move(others[i - k]);
    }
  }
  for (auto& slot : puzzle.slots) slot.seed = TransformSeed{rng()};
  return puzzle;
}

bool verify_answer(const Puzzle& puzzle, const std::set<int>& selection) {
  for (int idx : selection) {
    if (idx < 0 || idx >= puzzle.spec.n) {
      throw std::out_of_range("selection index " + std::to_string(idx) + " outside [0, " +
                              std::to_string(puzzle.spec.n) + ")");
    }
  }
  return selection == puzzle.answer_set;
}

namespace {

struct Step {
  int n;
  int k;
};

constexpr std::array<Step, kMaxEscalationLevel + 1> kSchedule{{{9, 1}, {12, 2}, {12, 3}}};

}  // namespace

PuzzleSpec escalate(const PuzzleSpec& spec) {
  if (spec.escalation_level >= kMaxEscalationLevel) return spec;
  PuzzleSpec next = spec;
  next.escalation_level = spec.escalation_level + 1;
  const Step& step = kSchedule[static_cast<std::size_t>(next.escalation_level)];
  next.n = step.n;
  next.k = step.k;
  return next;
}

PuzzleSpec escalate_by(PuzzleSpec spec, int levels) {
  for (int i = 0; i < levels && spec.escalation_level < kMaxEscalationLevel; ++i) spec = escalate(spec);
  return spec;
}

}  // namespace acaptcha
