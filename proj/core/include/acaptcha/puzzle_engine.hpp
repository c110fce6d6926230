#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "acaptcha/image_pool.hpp"

namespace acaptcha {

enum class Polarity : std::uint8_t { find_displeasing, find_pleasing };
enum class CategoryMode : std::uint8_t { mixed, homogeneous };

std::string_view to_string(Polarity p) noexcept;
std::string_view to_string(CategoryMode m) noexcept;

/// Valence of the images the user is asked to click.
constexpr Valence target_valence(Polarity p) noexcept {
  return p == Polarity::find_displeasing ? Valence::displeasing : Valence::pleasing;
}

/// Parameters of a puzzle family: n images, k of which are targets.
struct PuzzleSpec {
  int n = 9;
  int k = 1;
  Polarity polarity = Polarity::find_displeasing;
  CategoryMode category_mode = CategoryMode::mixed;
  int escalation_level = 0;

  /// 1 <= k < n and n <= 64.
  bool valid() const noexcept { return k >= 1 && k < n && n <= 64 && escalation_level >= 0; }
  /// True for the 9..12 image band recommended for production puzzles.
  bool in_default_band() const noexcept { return n >= 9 && n <= 12; }

  friend bool operator==(const PuzzleSpec&, const PuzzleSpec&) = default;
};

class InvalidSpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Number of k-subsets of an n-set, exact. Throws std::domain_error when
/// k > n or n > 64.
std::uint64_t binomial(std::uint64_t n, std::uint64_t k);

/// An exact probability 1/denominator (numerator kept general for table rows).
struct Probability {
  std::uint64_t numerator = 1;
  std::uint64_t denominator = 1;

  double value() const noexcept { return static_cast<double>(numerator) / static_cast<double>(denominator); }
  /// Percentage rounded to `decimals` places, with a trailing ".0" dropped
  /// ("11.1%", "1.8%", "25%").
  std::string percent(int decimals = 1) const;
  std::string fraction() const;

  friend bool operator==(const Probability&, const Probability&) = default;
};

/// Chance that a uniformly random k-subset of the n slots is the answer set.
Probability random_guess_probability(const PuzzleSpec& spec);

struct PuzzleSlot {
  ImageRecord image;
  TransformSeed seed;
};

struct Puzzle {
  PuzzleSpec spec;
  std::vector<PuzzleSlot> slots;
  std::set<int> answer_set;
  std::string instruction;
};

/// The text shown above the grid. Implies k only through singular/plural.
std::string instruction_for(Polarity polarity, int k);

/// Draws k target-valence and n-k opposite-valence images, shuffles them
/// into slots and gives every slot a fresh transform seed.
/// Throws InvalidSpecError or InsufficientPoolError.
Puzzle generate_puzzle(const PuzzleSpec& spec, const PoolSnapshot& pool, Rng& rng);

/// Exact set equality between the selection and the answer set. Throws
/// std::out_of_range for an index outside [0, n).
bool verify_answer(const Puzzle& puzzle, const std::set<int>& selection);

/// One step along the fixed schedule (9,1) -> (12,2) -> (12,3); the last
/// level maps to itself. Polarity and category mode carry over.
PuzzleSpec escalate(const PuzzleSpec& spec);

/// Highest escalation level.
inline constexpr int kMaxEscalationLevel = 2;

/// `spec` escalated `levels` times.
PuzzleSpec escalate_by(PuzzleSpec spec, int levels);

}  // namespace acaptcha
