#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mother {

inline constexpr const char* kToolName = "mother";
inline constexpr const char* kToolVersion = "0.1.0";

/// Domain error for everything the toolkit rejects (bad files, bad
/// configuration, numerically degenerate inputs). The CLI maps it to exit 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Compensated reduction
// ---------------------------------------------------------------------------

/// Neumaier-compensated accumulator. Call add() in a fixed order when bitwise
/// reproducibility matters.
struct KahanSum {
  double sum = 0.0;
  double comp = 0.0;

  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }

  double value() const { return sum + comp; }
};

/// Blocked reduction: plain accumulation inside fixed-size blocks (the inner
/// loop vectorizes), Neumaier across block sums. Large layers keep full
/// precision without paying Kahan per element.
template <class Term>
double blocked_reduce(int64_t n, Term&& term) {
  constexpr int64_t kBlock = 4096;
  KahanSum total;
  for (int64_t b = 0; b < n; b += kBlock) {
    const int64_t e = std::min(n, b + kBlock);
    double s = 0.0;
    for (int64_t i = b; i < e; ++i) {
      s += term(i);
    }
    total.add(s);
  }
  return total.value();
}

double sum_squared_diff(std::span<const float> a, std::span<const float> b);
double sum_values(std::span<const float> v);

/// Pearson correlation coefficient; requires both spans non-constant.
double pearson_correlation(std::span<const double> x, std::span<const double> y);

// ---------------------------------------------------------------------------
// Parallel execution
// ---------------------------------------------------------------------------

/// Resolve a requested worker count: 0 means all available cores.
int resolve_threads(int requested);

/// Run fn(i) for i in [0, n) across `threads` workers with a static
/// contiguous partition. Exceptions are captured and rethrown (first wins).
/// Work assignment does not depend on scheduling, so results written by index
/// are identical for any thread count.
void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn);

// ---------------------------------------------------------------------------
// Deterministic RNG
// ---------------------------------------------------------------------------

/// mt19937_64 engine with our own value transforms. std::*_distribution is
/// implementation-defined; these transforms are pinned so the same seed gives
/// the same stream on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    const uint64_t range = static_cast<uint64_t>(hi - lo) + 1;
    const auto wide = static_cast<unsigned __int128>(engine_()) * range;
    return lo + static_cast<int64_t>(wide >> 64);
  }

  /// Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derive a child seed from (seed, tag). Used to give every simulated node an
/// independent stream keyed by its path, so sibling generation order (and
/// thread count) never changes the output.
uint64_t mix_seed(uint64_t seed, std::string_view tag);

// ---------------------------------------------------------------------------
// IEEE-754 half precision
// ---------------------------------------------------------------------------

uint16_t f32_to_f16(float f);   // round-to-nearest-even
float f16_to_f32(uint16_t h);

}  // namespace mother
