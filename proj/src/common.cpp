#include "mother/common.hpp"

#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace mother {

double sum_squared_diff(std::span<const float> a, std::span<const float> b) {
  const float* pa = a.data();
  const float* pb = b.data();
  return blocked_reduce(static_cast<int64_t>(a.size()), [&](int64_t i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    return d * d;
  });
}

double sum_values(std::span<const float> v) {
  const float* p = v.data();
  return blocked_reduce(static_cast<int64_t>(v.size()),
                        [&](int64_t i) { return static_cast<double>(p[i]); });
}

double pearson_correlation(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw Error("pearson_correlation: need two equally sized samples");
  }
  const int64_t n = static_cast<int64_t>(x.size());
  KahanSum sx, sy;
  for (int64_t i = 0; i < n; ++i) {
    sx.add(x[i]);
    sy.add(y[i]);
  }
  const double mx = sx.value() / static_cast<double>(n);
  const double my = sy.value() / static_cast<double>(n);
  KahanSum sxx, syy, sxy;
  for (int64_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx.add(dx * dx);
    syy.add(dy * dy);
    sxy.add(dx * dy);
  }
  const double denom = std::sqrt(sxx.value()) * std::sqrt(syy.value());
  if (denom == 0.0) {
    throw Error("pearson_correlation: constant sample");
  }
  return sxy.value() / denom;
}

int resolve_threads(int requested) {
  if (requested > 0) {
    return requested;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int64_t n, int threads, const std::function<void(int64_t)>& fn) {
  if (n <= 0) {
    return;
  }
  const int workers =
      static_cast<int>(std::min<int64_t>(resolve_threads(threads), n));
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::mutex err_mutex;
  std::exception_ptr first_error;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  const int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int64_t begin = w * chunk;
    const int64_t end = std::min(n, begin + chunk);
    if (begin >= end) {
      break;
    }
    pool.emplace_back([&, begin, end] {
      try {
        for (int64_t i = begin; i < end; ++i) {
          fn(i);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mutex);
        if (!first_error) {
          first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }
}

uint64_t mix_seed(uint64_t seed, std::string_view tag) {
  // FNV-1a over the tag, then a splitmix64 finalizer round.
  uint64_t h = 1469598103934665603ull;
  for (const char c : tag) {
    h ^= static_cast<uint8_t>(c);
    h *= 1099511628211ull;
  }
  uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

uint16_t f32_to_f16(float f) {
  const uint32_t x = std::bit_cast<uint32_t>(f);
  const uint32_t sign = (x >> 16) & 0x8000u;
  const uint32_t exp_bits = (x >> 23) & 0xffu;
  uint32_t man = x & 0x7fffffu;
  if (exp_bits == 0xffu) {  // inf / nan
    return static_cast<uint16_t>(
        sign | 0x7c00u | (man ? (0x200u | (man >> 13)) : 0u));
  }
  const int32_t exp = static_cast<int32_t>(exp_bits) - 127 + 15;
  if (exp >= 31) {  // overflow
    return static_cast<uint16_t>(sign | 0x7c00u);
  }
  if (exp <= 0) {  // subnormal half (or underflow to zero)
    if (exp < -10) {
      return static_cast<uint16_t>(sign);
    }
    man |= 0x800000u;
    const int shift = 14 - exp;  // 14..24
    uint32_t val = man >> shift;
    const uint32_t rem = man & ((1u << shift) - 1u);
    const uint32_t half = 1u << (shift - 1);
    if (rem > half || (rem == half && (val & 1u))) {
      ++val;
    }
    return static_cast<uint16_t>(sign | val);
  }
  uint32_t val = sign | (static_cast<uint32_t>(exp) << 10) | (man >> 13);
  const uint32_t rem = man & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (val & 1u))) {
    ++val;  // mantissa carry may bump the exponent; that is the correct result
  }
  return static_cast<uint16_t>(val);
}

float f16_to_f32(uint16_t h) {
  const uint32_t sign = static_cast<uint32_t>(h & 0x8000u) << 16;
  const uint32_t exp = (h >> 10) & 0x1fu;
  const uint32_t man = h & 0x3ffu;
  uint32_t bits;
  if (exp == 0) {
    if (man == 0) {
      bits = sign;
    } else {  // subnormal: renormalize (value = man * 2^-24)
      int e = 0;
      uint32_t m = man;
      while (!(m & 0x400u)) {
        m <<= 1;
        ++e;
      }
      m &= 0x3ffu;
      bits = sign | (static_cast<uint32_t>(113 - e) << 23) | (m << 13);
    }
  } else if (exp == 31) {
    bits = sign | 0x7f800000u | (man << 13);
  } else {
    bits = sign | ((exp - 15 + 127) << 23) | (man << 13);
  }
  return std::bit_cast<float>(bits);
}

}  // namespace mother
