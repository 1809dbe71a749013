#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fdn {

// ---------------------------------------------------------------------------
// Error taxonomy. Every failure surfaces as one of these; the CLI maps them
// to exit codes (config -> 2, diverged/protocol -> 3, other -> 1).
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad shapes, bad hyper-parameters, invalid specs.
struct ConfigError : Error {
  using Error::Error;
};

// Invalid runtime data: labels out of range, input shape mismatch.
struct DataError : Error {
  using Error::Error;
};

// File format / filesystem problems.
struct IoError : Error {
  using Error::Error;
};

// Evaluation protocol violations (e.g. an attacker exceeding its budget).
struct ProtocolError : Error {
  using Error::Error;
};

// API misuse (non-scalar loss, backward called twice, ...).
struct UsageError : Error {
  using Error::Error;
};

// Training produced a non-finite loss; message names the offending step.
struct DivergedError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Hashing (FNV-1a, 64 bit). Used for run-directory names, checkpoint spec
// hashes and artifact manifests. Not cryptographic; stated as such in docs.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(s.data(), s.size());
}

inline std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 has a standardized bit stream, so the
// raw draws are reproducible across platforms; the mappings below use only
// shifts and IEEE arithmetic to keep derived values reproducible too.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(splitmix64(seed)) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() {
    return static_cast<double>(bits() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform01();
  }

  // Uniform over {0, ..., n-1}. Modulo bias is < 2^-60 for any n here.
  std::uint64_t uniform_int(std::uint64_t n) { return bits() % n; }

  // Standard normal via Box-Muller (pairs cached).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Independent stream for a named purpose, derived from a base seed.
  static Rng derive(std::uint64_t seed, std::string_view tag) {
    return Rng(splitmix64(seed ^ fnv1a64(tag)));
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Deterministic Fisher-Yates permutation of {0, ..., n-1}.
inline std::vector<std::int64_t> permutation(std::int64_t n, Rng& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (std::int64_t i = n - 1; i > 0; --i) {
    auto j = static_cast<std::int64_t>(
        rng.uniform_int(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Misc
// ---------------------------------------------------------------------------

inline int env_thread_override() {
  if (const char* v = std::getenv("FDN_THREADS")) {
    int n = std::atoi(v);
    if (n > 0) return n;
  }
  return 0;
}

template <typename T>
bool is_finite_value(T v) {
  return std::isfinite(static_cast<double>(v));
}

}  // namespace fdn
