#pragma once
// Shared plumbing: error type, deterministic RNG, UTF-8 helpers, hashing, file IO.

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace gloss {

// ---------------------------------------------------------------------------
// Errors. Every failure in the library throws Error with a stable class so the
// CLI can print one machine-parsable line per failure.

enum class Errc {
  invalid_argument,
  shape_mismatch,
  parse_error,
  io_error,
  corrupt_checkpoint,
  version_mismatch,
  numeric_error,
  train_diverged,
  config_error,
  unsupported,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& msg)
      : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

inline void require(bool cond, Errc code, const std::string& msg) {
  if (!cond) fail(code, msg);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. mt19937_64 gives a bit-stable stream on every platform;
// the distribution transforms are hand-rolled here because the std::*
// distributions are allowed to differ between standard libraries.

class Rng {
 public:
  explicit Rng(uint64_t seed) : seed_(seed), eng_(seed) {}

  uint64_t seed() const { return seed_; }
  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Unbiased integer in [0, n) via rejection sampling.
  int64_t below(int64_t n);

  // Standard normal via Box-Muller, one spare cached.
  double normal();

  // Normal(0, stddev) re-drawn until |z| <= clip standard deviations.
  double trunc_normal(double stddev, double clip = 2.0);

  // Poisson via Knuth's product-of-uniforms method (fine for small lambda).
  int poisson(double lambda);

  // Child stream that depends only on this stream's seed and the label, not
  // on how much of the parent stream has been consumed.
  Rng fork(std::string_view label) const;

 private:
  uint64_t seed_;
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ---------------------------------------------------------------------------
// UTF-8. Everything downstream works on whole codepoints; invalid input is a
// parse error, never silently patched.

std::u32string utf8_decode(std::string_view s);
std::string utf8_encode(std::u32string_view s);
std::string utf8_encode_one(char32_t c);
size_t utf8_length(std::string_view s);

// ---------------------------------------------------------------------------
// FNV-1a 64-bit, used for input hashes in run manifests and for seeding
// child RNG streams.

inline constexpr uint64_t kFnvBasis = 14695981039346656037ull;
inline constexpr uint64_t kFnvPrime = 1099511628211ull;

inline uint64_t fnv1a(const void* data, size_t len, uint64_t h = kFnvBasis) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

inline uint64_t fnv1a(std::string_view s, uint64_t h = kFnvBasis) {
  return fnv1a(s.data(), s.size(), h);
}

std::string to_hex(uint64_t v);

// ---------------------------------------------------------------------------
// File IO. Writes go through a temp file + rename so partially written
// checkpoints or manifests are never observed.

std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view content);
uint64_t hash_file(const std::string& path);

// Splits on '\n', dropping a trailing empty segment (final newline).
std::vector<std::string> split_lines(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);
std::vector<std::string> split(std::string_view text, std::string_view sep);

}  // namespace gloss
