#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace latentcast {

inline constexpr const char* kVersion = "0.1.0";

// Raised when tensor/matrix shapes are incompatible.
class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised on non-finite values where finiteness is a precondition.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised on inconsistent model/run configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised on API misuse (bad argument values, consumed tape, ...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when an observation time cannot be aligned to the state clock.
class TemporalAlignError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// splitmix64: cheap stateless stream derivation. All training-time randomness
// is keyed by (seed, epoch, item, purpose) so interrupted runs resume exactly.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(seed ^ 0x6c617463u) + a) + splitmix64(b + 0x9e37u) + c);
}

}  // namespace latentcast
