#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace pixellm {

inline constexpr const char* kVersion = "1.0.0";

// Error taxonomy. Every throwing path in the library uses one of these so the
// CLI can map failures to exit codes and single-line messages.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct InputError : Error {
  using Error::Error;
};
struct FormatError : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// UTF-8

// Decodes UTF-8 into Unicode scalar values. Invalid byte sequences decode to
// U+FFFD one byte at a time so the mapping is total.
std::vector<char32_t> utf8_decode(const std::string& text);
std::string utf8_encode(const std::vector<char32_t>& scalars);
std::string utf8_encode_one(char32_t scalar);
bool utf8_valid(const std::string& text);

// ---------------------------------------------------------------------------
// Deterministic RNG
//
// The standard engines are portable but the distributions are not; everything
// stochastic in this library goes through this generator so runs reproduce
// across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  uint64_t next_u64() {
    // splitmix64
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, n), unbiased via rejection.
  uint64_t next_below(uint64_t n);
  // Uniform double in [0, 1) with 53 bits.
  double next_double();
  // Standard normal via Box-Muller (no cached spare; one pair per call).
  double next_normal();
  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// Stable seed derivation for independent streams (sweep cells, batches).
uint64_t hash_combine(uint64_t seed, const std::string& tag);
uint64_t hash_combine(uint64_t seed, uint64_t value);

// ---------------------------------------------------------------------------
// Hashing

// SHA-256 digest (32 raw bytes) and lowercase-hex rendering.
std::vector<uint8_t> sha256(const void* data, size_t len);
std::vector<uint8_t> sha256(const std::string& data);
std::string to_hex(const std::vector<uint8_t>& bytes);
std::string sha256_hex(const std::string& data);

// ---------------------------------------------------------------------------
// Files

std::string read_file(const std::string& path);            // throws InputError
void write_file(const std::string& path, const std::string& data);
bool file_exists(const std::string& path);
// One document per line; strips trailing \r; drops a trailing empty line.
std::vector<std::string> read_lines(const std::string& path);

// ---------------------------------------------------------------------------
// Flat key=value config files
//
// Format: one `key=value` per line; '#' starts a comment; blank lines ignored.
// Values keep internal whitespace; keys and values are trimmed at the edges.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text);      // throws FormatError
  static KeyValueConfig load(const std::string& path);       // throws InputError

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;    // throws FormatError on bad number
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Deterministic (sorted) serialization; doubles round-trip exactly.
  std::string serialize() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

// Shortest decimal form that round-trips the double exactly.
std::string format_double(double v);

std::vector<std::string> split(const std::string& s, char sep);
std::string trim(const std::string& s);

}  // namespace pixellm
