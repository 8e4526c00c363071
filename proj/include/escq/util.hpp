#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace escq {

// Seeded random source. Only the raw mt19937_64 stream is used so draws are
// identical across standard library implementations; std distributions are
// implementation-defined and are avoided.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::size_t uniform_index(std::size_t n);

  // Uniform real in [0, 1) with 53 random bits.
  double uniform01();

  // Index drawn proportionally to nonnegative weights.
  std::size_t categorical(std::span<const double> weights);

 private:
  std::mt19937_64 engine_;
};

// SplitMix64 finalizer; used to derive independent stream seeds.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string sha256_hex(std::string_view bytes);
// Same digest git computes for a blob object: sha1("blob <len>\0" + bytes).
std::string git_blob_sha1(std::string_view bytes);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

std::string to_lower(std::string_view text);
std::string trim(std::string_view text);
// Lowercases and collapses internal whitespace runs to single spaces.
std::string normalize_name(std::string_view text);
// Lowercase whitespace split; the tokenization shared by all text metrics.
std::vector<std::string> metric_tokens(std::string_view text);
// Plain whitespace split, case preserved.
std::vector<std::string> split_whitespace(std::string_view text);

// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

}  // namespace escq
