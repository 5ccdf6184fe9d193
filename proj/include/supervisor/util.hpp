#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace supervisor {

// FNV-1a over bytes, with an optional seed folded into the offset basis.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0);

// Order-sensitive combination of seeds (splitmix64 finalizer per step).
std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);

// Uniform double in [0, 1) from a single 64-bit seed. Portable across
// standard libraries: uses mt19937_64 output bits directly.
double unit_uniform(std::uint64_t seed);

std::string hex64(std::uint64_t value);

std::string base64_encode(std::span<const std::uint8_t> bytes);
// Throws std::invalid_argument on malformed input.
std::vector<std::uint8_t> base64_decode(std::string_view text);

std::string to_lower(std::string_view text);

// Lowercased alphanumeric words; everything else separates.
std::vector<std::string> words(std::string_view text);

// Whitespace-delimited token count.
std::size_t whitespace_tokens(std::string_view text);

bool contains_word(const std::vector<std::string>& haystack, std::string_view word);

// Lowercase substring search.
bool contains_phrase(std::string_view text_lower, std::string_view phrase);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

// Writes `contents` to `path` atomically (temp file in the same directory,
// fsync-free rename). Throws std::runtime_error on I/O failure.
void write_file_atomic(const std::string& path, std::string_view contents);

std::string read_file(const std::string& path);

}  // namespace supervisor
