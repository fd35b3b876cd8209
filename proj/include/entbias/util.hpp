#pragma once

#include <cstdint>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace entbias {

using Json = nlohmann::json;

/// Hex-encoded SHA-256 of `bytes`.
std::string sha256_hex(std::string_view bytes);

/// Stable 64-bit hash (FNV-1a) used to derive seeds and mock noise.
std::uint64_t stable_hash(std::string_view bytes, std::uint64_t seed = 0);

/// SplitMix64 step; good enough to turn a hash into well-mixed bits.
std::uint64_t splitmix64(std::uint64_t x);

/// Deterministic standard normal draw keyed by `key`.
double keyed_normal(std::uint64_t key);

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Reads a line-delimited JSON record stream. Blank lines are skipped; a line
/// that fails to parse raises Error(kInvalidInput) naming the line number.
std::vector<Json> read_json_lines(std::istream& in, std::string_view what);

/// Shortest round-trip decimal representation of a double.
std::string format_double(double v);

}  // namespace entbias
