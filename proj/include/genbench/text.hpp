#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace genbench {

/// Shortest round-trip decimal form; NaN prints as "nan".
std::string format_double(double v);
/// Undefined values print as "nan".
std::string format_optional(const std::optional<double>& v);

std::string trim(std::string_view s);
std::vector<std::string> split_csv(std::string_view line);
/// Accepts "nan". Throws ConfigError on malformed input.
double parse_double(std::string_view s);

}  // namespace genbench
