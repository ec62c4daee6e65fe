#pragma once

#include <string>
#include <string_view>

namespace vbsel {

/// Shortest decimal form that parses back to the same double.
std::string format_double(double value);

/// Strict parse of a whole token; returns false on trailing junk or empty input.
bool parse_double(std::string_view text, double& out);
bool parse_int(std::string_view text, long long& out);

/// Rounds to a decimal with at most 12 significant digits, then reparses.
/// Used for threshold grids so 0.5 + 4*0.05 lands on the double nearest 0.7.
double snap_decimal(double value);

}  // namespace vbsel
