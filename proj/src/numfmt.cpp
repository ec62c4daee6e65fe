#include "vbsel/numfmt.hpp"

#include <charconv>
#include <cstdio>
#include <system_error>

namespace vbsel {

std::string format_double(double value)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

bool parse_double(std::string_view text, double& out)
{
    if (text.empty()) return false;
    // from_chars does not accept a leading '+'.
    if (text.front() == '+') text.remove_prefix(1);
    const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

bool parse_int(std::string_view text, long long& out)
{
    if (text.empty()) return false;
    if (text.front() == '+') text.remove_prefix(1);
    const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
    return res.ec == std::errc() && res.ptr == text.data() + text.size();
}

double snap_decimal(double value)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12g", value);
    double out = value;
    parse_double(buf, out);
    return out;
}

}  // namespace vbsel
