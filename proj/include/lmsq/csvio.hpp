#pragma once

#include <charconv>
#include <string>
#include <string_view>

#include "lmsq/errors.hpp"

namespace lmsq {

// Shortest decimal form that round-trips to the same double.
inline std::string fmt_double(double v) {
    char buf[40];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view tok, bool& ok) {
    double v = 0.0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    ok = res.ec == std::errc() && res.ptr == tok.data() + tok.size();
    return v;
}

inline long long parse_int(std::string_view tok, bool& ok) {
    long long v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    ok = res.ec == std::errc() && res.ptr == tok.data() + tok.size();
    return v;
}

} // namespace lmsq
