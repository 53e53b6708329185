#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace sal {

// Error raised for contract violations (bad shapes, invalid configs,
// corrupt files). The message names the offending quantity so callers can
// surface it directly.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {
inline void format_into(std::ostringstream&) {}

template <typename A, typename... Rest>
void format_into(std::ostringstream& os, const A& a, const Rest&... rest) {
    os << a;
    format_into(os, rest...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void raise(const Args&... args) {
    std::ostringstream os;
    detail::format_into(os, args...);
    throw Error(os.str());
}

template <typename... Args>
void check(bool cond, const Args&... args) {
    if (!cond) raise(args...);
}

}  // namespace sal
