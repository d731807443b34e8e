#pragma once

#include <stdexcept>
#include <string>

namespace debias {

inline constexpr const char* kToolName = "debias";
inline constexpr const char* kToolVersion = "0.1.0";

// Domain error: invalid input data, violated preconditions, malformed files.
// The CLI maps these to exit code 1; usage problems exit with 2.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

template <typename... Parts>
[[noreturn]] inline void fail(const Parts&... parts) {
    std::string msg;
    ((msg += parts), ...);
    throw Error(msg);
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

}  // namespace debias
