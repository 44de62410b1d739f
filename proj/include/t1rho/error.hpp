#pragma once

#include <stdexcept>
#include <string>

namespace t1rho {

// Single exception type for contract violations and malformed inputs.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw Error(msg);
}

} // namespace t1rho
