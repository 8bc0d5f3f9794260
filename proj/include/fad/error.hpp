#pragma once

#include <stdexcept>
#include <string>

namespace fad {

// Single exception type for every contract violation in the library. The
// message is a one-line, machine-parsable description (the CLI prints it
// verbatim on failure).
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) {
        throw Error(msg);
    }
}

} // namespace fad
