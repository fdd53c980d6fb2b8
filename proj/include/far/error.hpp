#pragma once

#include <stdexcept>
#include <string>

namespace far {

// Exception families map onto CLI exit codes (usage 1, io/format 2, numeric 3).
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& what) {
    if (!ok) throw UsageError(what);
}

} // namespace far
