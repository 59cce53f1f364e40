#pragma once

#include <stdexcept>
#include <string>

namespace cmswitch {

// Bad user input: unreadable file, schema violation, invariant failure.
class input_error : public std::runtime_error {
public:
    explicit input_error(const std::string& what) : std::runtime_error(what) {}
};

// The workload cannot be mapped onto the configured chip at all.
class infeasible_error : public std::runtime_error {
public:
    explicit infeasible_error(const std::string& what) : std::runtime_error(what) {}
};

// A consistency check inside the compiler or simulator failed; always a bug.
class internal_error : public std::runtime_error {
public:
    explicit internal_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cmswitch
