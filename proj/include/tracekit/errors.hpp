#pragma once

#include <stdexcept>
#include <string>

namespace tracekit {

// Base type for everything thrown by this library.
class error : public std::runtime_error {
public:
    explicit error(const std::string& what_arg) : std::runtime_error(what_arg) {}
};

}  // namespace tracekit
