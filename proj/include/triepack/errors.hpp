#pragma once

#include <stdexcept>
#include <string>

namespace triepack {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input record. `line` is 1-based, 0 when not tied to a line.
class InputError : public Error {
public:
    InputError(std::size_t line, const std::string& what)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Broken tree shape: parent cycles, dangling parents, role/tool mismatches.
class StructureError : public Error {
public:
    using Error::Error;
};

// A trajectory does not fit the token budget.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

// Input exceeds the size an exhaustive or desk-scale routine accepts.
class SizeError : public Error {
public:
    using Error::Error;
};

}  // namespace triepack
