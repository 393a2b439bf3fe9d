#pragma once

#include <stdexcept>
#include <string>

namespace pem {

/// Base class for every error this library raises on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Token grammar or pseudo-function syntax problem.
class ParseError : public Error {
public:
    explicit ParseError(const std::string& what) : Error(what) {}
};

/// SQLite-level failure, carries the engine message verbatim.
class SqlError : public Error {
public:
    explicit SqlError(const std::string& what) : Error(what) {}
};

} // namespace pem
