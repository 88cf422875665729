#pragma once

#include <stdexcept>
#include <string>

namespace sdm {

/// Base of every error raised by the library. `kind()` is stable and is what
/// the command-line tool maps onto exit codes.
class Error : public std::runtime_error {
public:
    enum class Kind { config, argument, numeric, state, parse, io, version };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(Kind::config, "config error: " + what) {}
};

struct ArgumentError : Error {
    explicit ArgumentError(const std::string& what) : Error(Kind::argument, "argument error: " + what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(Kind::numeric, "numeric error: " + what) {}
};

struct StateError : Error {
    explicit StateError(const std::string& what) : Error(Kind::state, "state error: " + what) {}
};

struct ParseError : Error {
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error(Kind::parse, "parse error: " + path + ":" + std::to_string(line) + ": " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct IoError : Error {
    explicit IoError(const std::string& what) : Error(Kind::io, "I/O error: " + what) {}
};

struct VersionError : Error {
    explicit VersionError(const std::string& what) : Error(Kind::version, "version error: " + what) {}
};

} // namespace sdm
