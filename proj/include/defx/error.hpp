#pragma once

#include <stdexcept>
#include <string>

namespace defx {

/// Base for every failure raised by the library. The category maps onto the
/// CLI exit codes (usage 1, data 2, numerical 3).
class Error : public std::runtime_error {
public:
    enum class Kind { usage, data, numerical };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class UsageError : public Error {
public:
    explicit UsageError(const std::string& what) : Error(Kind::usage, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(Kind::data, what) {}
};

class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(Kind::numerical, what) {}
};

/// Rethrows `e` as its concrete subclass with `prefix` prepended.
[[noreturn]] inline void rethrow_with_prefix(const Error& e, const std::string& prefix) {
    const std::string what = prefix + e.what();
    switch (e.kind()) {
    case Error::Kind::usage: throw UsageError(what);
    case Error::Kind::numerical: throw NumericalError(what);
    case Error::Kind::data: break;
    }
    throw DataError(what);
}

inline int exit_code(const Error& e) noexcept {
    switch (e.kind()) {
    case Error::Kind::usage: return 1;
    case Error::Kind::data: return 2;
    case Error::Kind::numerical: return 3;
    }
    return 2;
}

} // namespace defx
