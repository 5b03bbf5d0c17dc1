#pragma once

#include <stdexcept>
#include <string>

namespace tiltfield {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class ShapeMismatch : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    enum class Kind {
        NotFound,
        Unwritable,
        BadMagic,
        UnsupportedMode,
        Truncated,
        Parse,
        Checksum,
    };

    IoError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

}  // namespace tiltfield
