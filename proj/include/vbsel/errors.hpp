#pragma once

#include <stdexcept>
#include <string>

namespace vbsel {

/// Bad input: malformed file, violated precondition, invalid config.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File could not be opened, read or written.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A NaN or infinity showed up where only finite values are allowed.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace vbsel
