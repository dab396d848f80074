#pragma once

#include <stdexcept>
#include <string>

namespace gm {

// Error taxonomy mirrored by the C API status codes and the CLI exit codes:
// validation/numeric failures exit 1, I/O and config failures exit 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ValidationError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

}  // namespace gm
