#pragma once

#include <stdexcept>
#include <string>

namespace blockspot {

// Base for all library errors. Subtypes that indicate bad user input derive
// from InputError so the CLI can map them to exit code 2.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputError : Error {
    using Error::Error;
};

}  // namespace blockspot
