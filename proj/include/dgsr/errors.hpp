#pragma once

#include <stdexcept>
#include <string>

namespace dgsr {

// Caller supplied something malformed (bad shape, bad range, unreadable input).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// The operation is valid but the object is not in a state that allows it
// (missing checkpoint components, adapters not injected, ...).
class StateError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// A persisted artifact could not be parsed.
class LoadError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace dgsr
