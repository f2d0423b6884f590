#pragma once

#include <stdexcept>
#include <string>

namespace ptffsr {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Tensor shape disagreement (matmul inner dims, elementwise mismatch, ...).
struct DimensionError : Error {
    using Error::Error;
};

// A caller handed an op arguments outside its contract.
struct InputError : Error {
    using Error::Error;
};

// Bad ProtocolConfig / ModelConfig values or unknown config keys.
struct ConfigError : Error {
    using Error::Error;
};

// CSV header/row does not match the declared schema.
struct SchemaError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

// Round-level contract violations (e.g. download requested with no uploads).
struct ProtocolError : Error {
    using Error::Error;
};

}  // namespace ptffsr
