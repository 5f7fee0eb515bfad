#pragma once

#include <stdexcept>
#include <string>

namespace diffbatt {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define DIFFBATT_ERROR(Name)                                  \
    class Name : public Error {                               \
    public:                                                   \
        explicit Name(const std::string& what) : Error(what) {} \
    }

DIFFBATT_ERROR(ParseError);        // malformed input text
DIFFBATT_ERROR(SchemaError);       // well-formed input that violates the file schema
DIFFBATT_ERROR(ValidationError);   // domain invariant violated (monotone cycles, ranges)
DIFFBATT_ERROR(ConfigError);       // inconsistent configuration or model/schedule mismatch
DIFFBATT_ERROR(ParameterError);    // argument outside its admissible range
DIFFBATT_ERROR(ShapeError);        // tensor or vector sizes disagree
DIFFBATT_ERROR(IndexError);        // diffusion step or element index out of range
DIFFBATT_ERROR(NumericError);      // non-finite loss or divergence
DIFFBATT_ERROR(CorruptionError);   // checkpoint checksum or truncation failure
DIFFBATT_ERROR(IncompatibleError); // checkpoint version or shape incompatibility
DIFFBATT_ERROR(IoError);

#undef DIFFBATT_ERROR

}  // namespace diffbatt
