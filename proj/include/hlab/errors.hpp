#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hlab {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// bad arguments: out-of-range indices, p < 1, horizontal directions
struct DomainError : Error {
    using Error::Error;
};

// mismatched grids or inconsistent function systems
struct StructuralError : Error {
    using Error::Error;
};

// should not happen; usually floating point trouble
struct InternalError : Error {
    using Error::Error;
};

// memory guard or enumeration budget
struct ResourceError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct GenericityError : Error {
    using Error::Error;
};

struct ConstructionError : Error {
    ConstructionError(std::uint64_t vertex, std::string constraint, const std::string& what)
        : Error("vertex " + std::to_string(vertex) + " [" + constraint + "]: " + what),
          vertex(vertex), constraint(std::move(constraint)) {}
    std::uint64_t vertex;
    std::string constraint;
};

} // namespace hlab
