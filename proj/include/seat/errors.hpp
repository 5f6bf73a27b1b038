#pragma once

#include <stdexcept>
#include <string>

namespace seat {

// Error taxonomy. The CLI maps these onto distinct exit codes:
//   ValidationError -> 2, StructuralError -> 3, NumericError -> 4.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, bad arguments, violated preconditions.
struct ValidationError : Error {
    using Error::Error;
};

// Generator cannot produce as many unique items as requested.
struct CapacityError : ValidationError {
    using ValidationError::ValidationError;
};

// Perturbation pool lacks an entity type present in the dataset.
struct TypeCoverageError : ValidationError {
    using ValidationError::ValidationError;
};

// Malformed files, shape mismatches, missing artifacts.
struct StructuralError : Error {
    using Error::Error;
};

// NaN/Inf propagation, divergence, non-finite losses.
struct NumericError : Error {
    using Error::Error;
};

// Training schedule exhausted without reaching its thresholds.
struct ConvergenceError : NumericError {
    using NumericError::NumericError;
};

}  // namespace seat
