#pragma once

#include <stdexcept>
#include <string>

namespace dosegnn {

/// Malformed or incompatible input data (bad geometry, missing files,
/// inconsistent bundles). The CLI maps it to exit code 3.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values during optimization. The CLI maps it to exit code 4.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dosegnn
