#pragma once

#include <stdexcept>
#include <string>

namespace hte {

// Error taxonomy shared by the library and the CLI exit-code mapping.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Incompatible shapes passed to a numerical operation.
struct DimensionError : Error {
  using Error::Error;
};

// Invalid configuration (bad hyperparameter, K mismatch, malformed spec).
struct ConfigError : Error {
  using Error::Error;
};

// Ingestion or sizing problems with datasets and files.
struct DataError : Error {
  using Error::Error;
};

// Operation invoked out of order (e.g. stepping without gradients).
struct StateError : Error {
  using Error::Error;
};

// Non-finite values where finite ones are required.
struct NumericError : Error {
  using Error::Error;
};

// Metric requested on data that cannot support it.
struct MetricError : Error {
  using Error::Error;
};

}  // namespace hte
