#pragma once

#include <stdexcept>
#include <string>

namespace lstrl {

// Error taxonomy mirrored by CLI exit codes:
//   ConfigError / DataError / DimensionError -> 2
//   NumericError                             -> 3
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct DataError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

// Misuse of an internal contract (e.g. backward on a non-scalar).
struct ContractError : Error {
  using Error::Error;
};

// NaN/Inf or a failed numerical check.
struct NumericError : Error {
  using Error::Error;
};

}  // namespace lstrl

#define LSTRL_CHECK_DIM(cond, msg) \
  do {                             \
    if (!(cond)) throw ::lstrl::DimensionError(msg); \
  } while (0)

#define LSTRL_CHECK_CFG(cond, msg) \
  do {                             \
    if (!(cond)) throw ::lstrl::ConfigError(msg); \
  } while (0)

#define LSTRL_CHECK_CONTRACT(cond, msg) \
  do {                                  \
    if (!(cond)) throw ::lstrl::ContractError(msg); \
  } while (0)
