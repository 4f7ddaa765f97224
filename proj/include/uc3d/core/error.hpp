// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

#include <stdexcept>
#include <string>

namespace uc3d {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters, mismatched dimensions, unknown names.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// An operation received (or produced) no elements to work on.
class EmptyInputError : public Error {
 public:
  using Error::Error;
};

/// Tensor extents incompatible with an op.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A caller broke a documented precondition (non-scalar loss, non-unit key, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Too few pairs or an empty memory bank for a contrastive loss.
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// Procedural data generation could not satisfy its constraints.
class GenerationError : public Error {
 public:
  using Error::Error;
};

/// Malformed or unreadable file.
class IoError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity reached the optimizer.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace uc3d
