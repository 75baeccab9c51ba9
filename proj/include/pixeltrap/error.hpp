#pragma once

#include <stdexcept>
#include <string>

namespace pixeltrap {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, invalid parameters, unknown ids.
/// The CLI maps these to exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

/// A computation that could not produce a valid result (singular system,
/// non-convergence, lost confinement). The CLI maps these to exit code 1.
class ComputationError : public Error {
 public:
  using Error::Error;
};

class GeometryConflictError : public InputError {
 public:
  using InputError::InputError;
};

class ParseError : public InputError {
 public:
  using InputError::InputError;
};

class DuplicateIdError : public ParseError {
 public:
  using ParseError::ParseError;
};

class UnknownElectrodeError : public InputError {
 public:
  using InputError::InputError;
};

class RefinementError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class DegeneratePanelError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class SingularMatrixError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class OnConductorError : public InputError {
 public:
  using InputError::InputError;
};

class ConvergenceError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class LeftDomainError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class InfeasibleBoundsError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class PathNotFoundError : public InputError {
 public:
  using InputError::InputError;
};

class ConfinementLostError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class UnreachableHeightError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class SitesMergeError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class RidgeBrokenError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class PlaneCrossingError : public ComputationError {
 public:
  using ComputationError::ComputationError;
};

class InsufficientSamplesError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace pixeltrap
