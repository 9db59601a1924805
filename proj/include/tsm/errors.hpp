#pragma once

#include <stdexcept>
#include <string>

namespace tsm {

// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input file (bad JSON, missing/unknown keys, wrong types).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Structurally well-formed input that violates an instance invariant
// (non-binary entry, dimension mismatch, duplicate test id, bad parameter).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A statement or fault column with no covering test: the coverage
// constraints cannot be satisfied by any selection.
class InfeasibleInstanceError : public Error {
 public:
  using Error::Error;
};

// A solver could not produce a usable result (size limit exceeded,
// no feasible selection found within budget).
class SolverError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (invalid action with mask bit 0,
// mismatched dimensions between components). Signals a bug, not bad data.
class ContractViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace tsm
