#pragma once

#include <stdexcept>
#include <string>

namespace fml {

/// Root of every error thrown by the library. The CLI maps subclasses onto
/// process exit codes.
class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class DimensionError : public Error {
public:
	using Error::Error;
};

/// Argument outside the admissible range (negative lag, bad fraction, ...).
class DomainError : public Error {
public:
	using Error::Error;
};

/// Caller broke an API contract (non-scalar backward seed, wrong seed count).
class ContractError : public Error {
public:
	using Error::Error;
};

/// Ill-conditioned or singular linear algebra, non-finite inputs.
class NumericError : public Error {
public:
	using Error::Error;
};

/// Integration or training produced non-finite values.
class DivergenceError : public NumericError {
public:
	using NumericError::NumericError;
};

/// Newton iteration in the implicit integrator failed to converge.
class StiffnessError : public NumericError {
public:
	using NumericError::NumericError;
};

/// Malformed input file (CSV, manifest, model file).
class ParseError : public Error {
public:
	using Error::Error;
};

/// Inconsistent dataset contents (too short, mismatched lags).
class DataError : public Error {
public:
	using Error::Error;
};

/// Invalid or incompatible run configuration.
class ConfigError : public Error {
public:
	using Error::Error;
};

} // namespace fml
