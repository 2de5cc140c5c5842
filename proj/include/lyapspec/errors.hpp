#pragma once

#include <stdexcept>
#include <string>

namespace lyap {

// Error taxonomy shared by every module. The CLI maps these onto exit codes:
// ConfigError -> 1, NumericalFailure/ShrinkRates -> 2, VerificationFailure -> 3.

class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

class ResourceLimit : public std::length_error {
public:
  using std::length_error::length_error;
};

class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class NumericalFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Raised by surgery construction when the requested rates are too far from 1
// for the C2 budget or the diffeomorphism checks. `suggested_factor` is the
// multiplicative shrink the caller should apply to x_scale before retrying.
class ShrinkRates : public NumericalFailure {
public:
  ShrinkRates(const std::string& what, double suggested_factor)
      : NumericalFailure(what), suggested_factor_(suggested_factor) {}
  double suggested_factor() const noexcept { return suggested_factor_; }

private:
  double suggested_factor_;
};

// A located orbit touched a blend collar, so the affine core model does not
// describe the stage map along it.
class CoreViolation : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class VerificationFailure : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Margin between the certified cover and the box boundary is not resolved at
// the requested refinement depth.
class IncreaseDepth : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace lyap
