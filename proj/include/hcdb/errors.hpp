#pragma once

#include <stdexcept>
#include <string>

namespace hcdb {

// Invalid argument to a numerical kernel (negative shape, y > n, ...).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Scenario configuration that cannot generate data (e.g. drifted mean >= 1).
class InvalidScenario : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Quadrature, root finding or decomposition that did not converge.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed user input (study files, prior documents, grid specs).
class InputError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace hcdb
