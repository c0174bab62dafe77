#pragma once

#include <stdexcept>
#include <string>

namespace qfilt {

// Bad input: wrong dimensions, out-of-range arguments, malformed labels.
class InvalidArgument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A NaN or infinity appeared while stepping; carries the step index when known.
class NumericFailure : public std::runtime_error {
public:
    explicit NumericFailure(const std::string& what, long step = -1)
        : std::runtime_error(step >= 0 ? what + " at step " + std::to_string(step) : what),
          step_(step) {}
    long step() const noexcept { return step_; }

private:
    long step_;
};

class DegenerateEnsemble : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Y(t) in the Riccati linearization became singular.
class SingularPropagation : public std::runtime_error {
public:
    SingularPropagation(const std::string& what, double t)
        : std::runtime_error(what + " at t=" + std::to_string(t)), time_(t) {}
    double time() const noexcept { return time_; }

private:
    double time_;
};

class ConstructionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UnsupportedConfiguration : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UndefinedMetric : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace qfilt
