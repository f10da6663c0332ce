#pragma once

#include <stdexcept>
#include <string>

namespace cbd {

/// Shape disagreement between tensors (matmul inner dims, elementwise pairs, ...).
class dimension_error : public std::runtime_error {
public:
    explicit dimension_error(const std::string& what) : std::runtime_error(what) {}
};

/// Mathematically invalid input (log of non-positive value, ...).
class domain_error : public std::runtime_error {
public:
    explicit domain_error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration: bad profile, unknown config key, out-of-range hyperparameter.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file. Carries the 1-based line number when known (0 = unknown).
class parse_error : public std::runtime_error {
public:
    parse_error(const std::string& what, std::size_t line = 0)
        : std::runtime_error(line > 0 ? what + " (line " + std::to_string(line) + ")" : what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// File IO failure. Message names the offending path.
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss during training. Carries the diagnostic context of the
/// aborted step so the driver can report where the run diverged.
class numeric_abort : public std::runtime_error {
public:
    numeric_abort(const std::string& what, long step, double lr)
        : std::runtime_error(what), step_(step), lr_(lr) {}

    long step() const noexcept { return step_; }
    double lr() const noexcept { return lr_; }

private:
    long step_;
    double lr_;
};

} // namespace cbd
