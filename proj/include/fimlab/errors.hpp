#pragma once

#include <stdexcept>
#include <string>

namespace fimlab {

/// Rejected input: bad dimensions, out-of-domain parameters, malformed
/// configs. `code` is a stable machine-readable tag surfaced by the CLI.
class ValidationError : public std::runtime_error {
public:
    ValidationError(std::string code, const std::string& message)
        : std::runtime_error(message), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

/// Non-finite value produced during computation.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& message)
        : std::runtime_error(message) {}
};

}  // namespace fimlab
