#pragma once

#include <stdexcept>
#include <string>

namespace metadescent {

/// Invalid configuration (bad field values, dimension mismatches, malformed
/// run files). Maps to CLI exit code 1.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A linear system could not be solved reliably even through the SVD
/// fallback. Carries the smallest Gram eigenvalue seen. Maps to CLI exit
/// code 2.
class degenerate_system_error : public std::runtime_error {
public:
    degenerate_system_error(const std::string& msg, double smallest_eigenvalue)
        : std::runtime_error(msg + " (smallest eigenvalue " +
                             std::to_string(smallest_eigenvalue) + ")"),
          smallest_eigenvalue_(smallest_eigenvalue) {}

    double smallest_eigenvalue() const { return smallest_eigenvalue_; }

private:
    double smallest_eigenvalue_;
};

} // namespace metadescent
