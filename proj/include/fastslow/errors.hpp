#pragma once

#include <stdexcept>
#include <string>

namespace fastslow {

// Exit-code taxonomy for the CLI lives in tools/; the library throws typed
// exceptions and lets callers map them.

struct config_error : std::runtime_error {
    explicit config_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct numeric_domain_error : std::runtime_error {
    explicit numeric_domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct invalid_map_error : std::runtime_error {
    explicit invalid_map_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct degenerate_orbit_error : std::runtime_error {
    explicit degenerate_orbit_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct degenerate_variance_error : std::runtime_error {
    explicit degenerate_variance_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct decomposition_degenerate_error : std::runtime_error {
    explicit decomposition_degenerate_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct spectral_gap_error : std::runtime_error {
    explicit spectral_gap_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct resource_error : std::runtime_error {
    explicit resource_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct interface_error : std::runtime_error {
    explicit interface_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace fastslow
