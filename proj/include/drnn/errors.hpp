#pragma once

#include <stdexcept>
#include <string>

namespace drnn {

/// Invalid configuration: dimension mismatches, odd widths, missing fields.
/// The CLI maps this to exit code 2; everything else is a runtime failure.
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

}  // namespace drnn
