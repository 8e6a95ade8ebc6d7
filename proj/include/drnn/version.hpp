#pragma once

namespace drnn {

inline constexpr const char* kVersion = "1.0.0";

}  // namespace drnn
