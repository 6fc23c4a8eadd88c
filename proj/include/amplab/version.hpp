#pragma once

#include <string_view>

namespace amplab {

inline constexpr std::string_view kVersion = "amplab 0.1.0";

}  // namespace amplab
