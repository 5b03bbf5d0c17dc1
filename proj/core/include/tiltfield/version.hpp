#pragma once

namespace tiltfield {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace tiltfield
