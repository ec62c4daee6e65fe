#pragma once

namespace vbsel {

inline constexpr const char* kToolkitVersion = "0.1.0";

}  // namespace vbsel
