#pragma once

namespace sterf {
inline constexpr const char* kVersion = "0.1.0";
}
