#pragma once

namespace hcdb {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace hcdb
