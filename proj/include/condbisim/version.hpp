#pragma once

namespace condbisim {

inline constexpr const char* kVersion = "condbisim 0.1.0";

}  // namespace condbisim
