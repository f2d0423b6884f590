#pragma once

#include <cstdint>

namespace ptffsr {

// Dense ids are contiguous from 1; 0 is reserved for padding.
using ItemId = std::int32_t;
using UserId = std::int32_t;

constexpr ItemId kPadId = 0;

}  // namespace ptffsr
