#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace histomet {

enum class ScaleId : int { x10 = 0, x20 = 1 };

inline const char* scale_name(ScaleId s) {
  return s == ScaleId::x10 ? "10x" : "20x";
}

inline std::uint8_t scale_code(ScaleId s) {
  return s == ScaleId::x10 ? 1 : 2;
}

inline ScaleId scale_from_code(std::uint8_t code) {
  if (code == 1) return ScaleId::x10;
  if (code == 2) return ScaleId::x20;
  throw std::invalid_argument("unknown magnification code " +
                              std::to_string(int(code)));
}

}  // namespace histomet
