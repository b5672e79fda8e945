// Generated by gen_render_oracle.py; do not edit by hand.
#pragma once

namespace oracle {

struct FitCase {
  const char* text;
  int fit;
};

inline constexpr FitCase kFitCases[] = {
    {"a", 20},
    {"internationalization", 5},
    {"hi", 20},
    {"the", 20},
    {"apple", 14},
    {"doctor", 15},
    {"keeps", 14},
    {"x", 20},
    {"W", 20},
    {"ij", 14},
    {"away", 14},
    {"pixel", 14},
    {"language", 11},
    {"wonderful", 10},
    {"quick", 14},
    {"m", 20},
    {"I", 20},
    {"ab", 20},
    {"abc", 20},
    {"abcd", 20},
    {"abcdefgh", 11},
    {"zebra", 19},
    {"jumpy", 14},
    {"yes", 14},
    {"no", 20},
};

inline constexpr int kUnitsPerEm = 1000;
inline constexpr int kAscender = 1160;
inline constexpr int kDescender = -293;

}  // namespace oracle
