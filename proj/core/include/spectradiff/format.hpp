#pragma once

#include <string>

namespace spectradiff {

/// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

/// Fixed-point text with `decimals` digits after the point.
std::string format_fixed(double value, int decimals);

}  // namespace spectradiff
