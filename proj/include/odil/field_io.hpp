#pragma once

#include <filesystem>

#include "odil/grid.hpp"

namespace odil {

/// Writes `<base>.json` (grid metadata) and `<base>.raw` (little-endian f64,
/// row-major).
void save_field(const std::filesystem::path& base, const Field& field);

/// Reads a pair written by save_field. `base` may carry a .json/.raw suffix.
Field load_field(const std::filesystem::path& base);

}  // namespace odil
