#pragma once

#include <filesystem>

#include "mhqa/nn/layers.hpp"

namespace mhqa::nn {

/// Binary weight file: magic, parameter count, then per parameter its name,
/// shape and column-major little-endian doubles.
void save_weights(const ParameterStore& store, const std::filesystem::path& path);

/// Loads into an already-constructed store. Every stored parameter must exist
/// with the same shape and vice versa.
void load_weights(ParameterStore& store, const std::filesystem::path& path);

}  // namespace mhqa::nn
