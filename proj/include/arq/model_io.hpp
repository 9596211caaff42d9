#pragma once

#include <cstdint>
#include <filesystem>

#include "arq/binary_io.hpp"
#include "arq/network.hpp"

namespace arq::io {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// "ARQNET", version, layer-spec table, then per-layer little-endian
/// weight and bias arrays.
void write_network(BinaryWriter& w, const nn::Network& net);
nn::Network read_network(BinaryReader& r);

void save_model(const nn::Network& net, const std::filesystem::path& path);
nn::Network load_model(const std::filesystem::path& path);

}  // namespace arq::io
