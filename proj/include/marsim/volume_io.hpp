#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "marsim/volume.hpp"

namespace marsim {

/// Volume file layout (all little-endian):
///   6 bytes  magic "MARV1\0"
///   3 x u32  nx, ny, nz
///   3 x f32  sx, sy, sz (mm)
///   u8       kind code (VolumeKind)
///   7 bytes  reserved, zero
///   nx*ny*nz f32 values, x-fastest
inline constexpr std::size_t kVolumeHeaderBytes = 38;

std::vector<std::uint8_t> encode_volume(const Volume3D& vol);
Volume3D decode_volume(std::span<const std::uint8_t> bytes);

void write_volume(const Volume3D& vol, const std::filesystem::path& path);
Volume3D read_volume(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace marsim
