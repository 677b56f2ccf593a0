#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "marsim/rng.hpp"
#include "marsim/volume.hpp"

namespace marsim::test {

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("marsim_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline Volume3D random_volume(Dims dims, Spacing sp, VolumeKind kind, std::uint64_t seed, float lo, float hi) {
    CounterRng rng(seed, 0);
    std::vector<float> v(dims.count());
    for (auto& x : v) x = float(lo + (hi - lo) * rng.uniform());
    if (kind == VolumeKind::Mask)
        for (auto& x : v) x = x > 0.5f * (lo + hi) ? 1.0f : 0.0f;
    return Volume3D(dims, sp, kind, std::move(v));
}

}  // namespace marsim::test
