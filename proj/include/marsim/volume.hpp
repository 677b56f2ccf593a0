#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace marsim {

enum class VolumeKind : std::uint8_t {
    HU = 0,
    Attenuation = 1,
    Mask = 2,
    Distance = 3,
    Normalized = 4,
};

const char* to_string(VolumeKind kind);

inline constexpr float kHuMin = -1024.0f;
inline constexpr float kHuMax = 3071.0f;
inline constexpr float kHuAir = -1000.0f;

struct Dims {
    std::uint32_t nx = 0;
    std::uint32_t ny = 0;
    std::uint32_t nz = 0;

    std::size_t count() const { return std::size_t(nx) * ny * nz; }
    bool operator==(const Dims&) const = default;
};

/// Voxel size in mm.
struct Spacing {
    float sx = 1.0f;
    float sy = 1.0f;
    float sz = 1.0f;

    bool operator==(const Spacing&) const = default;
};

/// One axial (constant z) plane of a volume, x-fastest.
struct Slice2D {
    std::uint32_t nx = 0;
    std::uint32_t ny = 0;
    float sx = 1.0f;
    float sy = 1.0f;
    std::vector<float> values;

    Slice2D() = default;
    Slice2D(std::uint32_t nx_, std::uint32_t ny_, float sx_, float sy_, float fill = 0.0f)
        : nx(nx_), ny(ny_), sx(sx_), sy(sy_), values(std::size_t(nx_) * ny_, fill) {}

    float& at(std::uint32_t i, std::uint32_t j) { return values[std::size_t(j) * nx + i]; }
    float at(std::uint32_t i, std::uint32_t j) const { return values[std::size_t(j) * nx + i]; }
};

/// Scalar voxel grid with spacing metadata. Values are immutable once constructed; the
/// constructor enforces the invariants of `kind` (HU range, binary masks, [0,1] range).
class Volume3D {
public:
    Volume3D(Dims dims, Spacing spacing, VolumeKind kind, std::vector<float> data);

    static Volume3D filled(Dims dims, Spacing spacing, VolumeKind kind, float value);
    static Volume3D from_slices(Dims dims, Spacing spacing, VolumeKind kind,
                                std::span<const Slice2D> slices);

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    VolumeKind kind() const { return kind_; }
    std::span<const float> data() const { return data_; }
    std::size_t size() const { return data_.size(); }

    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return (std::size_t(z) * dims_.ny + y) * dims_.nx + x;
    }
    float at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const { return data_[index(x, y, z)]; }
    float operator[](std::size_t i) const { return data_[i]; }

    Slice2D slice_z(std::uint32_t z) const;

    /// Same grid, new values and kind.
    Volume3D with_values(std::vector<float> data, VolumeKind kind) const;
    Volume3D with_values(std::vector<float> data) const { return with_values(std::move(data), kind_); }

    std::vector<float> values() const { return data_; }

    bool operator==(const Volume3D&) const = default;

private:
    Dims dims_;
    Spacing spacing_;
    VolumeKind kind_;
    std::vector<float> data_;
};

void require_same_grid(const Volume3D& a, const Volume3D& b, const char* context);

struct SpectrumSample {
    double energy_kev = 0.0;
    double weight = 0.0;

    bool operator==(const SpectrumSample&) const = default;
};

/// Discrete photon spectrum. Weights are normalized to sum to one at construction.
class EnergySpectrum {
public:
    explicit EnergySpectrum(std::vector<SpectrumSample> samples, double peak_kvp = 140.0);

    /// Five-point sampling of a 140 kVp tungsten-anode spectrum.
    static EnergySpectrum default_tungsten_140kvp();
    /// Parse "40:0.12, 60:0.30, ..." (energy:weight pairs).
    static EnergySpectrum parse(const std::string& text, double peak_kvp = 140.0);

    std::span<const SpectrumSample> samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    double peak_kvp() const { return peak_kvp_; }
    /// Weight-averaged energy.
    double mean_energy() const;
    std::string to_string() const;

    bool operator==(const EnergySpectrum&) const = default;

private:
    std::vector<SpectrumSample> samples_;
    double peak_kvp_;
};

/// Monotone energy -> mu_water [1/mm] map with linear interpolation between rows.
class WaterTable {
public:
    struct Row {
        double energy_kev;
        double mu_per_mm;
    };

    explicit WaterTable(std::vector<Row> rows);

    static WaterTable parse(std::istream& in);
    static WaterTable load(const std::filesystem::path& path);
    /// The table shipped in the repository data directory.
    static const WaterTable& standard();
    static std::filesystem::path standard_path();

    double mu_per_mm(double energy_kev) const;
    double min_energy() const { return rows_.front().energy_kev; }
    double max_energy() const { return rows_.back().energy_kev; }
    std::span<const Row> rows() const { return rows_; }

private:
    std::vector<Row> rows_;
};

/// mu(x) = mu_water(E) * (1 + HU(x)/1000), clamped below at 0.
Volume3D hu_to_attenuation(const Volume3D& vol, double energy_kev, const WaterTable& table);

/// Inverse of hu_to_attenuation at a reference energy; result clamped to [-1024, 3071].
Volume3D attenuation_to_hu(const Volume3D& vol, double energy_kev, const WaterTable& table);

/// Affine map of [-1000, 3071] HU onto [0, 1], clamped.
Volume3D normalize_for_metrics(const Volume3D& vol);
float normalize_hu(float hu);

}  // namespace marsim
