#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "marsim/volume.hpp"

namespace marsim {

/// Equiangular fan-beam geometry over a full 2*pi orbit.
///
/// View v places the source at angle 2*pi*v/n_views on a circle of radius
/// source_to_iso_mm. Detector j sees the ray rotated by
/// (j - (n_detectors-1)/2) * detector_angular_pitch_rad from the central ray
/// (counter-clockwise positive).
struct FanBeamGeometry {
    double source_to_iso_mm = 0.0;
    std::uint32_t n_views = 0;
    std::uint32_t n_detectors = 0;
    double detector_angular_pitch_rad = 0.0;
    /// Radius of the detector arc around the source; used by the photon tracer.
    double source_to_detector_mm = 0.0;

    /// Defaults for an nx*ny slice: source at twice the slice diagonal, 360 views,
    /// 2*max(nx,ny) detectors, arc covering 1.1x the inscribed circle.
    /// Zero arguments select those defaults.
    static FanBeamGeometry for_slice(std::uint32_t nx, std::uint32_t ny, float sx, float sy,
                                     std::uint32_t n_views = 360, std::uint32_t n_detectors = 0,
                                     double source_to_iso_mm = 0.0);

    double view_angle(std::uint32_t v) const;
    double detector_angle(double j) const;
    /// Fractional detector index for a ray angle.
    double detector_index(double gamma) const;
    double fan_half_angle() const { return 0.5 * n_detectors * detector_angular_pitch_rad; }
    /// Radius of the circle around the isocenter that every view sees completely.
    double fov_radius_mm() const;

    void validate() const;
    bool operator==(const FanBeamGeometry&) const = default;
};

/// n_views x n_detectors projection values, detector-fastest. Stored in double;
/// files hold f32.
class Sinogram {
public:
    Sinogram() = default;
    Sinogram(const FanBeamGeometry& geometry, std::uint32_t slice_index, double fill = 0.0);
    Sinogram(const FanBeamGeometry& geometry, std::uint32_t slice_index, std::vector<double> values);

    const FanBeamGeometry& geometry() const { return geometry_; }
    std::uint32_t slice_index() const { return slice_index_; }
    std::uint32_t n_views() const { return geometry_.n_views; }
    std::uint32_t n_detectors() const { return geometry_.n_detectors; }

    double& at(std::uint32_t v, std::uint32_t j) { return values_[std::size_t(v) * geometry_.n_detectors + j]; }
    double at(std::uint32_t v, std::uint32_t j) const { return values_[std::size_t(v) * geometry_.n_detectors + j]; }
    std::span<double> row(std::uint32_t v) { return {values_.data() + std::size_t(v) * geometry_.n_detectors, geometry_.n_detectors}; }
    std::span<const double> row(std::uint32_t v) const { return {values_.data() + std::size_t(v) * geometry_.n_detectors, geometry_.n_detectors}; }

    std::span<double> values() { return values_; }
    std::span<const double> values() const { return values_; }
    std::size_t size() const { return values_.size(); }
    double mean() const;

    bool operator==(const Sinogram&) const = default;

private:
    FanBeamGeometry geometry_{};
    std::uint32_t slice_index_ = 0;
    std::vector<double> values_;
};

void require_same_shape(const Sinogram& a, const Sinogram& b, const char* context);

/// Line integrals of the slice along every source->detector ray (bilinear sampling,
/// midpoint rule with step <= half the smallest pixel size). Units: value * mm.
/// Throws GeometryError when a nonzero pixel lies outside the field of view.
Sinogram fanbeam_project(const Slice2D& slice, const FanBeamGeometry& geometry,
                         std::uint32_t slice_index = 0);

/// Fan-beam filtered back-projection: cosine pre-weighting, Hann-windowed ramp filter
/// applied in the frequency domain, distance-weighted back-projection. Pixels outside
/// the field of view are set to zero.
Slice2D fanbeam_reconstruct(const Sinogram& sino, std::uint32_t nx, std::uint32_t ny, float sx, float sy);

/// Slice-by-slice wrappers along z. Errors are rethrown with the slice index.
std::vector<Sinogram> project_volume(const Volume3D& vol, const FanBeamGeometry& geometry);
Volume3D reconstruct_volume(std::span<const Sinogram> sinograms, Dims dims, Spacing spacing,
                            VolumeKind kind);

/// Sinogram file: "MARS1\0", u32 n_views, n_detectors, slice_index, f32 source_to_iso_mm,
/// detector_angular_pitch_rad, source_to_detector_mm, then n_views*n_detectors f32.
void write_sinogram(const Sinogram& sino, const std::filesystem::path& path);
Sinogram read_sinogram(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_sinogram(const Sinogram& sino);
Sinogram decode_sinogram(std::span<const std::uint8_t> bytes);

}  // namespace marsim
