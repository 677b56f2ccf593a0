#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "marsim/volume.hpp"

namespace marsim {

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

/// Distance from p to the segment [a, b].
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

/// Logarithmic spiral r(theta) = basal_radius * exp(-taper_rate * theta) rising
/// linearly by height_mm over `turns` revolutions; the duct is a tube around it.
struct CochleaSpiral {
    double basal_radius_mm = 2.8;
    double taper_rate = 0.12;
    double turns = 2.5;
    double height_mm = 4.0;
    double duct_radius_mm = 0.4;

    void validate() const;
    double theta_max() const;
    double radius(double theta) const;
    /// Center-line point relative to the spiral center (axis along z, centered in z).
    Vec3 local_point(double theta) const;
    /// |d local_point / d theta|
    double speed(double theta) const;
};

/// Center-line in grid coordinates: spiral centered in the grid. Grid coordinates put
/// voxel (i,j,k) at ((i+0.5)sx, (j+0.5)sy, (k+0.5)sz) mm.
Vec3 spiral_point(const CochleaSpiral& spiral, Dims dims, Spacing spacing, double theta);
Vec3 voxel_center(Spacing spacing, std::uint32_t i, std::uint32_t j, std::uint32_t k);

/// Polyline of n points equally spaced in theta along the center-line (default 512).
std::vector<Vec3> sample_centerline(const CochleaSpiral& spiral, Dims dims, Spacing spacing,
                                    std::size_t n_points = 512);

inline constexpr float kBoneHu = 1500.0f;
inline constexpr float kDuctHu = 50.0f;
inline constexpr float kMetalHu = 3071.0f;

/// Synthetic temporal-bone ROI: bone cylinder in air with a fluid-filled spiral duct,
/// one-voxel linear partial-volume ramps at both boundaries.
Volume3D make_cochlea_volume(const CochleaSpiral& spiral, Dims dims, Spacing spacing);
/// Same, from the duct's signed distance map on the target grid.
Volume3D make_cochlea_volume(const CochleaSpiral& spiral, const Volume3D& duct_sdf);

/// Voxel fraction that the duct contributes to (partial-volume weight > 0).
double duct_partial_volume_weight(double distance_to_surface_mm, double voxel_mm);

/// min over segments of the point-segment distance, minus duct_radius.
Volume3D signed_distance(std::span<const Vec3> centerline, double duct_radius_mm, Dims dims,
                         Spacing spacing);

/// 1 where sdf <= threshold_mm.
Volume3D electrode_mask(const Volume3D& sdf, double threshold_mm);

/// Mask voxels set to 3071 HU.
Volume3D insert_metal(const Volume3D& vol, const Volume3D& mask);

struct ElectrodeArray {
    std::vector<Vec3> centers;
    /// Spiral parameter of each center.
    std::vector<double> thetas;
    std::uint32_t electrode_count = 0;
    double pitch_mm = 0.0;
};

/// Arc length of the center-line between two spiral parameters.
double spiral_arc_length(const CochleaSpiral& spiral, double theta0, double theta1);

/// Electrodes at arc lengths start_mm + k*pitch_mm from the basal end.
ElectrodeArray place_electrodes(const CochleaSpiral& spiral, Dims dims, Spacing spacing,
                                std::uint32_t count = 12, double pitch_mm = 1.0,
                                double start_mm = 1.0);

/// Nearest voxel of each electrode center set to 3071 HU (the augmented target).
Volume3D augment_target(const Volume3D& vol, const ElectrodeArray& electrodes);

struct Material {
    std::string name;
    /// Material id used by the voxel-phantom label map.
    std::uint8_t id = 0;
    double density_g_cm3 = 0.0;
};

/// Voxel phantom materials and densities.
namespace materials {
inline constexpr std::uint8_t kAir = 1;
inline constexpr std::uint8_t kMuscle = 2;
inline constexpr std::uint8_t kSoftTissue = 3;
inline constexpr std::uint8_t kBone = 4;
inline constexpr std::uint8_t kFat = 6;
inline constexpr std::uint8_t kWater = 15;
inline constexpr std::uint8_t kTitanium = 16;

const std::vector<Material>& table();
const Material& lookup(std::uint8_t id);
}  // namespace materials

struct MaterialPhantom {
    Dims dims;
    Spacing spacing;
    std::vector<std::uint8_t> labels;
    std::map<std::uint8_t, Material> table;

    std::uint8_t label_at(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return labels[(std::size_t(z) * dims.ny + y) * dims.nx + x];
    }
    std::size_t count(std::uint8_t id) const;
    void validate() const;
};

/// Concentric-ellipsoid head: skin, fat, muscle, skull, brain; a petrous-bone block
/// with a water inner-ear pocket and a titanium insert on the +x side.
MaterialPhantom make_head_phantom(Dims dims, Spacing spacing);

/// Location of the titanium insert, in coordinates centered on the phantom (x, y, z mm).
Vec3 head_insert_center(Dims dims, Spacing spacing);

MaterialPhantom make_uniform_phantom(Dims dims, Spacing spacing, std::uint8_t material);

}  // namespace marsim
