#include "marsim/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "marsim/error.hpp"
#include "marsim/parallel.hpp"

namespace marsim {

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.dot(ab);
    double t = len2 > 0.0 ? (p - a).dot(ab) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return (p - (a + ab * t)).norm();
}

// --- spiral ---------------------------------------------------------------------------

void CochleaSpiral::validate() const {
    if (!(basal_radius_mm > 0.0)) throw ArgumentError("basal_radius_mm must be positive");
    if (!(turns > 0.0 && turns <= 3.0)) throw ArgumentError("turns must lie in (0, 3]");
    if (!(duct_radius_mm > 0.0)) throw ArgumentError("duct_radius_mm must be positive");
    if (!std::isfinite(taper_rate) || taper_rate < 0.0) throw ArgumentError("taper_rate must be >= 0");
    if (!std::isfinite(height_mm) || height_mm < 0.0) throw ArgumentError("height_mm must be >= 0");
}

double CochleaSpiral::theta_max() const { return 2.0 * std::numbers::pi * turns; }

double CochleaSpiral::radius(double theta) const { return basal_radius_mm * std::exp(-taper_rate * theta); }

Vec3 CochleaSpiral::local_point(double theta) const {
    const double r = radius(theta);
    return {r * std::cos(theta), r * std::sin(theta), height_mm * theta / theta_max() - 0.5 * height_mm};
}

double CochleaSpiral::speed(double theta) const {
    const double r = radius(theta);
    const double rise = height_mm / theta_max();
    return std::sqrt(r * r * (1.0 + taper_rate * taper_rate) + rise * rise);
}

Vec3 voxel_center(Spacing s, std::uint32_t i, std::uint32_t j, std::uint32_t k) {
    return {(i + 0.5) * s.sx, (j + 0.5) * s.sy, (k + 0.5) * s.sz};
}

namespace {

Vec3 grid_center(Dims d, Spacing s) { return {0.5 * d.nx * s.sx, 0.5 * d.ny * s.sy, 0.5 * d.nz * s.sz}; }

double min_spacing(Spacing s) { return std::min({double(s.sx), double(s.sy), double(s.sz)}); }

void check_grid(Dims d, Spacing s) {
    if (d.nx == 0 || d.ny == 0 || d.nz == 0) throw ArgumentError("grid dimensions must be positive");
    if (!(s.sx > 0.0f) || !(s.sy > 0.0f) || !(s.sz > 0.0f)) throw ArgumentError("grid spacing must be positive");
}

}  // namespace

Vec3 spiral_point(const CochleaSpiral& spiral, Dims dims, Spacing spacing, double theta) {
    return grid_center(dims, spacing) + spiral.local_point(theta);
}

std::vector<Vec3> sample_centerline(const CochleaSpiral& spiral, Dims dims, Spacing spacing, std::size_t n_points) {
    spiral.validate();
    if (n_points < 2) throw ArgumentError("center-line needs at least 2 points");
    std::vector<Vec3> out(n_points);
    const double tmax = spiral.theta_max();
    for (std::size_t k = 0; k < n_points; ++k)
        out[k] = spiral_point(spiral, dims, spacing, tmax * double(k) / double(n_points - 1));
    return out;
}

double duct_partial_volume_weight(double distance_to_surface_mm, double voxel_mm) {
    return std::clamp(0.5 - distance_to_surface_mm / voxel_mm, 0.0, 1.0);
}

// --- signed distance ------------------------------------------------------------------

Volume3D signed_distance(std::span<const Vec3> centerline, double duct_radius_mm, Dims dims, Spacing spacing) {
    if (centerline.size() < 2) throw ArgumentError("signed_distance needs a polyline with at least 2 points");
    check_grid(dims, spacing);

    // Segments in chunks with bounding spheres; a chunk is skipped when its sphere is
    // farther than the best distance so far. The minimum is unchanged by the pruning.
    constexpr std::size_t kChunk = 16;
    struct Chunk {
        std::size_t first, last;  // segment range [first, last)
        Vec3 center;
        double radius;
    };
    std::vector<Chunk> chunks;
    const std::size_t n_seg = centerline.size() - 1;
    for (std::size_t a = 0; a < n_seg; a += kChunk) {
        const std::size_t b = std::min(n_seg, a + kChunk);
        const Vec3 c = (centerline[a] + centerline[b]) * 0.5;
        double r = 0.0;
        for (std::size_t k = a; k <= b; ++k) r = std::max(r, (centerline[k] - c).norm());
        chunks.push_back({a, b, c, r});
    }

    std::vector<float> out(dims.count());
    parallel_for(dims.nz, [&](std::size_t k) {
        std::vector<std::pair<double, std::size_t>> order(chunks.size());
        for (std::uint32_t j = 0; j < dims.ny; ++j)
            for (std::uint32_t i = 0; i < dims.nx; ++i) {
                const Vec3 p = voxel_center(spacing, i, j, std::uint32_t(k));
                for (std::size_t c = 0; c < chunks.size(); ++c)
                    order[c] = {(p - chunks[c].center).norm() - chunks[c].radius, c};
                std::sort(order.begin(), order.end());
                double best = 1e300;
                for (const auto& [bound, c] : order) {
                    if (bound >= best) break;
                    for (std::size_t s = chunks[c].first; s < chunks[c].last; ++s)
                        best = std::min(best, point_segment_distance(p, centerline[s], centerline[s + 1]));
                }
                out[(k * dims.ny + j) * dims.nx + i] = float(best - duct_radius_mm);
            }
    });
    return Volume3D(dims, spacing, VolumeKind::Distance, std::move(out));
}

// --- cochlea volume -------------------------------------------------------------------

Volume3D make_cochlea_volume(const CochleaSpiral& spiral, Dims dims, Spacing spacing) {
    spiral.validate();
    check_grid(dims, spacing);
    return make_cochlea_volume(spiral, signed_distance(sample_centerline(spiral, dims, spacing),
                                                       spiral.duct_radius_mm, dims, spacing));
}

Volume3D make_cochlea_volume(const CochleaSpiral& spiral, const Volume3D& sdf) {
    spiral.validate();
    if (sdf.kind() != VolumeKind::Distance) throw ArgumentError("make_cochlea_volume expects a Distance volume");
    const Dims dims = sdf.dims();
    const Spacing spacing = sdf.spacing();
    check_grid(dims, spacing);
    const auto line = sample_centerline(spiral, dims, spacing);
    const Vec3 hi = grid_center(dims, spacing) * 2.0;
    for (const Vec3& p : line) {
        const double r = spiral.duct_radius_mm;
        if (p.x - r < 0.0 || p.y - r < 0.0 || p.z - r < 0.0 || p.x + r > hi.x || p.y + r > hi.y || p.z + r > hi.z)
            throw GeometryError("cochlea duct does not fit inside the grid");
    }

    const Vec3 c = grid_center(dims, spacing);
    const double ax = 0.42 * hi.x, ay = 0.42 * hi.y;
    const double voxel = min_spacing(spacing);

    std::vector<float> hu(dims.count());
    for (std::uint32_t k = 0; k < dims.nz; ++k)
        for (std::uint32_t j = 0; j < dims.ny; ++j)
            for (std::uint32_t i = 0; i < dims.nx; ++i) {
                const Vec3 p = voxel_center(spacing, i, j, k) - c;
                // First-order distance to the elliptic cylinder wall.
                const double ex = p.x / ax, ey = p.y / ay;
                const double rho = std::hypot(ex, ey);
                double d_bone;
                if (rho < 1e-12) {
                    d_bone = -std::min(ax, ay);
                } else {
                    const double grad = std::hypot(ex / ax, ey / ay) / rho;
                    d_bone = (rho - 1.0) / grad;
                }
                const double w_bone = duct_partial_volume_weight(d_bone, voxel);
                const double base = -1000.0 + w_bone * (double(kBoneHu) + 1000.0);
                const std::size_t idx = sdf.index(i, j, k);
                const double w_duct = duct_partial_volume_weight(sdf[idx], voxel);
                hu[idx] = float(base + w_duct * (double(kDuctHu) - base));
            }
    return Volume3D(dims, spacing, VolumeKind::HU, std::move(hu));
}

// --- masks and metal ------------------------------------------------------------------

Volume3D electrode_mask(const Volume3D& sdf, double threshold_mm) {
    if (sdf.kind() != VolumeKind::Distance) throw ArgumentError("electrode_mask expects a Distance volume");
    std::vector<float> out(sdf.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = double(sdf[i]) <= threshold_mm ? 1.0f : 0.0f;
    return sdf.with_values(std::move(out), VolumeKind::Mask);
}

Volume3D insert_metal(const Volume3D& vol, const Volume3D& mask) {
    require_same_grid(vol, mask, "insert_metal");
    if (vol.kind() != VolumeKind::HU) throw ArgumentError("insert_metal expects an HU volume");
    if (mask.kind() != VolumeKind::Mask) throw ArgumentError("insert_metal expects a Mask");
    std::vector<float> out = vol.values();
    for (std::size_t i = 0; i < out.size(); ++i)
        if (mask[i] != 0.0f) out[i] = kMetalHu;
    return vol.with_values(std::move(out));
}

// --- electrodes -----------------------------------------------------------------------

double spiral_arc_length(const CochleaSpiral& spiral, double theta0, double theta1) {
    // Composite 5-point Gauss-Legendre.
    static constexpr double xs[5] = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                     0.9061798459386640};
    static constexpr double ws[5] = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                     0.4786286704993665, 0.2369268850561891};
    const int panels = 64;
    const double h = (theta1 - theta0) / panels;
    double sum = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double mid = theta0 + (p + 0.5) * h;
        for (int q = 0; q < 5; ++q) sum += ws[q] * spiral.speed(mid + 0.5 * h * xs[q]);
    }
    return 0.5 * h * sum;
}

ElectrodeArray place_electrodes(const CochleaSpiral& spiral, Dims dims, Spacing spacing, std::uint32_t count,
                                double pitch_mm, double start_mm) {
    spiral.validate();
    if (count > 0 && !(pitch_mm > 0.0)) throw ArgumentError("electrode pitch must be positive");
    if (!(start_mm >= 0.0)) throw ArgumentError("electrode start must be >= 0");
    ElectrodeArray out;
    out.electrode_count = count;
    out.pitch_mm = pitch_mm;
    if (count == 0) return out;

    const double tmax = spiral.theta_max();
    const double total = spiral_arc_length(spiral, 0.0, tmax);
    const double last = start_mm + pitch_mm * double(count - 1);
    if (last > total)
        throw GeometryError("electrode array (" + std::to_string(last) + " mm) longer than the spiral (" +
                            std::to_string(total) + " mm)");

    double lo_bound = 0.0;
    for (std::uint32_t k = 0; k < count; ++k) {
        const double target = start_mm + pitch_mm * k;
        double lo = lo_bound, hi = tmax;
        for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
            const double mid = 0.5 * (lo + hi);
            (spiral_arc_length(spiral, 0.0, mid) < target ? lo : hi) = mid;
        }
        const double theta = 0.5 * (lo + hi);
        lo_bound = theta;
        out.thetas.push_back(theta);
        out.centers.push_back(spiral_point(spiral, dims, spacing, theta));
    }
    return out;
}

Volume3D augment_target(const Volume3D& vol, const ElectrodeArray& electrodes) {
    if (vol.kind() != VolumeKind::HU) throw ArgumentError("augment_target expects an HU volume");
    const Dims d = vol.dims();
    const Spacing s = vol.spacing();
    std::vector<float> out = vol.values();
    for (const Vec3& p : electrodes.centers) {
        const double fi = std::floor(p.x / s.sx), fj = std::floor(p.y / s.sy), fk = std::floor(p.z / s.sz);
        if (!(fi >= 0 && fj >= 0 && fk >= 0 && fi < d.nx && fj < d.ny && fk < d.nz))
            throw GeometryError("electrode center outside the grid");
        out[vol.index(std::uint32_t(fi), std::uint32_t(fj), std::uint32_t(fk))] = kMetalHu;
    }
    return vol.with_values(std::move(out));
}

// --- materials ------------------------------------------------------------------------

namespace materials {

const std::vector<Material>& table() {
    static const std::vector<Material> t = {
        {"air", kAir, 0.001205},       {"water", kWater, 1.000},          {"bone", kBone, 1.990},
        {"muscle", kMuscle, 1.041},    {"titanium", kTitanium, 4.506},   {"soft_tissue", kSoftTissue, 1.038},
        {"fat", kFat, 0.916},
    };
    return t;
}

const Material& lookup(std::uint8_t id) {
    for (const auto& m : table())
        if (m.id == id) return m;
    throw ArgumentError("unknown material id " + std::to_string(id));
}

}  // namespace materials

std::size_t MaterialPhantom::count(std::uint8_t id) const { return std::size_t(std::count(labels.begin(), labels.end(), id)); }

void MaterialPhantom::validate() const {
    check_grid(dims, spacing);
    if (labels.size() != dims.count()) throw ArgumentError("label map size does not match dims");
    bool seen[256] = {};
    for (auto l : labels) seen[l] = true;
    for (int l = 0; l < 256; ++l)
        if (seen[l] && !table.count(std::uint8_t(l)))
            throw ArgumentError("label " + std::to_string(l) + " missing from the material table");
    for (const auto& [id, m] : table)
        if (!(m.density_g_cm3 > 0.0)) throw ArgumentError("material " + m.name + " has non-positive density");
}

namespace {

std::map<std::uint8_t, Material> full_table() {
    std::map<std::uint8_t, Material> t;
    for (const auto& m : materials::table()) t[m.id] = m;
    return t;
}

struct HeadShape {
    Vec3 semi;              // outer head ellipsoid
    Vec3 petrous_center;    // centered coordinates
    Vec3 petrous_semi;
    Vec3 pocket_semi;
    Vec3 titanium_semi;
};

HeadShape head_shape(Dims d, Spacing s) {
    HeadShape h;
    const Vec3 ext{d.nx * double(s.sx), d.ny * double(s.sy), d.nz * double(s.sz)};
    h.semi = {0.40 * ext.x, 0.46 * ext.y, 0.46 * ext.z};
    h.petrous_semi = {0.18 * h.semi.x, 0.12 * h.semi.y, 0.12 * h.semi.z};
    h.pocket_semi = h.petrous_semi * 0.6;
    h.titanium_semi = {std::max(6.0, 2.0 * s.sx), std::max(3.0, 1.0 * s.sy), std::max(3.0, 1.0 * s.sz)};
    // Snap to a voxel center so the insert is symmetric on the grid.
    auto snap = [](double v, double sp, std::uint32_t n) {
        const double g = v + 0.5 * n * sp;
        return (std::floor(g / sp) + 0.5) * sp - 0.5 * n * sp;
    };
    h.petrous_center = {snap(0.55 * h.semi.x, s.sx, d.nx), snap(0.0, s.sy, d.ny), snap(0.0, s.sz, d.nz)};
    return h;
}

double ellipsoid_norm(const Vec3& p, const Vec3& semi) {
    return std::sqrt((p.x / semi.x) * (p.x / semi.x) + (p.y / semi.y) * (p.y / semi.y) +
                     (p.z / semi.z) * (p.z / semi.z));
}

}  // namespace

Vec3 head_insert_center(Dims dims, Spacing spacing) { return head_shape(dims, spacing).petrous_center; }

MaterialPhantom make_head_phantom(Dims dims, Spacing spacing) {
    check_grid(dims, spacing);
    if (dims.nx < 64 || dims.ny < 64 || dims.nz < 64) throw ArgumentError("head phantom needs at least 64^3 voxels");
    const HeadShape h = head_shape(dims, spacing);
    const Vec3 c = grid_center(dims, spacing);

    MaterialPhantom out{dims, spacing, std::vector<std::uint8_t>(dims.count()), full_table()};
    for (std::uint32_t k = 0; k < dims.nz; ++k)
        for (std::uint32_t j = 0; j < dims.ny; ++j)
            for (std::uint32_t i = 0; i < dims.nx; ++i) {
                const Vec3 p = voxel_center(spacing, i, j, k) - c;
                const double rho = ellipsoid_norm(p, h.semi);
                std::uint8_t label;
                if (rho > 1.0) label = materials::kAir;
                else if (rho > 0.95) label = materials::kSoftTissue;
                else if (rho > 0.90) label = materials::kFat;
                else if (rho > 0.85) label = materials::kMuscle;
                else if (rho > 0.75) label = materials::kBone;
                else label = materials::kSoftTissue;
                const Vec3 q = p - h.petrous_center;
                if (ellipsoid_norm(q, h.petrous_semi) <= 1.0) label = materials::kBone;
                if (ellipsoid_norm(q, h.pocket_semi) <= 1.0) label = materials::kWater;
                if (ellipsoid_norm(q, h.titanium_semi) <= 1.0) label = materials::kTitanium;
                out.labels[(std::size_t(k) * dims.ny + j) * dims.nx + i] = label;
            }
    return out;
}

MaterialPhantom make_uniform_phantom(Dims dims, Spacing spacing, std::uint8_t material) {
    check_grid(dims, spacing);
    const Material& m = materials::lookup(material);
    MaterialPhantom out{dims, spacing, std::vector<std::uint8_t>(dims.count(), material), {}};
    out.table[m.id] = m;
    return out;
}

}  // namespace marsim
