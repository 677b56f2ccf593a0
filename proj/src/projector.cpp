#include "marsim/projector.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <string>

#include <unsupported/Eigen/FFT>

#include "binary.hpp"
#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/volume_io.hpp"

namespace marsim {

using std::numbers::pi;

// --- geometry -------------------------------------------------------------------------

FanBeamGeometry FanBeamGeometry::for_slice(std::uint32_t nx, std::uint32_t ny, float sx, float sy,
                                           std::uint32_t n_views, std::uint32_t n_detectors,
                                           double source_to_iso_mm) {
    const double width = double(nx) * sx;
    const double height = double(ny) * sy;
    FanBeamGeometry g;
    g.source_to_iso_mm = source_to_iso_mm > 0.0 ? source_to_iso_mm : 2.0 * std::hypot(width, height);
    g.n_views = n_views > 0 ? n_views : 360;
    g.n_detectors = n_detectors > 0 ? n_detectors : 2 * std::max(nx, ny);
    const double cover_radius = 1.1 * 0.5 * std::min(width, height);
    if (cover_radius >= g.source_to_iso_mm) throw GeometryError("source too close to cover the slice");
    const double half_angle = std::asin(cover_radius / g.source_to_iso_mm);
    g.detector_angular_pitch_rad = 2.0 * half_angle / g.n_detectors;
    g.source_to_detector_mm = 2.0 * g.source_to_iso_mm;
    return g;
}

double FanBeamGeometry::view_angle(std::uint32_t v) const { return 2.0 * pi * double(v) / double(n_views); }

double FanBeamGeometry::detector_angle(double j) const {
    return (j - 0.5 * (double(n_detectors) - 1.0)) * detector_angular_pitch_rad;
}

double FanBeamGeometry::detector_index(double gamma) const {
    return gamma / detector_angular_pitch_rad + 0.5 * (double(n_detectors) - 1.0);
}

double FanBeamGeometry::fov_radius_mm() const { return source_to_iso_mm * std::sin(fan_half_angle()); }

void FanBeamGeometry::validate() const {
    if (!(source_to_iso_mm > 0.0)) throw GeometryError("source_to_iso_mm must be positive");
    if (n_views < 4) throw GeometryError("fan-beam geometry needs at least 4 views");
    if (n_detectors < 8) throw GeometryError("fan-beam geometry needs at least 8 detectors");
    if (!(detector_angular_pitch_rad > 0.0)) throw GeometryError("detector pitch must be positive");
    if (!(fan_half_angle() < 0.5 * pi)) throw GeometryError("fan angle must stay below pi");
    if (!(source_to_detector_mm > source_to_iso_mm)) throw GeometryError("detector arc must lie beyond the isocenter");
}

// --- sinogram -------------------------------------------------------------------------

Sinogram::Sinogram(const FanBeamGeometry& geometry, std::uint32_t slice_index, double fill)
    : geometry_(geometry), slice_index_(slice_index),
      values_(std::size_t(geometry.n_views) * geometry.n_detectors, fill) {}

Sinogram::Sinogram(const FanBeamGeometry& geometry, std::uint32_t slice_index, std::vector<double> values)
    : geometry_(geometry), slice_index_(slice_index), values_(std::move(values)) {
    if (values_.size() != std::size_t(geometry.n_views) * geometry.n_detectors)
        throw ArgumentError("sinogram payload does not match n_views * n_detectors");
    for (double v : values_)
        if (!std::isfinite(v)) throw ArgumentError("sinogram values must be finite");
}

double Sinogram::mean() const {
    if (values_.empty()) return 0.0;
    double s = 0.0;
    for (double v : values_) s += v;
    return s / double(values_.size());
}

void require_same_shape(const Sinogram& a, const Sinogram& b, const char* context) {
    if (a.n_views() != b.n_views() || a.n_detectors() != b.n_detectors())
        throw ArgumentError(std::string(context) + ": sinogram shapes differ");
}

// --- forward projection ---------------------------------------------------------------

namespace {

struct View {
    double sx, sy;  // source
    double cx, cy;  // central ray direction
};

View view_frame(const FanBeamGeometry& g, std::uint32_t v) {
    const double beta = g.view_angle(v);
    const double cb = std::cos(beta), sb = std::sin(beta);
    return {g.source_to_iso_mm * cb, g.source_to_iso_mm * sb, -cb, -sb};
}

// Parametric interval of the ray inside [-bx, bx] x [-by, by].
bool clip_ray(double ox, double oy, double dx, double dy, double bx, double by, double& t0, double& t1) {
    t0 = -1e300;
    t1 = 1e300;
    auto slab = [&](double o, double d, double b) {
        if (std::abs(d) < 1e-15) return std::abs(o) <= b;
        double a = (-b - o) / d, c = (b - o) / d;
        if (a > c) std::swap(a, c);
        t0 = std::max(t0, a);
        t1 = std::min(t1, c);
        return true;
    };
    if (!slab(ox, dx, bx) || !slab(oy, dy, by)) return false;
    return t1 > t0;
}

void check_field_of_view(const Slice2D& s, const FanBeamGeometry& g) {
    const double width = double(s.nx) * s.sx, height = double(s.ny) * s.sy;
    if (!(g.source_to_iso_mm > 0.5 * std::hypot(width, height)))
        throw GeometryError("source lies inside the slice");
    const double r_fov = g.fov_radius_mm();
    for (std::uint32_t j = 0; j < s.ny; ++j) {
        const double y = (j + 0.5) * s.sy - 0.5 * height;
        for (std::uint32_t i = 0; i < s.nx; ++i) {
            if (s.at(i, j) == 0.0f) continue;
            const double x = (i + 0.5) * s.sx - 0.5 * width;
            if (std::hypot(x, y) > r_fov)
                throw GeometryError("nonzero pixel (" + std::to_string(i) + ", " + std::to_string(j) +
                                    ") lies outside the fan-beam field of view");
        }
    }
}

}  // namespace

Sinogram fanbeam_project(const Slice2D& s, const FanBeamGeometry& g, std::uint32_t slice_index) {
    g.validate();
    if (s.values.size() != std::size_t(s.nx) * s.ny) throw ArgumentError("slice payload size mismatch");
    check_field_of_view(s, g);

    // Zero border: one pixel before, two after, so bilinear taps never leave the buffer.
    const std::size_t px = std::size_t(s.nx) + 3;
    const std::size_t py = std::size_t(s.ny) + 3;
    std::vector<double> padded(px * py, 0.0);
    for (std::uint32_t j = 0; j < s.ny; ++j)
        for (std::uint32_t i = 0; i < s.nx; ++i) padded[(j + 1) * px + (i + 1)] = s.at(i, j);

    const double width = double(s.nx) * s.sx, height = double(s.ny) * s.sy;
    const double bx = 0.5 * width + 0.5 * s.sx;
    const double by = 0.5 * height + 0.5 * s.sy;
    const double step = 0.5 * std::min(s.sx, s.sy);
    const double inv_sx = 1.0 / s.sx, inv_sy = 1.0 / s.sy;
    // Fractional padded index = x / sx + offset.
    const double off_x = 0.5 * width * inv_sx + 0.5;
    const double off_y = 0.5 * height * inv_sy + 0.5;

    std::vector<double> cos_g(g.n_detectors), sin_g(g.n_detectors);
    for (std::uint32_t j = 0; j < g.n_detectors; ++j) {
        const double gamma = g.detector_angle(j);
        cos_g[j] = std::cos(gamma);
        sin_g[j] = std::sin(gamma);
    }

    Sinogram out(g, slice_index);
    parallel_for(g.n_views, [&](std::size_t v) {
        const View f = view_frame(g, std::uint32_t(v));
        auto row = out.row(std::uint32_t(v));
        for (std::uint32_t j = 0; j < g.n_detectors; ++j) {
            const double dx = f.cx * cos_g[j] - f.cy * sin_g[j];
            const double dy = f.cx * sin_g[j] + f.cy * cos_g[j];
            double t0, t1;
            if (!clip_ray(f.sx, f.sy, dx, dy, bx, by, t0, t1)) {
                row[j] = 0.0;
                continue;
            }
            const double len = t1 - t0;
            const auto n = std::size_t(std::ceil(len / step));
            const double dt = len / double(n);
            double fx = (f.sx + (t0 + 0.5 * dt) * dx) * inv_sx + off_x;
            double fy = (f.sy + (t0 + 0.5 * dt) * dy) * inv_sy + off_y;
            const double ddx = dt * dx * inv_sx, ddy = dt * dy * inv_sy;
            double sum = 0.0;
            // fx, fy stay positive inside the padded box, so truncation is floor.
            for (std::size_t k = 0; k < n; ++k, fx += ddx, fy += ddy) {
                const auto ix = std::size_t(fx), iy = std::size_t(fy);
                const double wx = fx - double(ix), wy = fy - double(iy);
                const std::size_t base = iy * px + ix;
                const double a = padded[base] + wx * (padded[base + 1] - padded[base]);
                const double b = padded[base + px] + wx * (padded[base + px + 1] - padded[base + px]);
                sum += a + wy * (b - a);
            }
            row[j] = sum * dt;
        }
    });
    return out;
}

// --- filtered back-projection ---------------------------------------------------------

namespace {

// Frequency response of the equiangular fan-beam ramp kernel
//   g(n a) = 1/2 (n a / sin(n a))^2 h(n a),  h = discrete ramp for spacing a,
// times a Hann window that reaches zero at Nyquist.
std::vector<double> fan_ramp_response(std::uint32_t n_det, double pitch, std::size_t n_fft) {
    std::vector<double> kernel(n_fft, 0.0);
    const double a2 = pitch * pitch;
    for (long k = -(long(n_det) - 1); k <= long(n_det) - 1; ++k) {
        double h = 0.0;
        if (k == 0) {
            h = 1.0 / (4.0 * a2);
        } else if (k % 2 != 0) {
            const double ka = double(k) * pitch;
            const double ratio = ka / std::sin(ka);
            h = -1.0 / (double(k) * double(k) * pi * pi * a2) * ratio * ratio;
        }
        const double g = 0.5 * h;
        kernel[std::size_t((k + long(n_fft)) % long(n_fft))] = g;
    }
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> spectrum;
    fft.fwd(spectrum, kernel);
    std::vector<double> response(n_fft);
    for (std::size_t k = 0; k < n_fft; ++k) {
        const double f = double(std::min(k, n_fft - k)) / double(n_fft);  // cycles per sample, <= 0.5
        const double hann = 0.5 * (1.0 + std::cos(2.0 * pi * f));
        response[k] = spectrum[k].real() * hann;
    }
    return response;
}

}  // namespace

Slice2D fanbeam_reconstruct(const Sinogram& sino, std::uint32_t nx, std::uint32_t ny, float sx, float sy) {
    const FanBeamGeometry& g = sino.geometry();
    g.validate();
    if (nx == 0 || ny == 0 || !(sx > 0.0f) || !(sy > 0.0f)) throw ArgumentError("invalid output grid");

    const std::uint32_t nd = g.n_detectors;
    std::size_t n_fft = 1;
    while (n_fft < 2 * std::size_t(nd)) n_fft <<= 1;
    const std::vector<double> response = fan_ramp_response(nd, g.detector_angular_pitch_rad, n_fft);

    std::vector<double> cos_w(nd);
    for (std::uint32_t j = 0; j < nd; ++j) cos_w[j] = g.source_to_iso_mm * std::cos(g.detector_angle(j));

    // Filtered projections, one row per view.
    std::vector<double> filtered(std::size_t(g.n_views) * nd);
    parallel_for(g.n_views, [&](std::size_t v) {
        Eigen::FFT<double> fft;
        std::vector<double> line(n_fft, 0.0);
        const auto row = sino.row(std::uint32_t(v));
        for (std::uint32_t j = 0; j < nd; ++j) line[j] = row[j] * cos_w[j];
        std::vector<std::complex<double>> spec;
        fft.fwd(spec, line);
        for (std::size_t k = 0; k < n_fft; ++k) spec[k] *= response[k];
        fft.inv(line, spec);
        for (std::uint32_t j = 0; j < nd; ++j)
            filtered[v * nd + j] = line[j] * g.detector_angular_pitch_rad;
    });

    // Back-projection reads each filtered view through a table sampled uniformly in
    // tan(gamma), oversampled 8x, so the per-pixel lookup needs no trigonometry.
    constexpr int kOversample = 8;
    const double t_lo = std::tan(g.detector_angle(0.0)), t_hi = std::tan(g.detector_angle(double(nd - 1)));
    const std::size_t n_tab = std::size_t(nd - 1) * kOversample + 1;
    const double dt = (t_hi - t_lo) / double(n_tab - 1);
    const double center = 0.5 * (double(nd) - 1.0);
    std::vector<double> u_of_t(n_tab);
    for (std::size_t k = 0; k < n_tab; ++k)
        u_of_t[k] = std::clamp(std::atan(t_lo + double(k) * dt) / g.detector_angular_pitch_rad + center, 0.0,
                               double(nd - 1));
    std::vector<double> table(std::size_t(g.n_views) * n_tab);
    parallel_for(g.n_views, [&](std::size_t v) {
        const double* q = &filtered[v * nd];
        double* t = &table[v * n_tab];
        for (std::size_t k = 0; k < n_tab; ++k) {
            const auto j0 = std::min<std::uint32_t>(std::uint32_t(u_of_t[k]), nd - 2);
            const double w = u_of_t[k] - double(j0);
            t[k] = q[j0] + w * (q[j0 + 1] - q[j0]);
        }
    });

    std::vector<View> frames(g.n_views);
    for (std::uint32_t v = 0; v < g.n_views; ++v) frames[v] = view_frame(g, v);

    const double d_beta = 2.0 * pi / double(g.n_views);
    const double width = double(nx) * sx, height = double(ny) * sy;
    const double r_fov = g.fov_radius_mm();
    const double inv_dt = 1.0 / dt;
    const double k_max = double(n_tab - 1);

    // Each pixel accumulates its views in increasing view order.
    Slice2D out(nx, ny, sx, sy);
    parallel_for(ny, [&](std::size_t jy) {
        const double y = (double(jy) + 0.5) * sy - 0.5 * height;
        for (std::uint32_t ix = 0; ix < nx; ++ix) {
            const double x = (double(ix) + 0.5) * sx - 0.5 * width;
            if (std::hypot(x, y) > r_fov) {
                out.at(ix, std::uint32_t(jy)) = 0.0f;
                continue;
            }
            double sum = 0.0;
            for (std::uint32_t v = 0; v < g.n_views; ++v) {
                const View& f = frames[v];
                const double vx = x - f.sx, vy = y - f.sy;
                const double along = f.cx * vx + f.cy * vy;
                const double across = f.cx * vy - f.cy * vx;
                const double k = (across / along - t_lo) * inv_dt;
                if (!(k >= 0.0 && k <= k_max)) continue;
                const auto k0 = std::min<std::size_t>(std::size_t(k), n_tab - 2);
                const double w = k - double(k0);
                const double* t = &table[std::size_t(v) * n_tab + k0];
                sum += (t[0] + w * (t[1] - t[0])) / (vx * vx + vy * vy);
            }
            out.at(ix, std::uint32_t(jy)) = float(sum * d_beta);
        }
    });
    return out;
}

// --- volume wrappers ------------------------------------------------------------------

std::vector<Sinogram> project_volume(const Volume3D& vol, const FanBeamGeometry& geometry) {
    std::vector<Sinogram> out(vol.dims().nz);
    parallel_for(vol.dims().nz, [&](std::size_t z) {
        try {
            out[z] = fanbeam_project(vol.slice_z(std::uint32_t(z)), geometry, std::uint32_t(z));
        } catch (const GeometryError& e) {
            throw GeometryError("slice " + std::to_string(z) + ": " + e.what());
        } catch (const ArgumentError& e) {
            throw ArgumentError("slice " + std::to_string(z) + ": " + e.what());
        }
    });
    return out;
}

Volume3D reconstruct_volume(std::span<const Sinogram> sinograms, Dims dims, Spacing spacing, VolumeKind kind) {
    if (sinograms.size() != dims.nz) throw ArgumentError("need one sinogram per slice");
    std::vector<Slice2D> slices(dims.nz);
    parallel_for(dims.nz, [&](std::size_t z) {
        slices[z] = fanbeam_reconstruct(sinograms[z], dims.nx, dims.ny, spacing.sx, spacing.sy);
    });
    return Volume3D::from_slices(dims, spacing, kind, slices);
}

// --- file format ----------------------------------------------------------------------

namespace {
constexpr char kSinoMagic[7] = "MARS1";
}

std::vector<std::uint8_t> encode_sinogram(const Sinogram& sino) {
    detail::ByteWriter w;
    w.bytes(kSinoMagic, 6);
    w.u32(sino.n_views());
    w.u32(sino.n_detectors());
    w.u32(sino.slice_index());
    w.f32(float(sino.geometry().source_to_iso_mm));
    w.f32(float(sino.geometry().detector_angular_pitch_rad));
    w.f32(float(sino.geometry().source_to_detector_mm));
    for (double v : sino.values()) w.f32(float(v));
    return w.take();
}

Sinogram decode_sinogram(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic(kSinoMagic);
    FanBeamGeometry g;
    g.n_views = r.u32();
    g.n_detectors = r.u32();
    const std::uint32_t slice = r.u32();
    g.source_to_iso_mm = r.f32();
    g.detector_angular_pitch_rad = r.f32();
    g.source_to_detector_mm = r.f32();
    if (g.n_views == 0 || g.n_detectors == 0) throw ParseError(ParseErrorCode::ZeroDimension, "empty sinogram");
    std::uint64_t n = 0;
    if (!detail::checked_count({g.n_views, g.n_detectors}, std::uint64_t(1) << 31, n))
        throw ParseError(ParseErrorCode::DimOverflow, "sinogram too large");
    if (r.remaining() < 4 * n) throw ParseError(ParseErrorCode::Truncated, "sinogram payload");
    if (r.remaining() > 4 * n) throw ParseError(ParseErrorCode::TrailingBytes, "data after sinogram payload");
    std::vector<double> values(n);
    for (auto& v : values) v = r.f32();
    try {
        g.validate();
        return Sinogram(g, slice, std::move(values));
    } catch (const Error& e) {
        throw ParseError(ParseErrorCode::InvalidData, e.what());
    }
}

void write_sinogram(const Sinogram& sino, const std::filesystem::path& path) {
    write_file_bytes(path, encode_sinogram(sino));
}

Sinogram read_sinogram(const std::filesystem::path& path) { return decode_sinogram(read_file_bytes(path)); }

}  // namespace marsim
