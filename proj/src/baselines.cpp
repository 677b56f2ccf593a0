#include "marsim/baselines.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/phantom.hpp"

namespace marsim {

// --- metal detection ------------------------------------------------------------------

Volume3D detect_metal(const Volume3D& vol_hu, float hu_threshold, std::size_t min_component) {
    if (vol_hu.kind() != VolumeKind::HU) throw ArgumentError("detect_metal expects an HU volume");
    const Dims d = vol_hu.dims();
    const std::size_t n = vol_hu.size();
    std::vector<std::uint8_t> candidate(n), visited(n, 0);
    for (std::size_t i = 0; i < n; ++i) candidate[i] = vol_hu[i] >= hu_threshold;

    std::vector<float> out(n, 0.0f);
    std::vector<std::size_t> stack, component;
    for (std::size_t seed = 0; seed < n; ++seed) {
        if (!candidate[seed] || visited[seed]) continue;
        component.clear();
        stack.assign(1, seed);
        visited[seed] = 1;
        while (!stack.empty()) {
            const std::size_t c = stack.back();
            stack.pop_back();
            component.push_back(c);
            const long x = long(c % d.nx), y = long((c / d.nx) % d.ny), z = long(c / (std::size_t(d.nx) * d.ny));
            for (long dz = -1; dz <= 1; ++dz)
                for (long dy = -1; dy <= 1; ++dy)
                    for (long dx = -1; dx <= 1; ++dx) {
                        const long X = x + dx, Y = y + dy, Z = z + dz;
                        if (X < 0 || Y < 0 || Z < 0 || X >= long(d.nx) || Y >= long(d.ny) || Z >= long(d.nz)) continue;
                        const std::size_t k = vol_hu.index(std::uint32_t(X), std::uint32_t(Y), std::uint32_t(Z));
                        if (candidate[k] && !visited[k]) {
                            visited[k] = 1;
                            stack.push_back(k);
                        }
                    }
        }
        if (component.size() >= min_component)
            for (auto k : component) out[k] = 1.0f;
    }
    return vol_hu.with_values(std::move(out), VolumeKind::Mask);
}

// --- trace ----------------------------------------------------------------------------

MetalTrace::MetalTrace(std::uint32_t n_views, std::uint32_t n_detectors)
    : n_views_(n_views), n_detectors_(n_detectors), bins_(std::size_t(n_views) * n_detectors, 0) {}

std::size_t MetalTrace::count() const { return std::size_t(std::count(bins_.begin(), bins_.end(), 1)); }

std::size_t MetalTrace::count_in_view(std::uint32_t v) const {
    const auto b = bins_.begin() + std::ptrdiff_t(v) * n_detectors_;
    return std::size_t(std::count(b, b + n_detectors_, 1));
}

namespace {

MetalTrace trace_from_path(const Sinogram& path, double min_pixel) {
    MetalTrace t(path.n_views(), path.n_detectors());
    for (std::uint32_t v = 0; v < path.n_views(); ++v)
        for (std::uint32_t j = 0; j < path.n_detectors(); ++j) t.set(v, j, path.at(v, j) > 0.5 * min_pixel);
    return t;
}

void require_trace_shape(const Sinogram& s, const MetalTrace& t) {
    if (s.n_views() != t.n_views() || s.n_detectors() != t.n_detectors())
        throw ArgumentError("metal trace does not match the sinogram shape");
}

// Linear interpolation over the trace runs of one row.
void interpolate_row(std::span<double> row, const MetalTrace& trace, std::uint32_t v) {
    const long n = long(row.size());
    long j = 0;
    while (j < n) {
        if (!trace.at(v, std::uint32_t(j))) {
            ++j;
            continue;
        }
        const long a = j;
        while (j < n && trace.at(v, std::uint32_t(j))) ++j;
        const long left = a - 1, right = j;
        if (left < 0 && right >= n) throw InterpolationError("view " + std::to_string(v) + " is entirely covered by metal");
        if (left < 0) {
            for (long k = a; k < right; ++k) row[k] = row[right];
        } else if (right >= n) {
            for (long k = a; k < right; ++k) row[k] = row[left];
        } else {
            const double yl = row[left], yr = row[right];
            for (long k = a; k < right; ++k) row[k] = yl + (yr - yl) * double(k - left) / double(right - left);
        }
    }
}

}  // namespace

MetalTrace metal_trace(const Slice2D& mask, const FanBeamGeometry& geometry) {
    return trace_from_path(fanbeam_project(mask, geometry), std::min(mask.sx, mask.sy));
}

Sinogram mar_li(const Sinogram& sino, const MetalTrace& trace) {
    require_trace_shape(sino, trace);
    Sinogram out = sino;
    for (std::uint32_t v = 0; v < sino.n_views(); ++v)
        if (trace.count_in_view(v) > 0) interpolate_row(out.row(v), trace, v);
    return out;
}

// --- BHC ------------------------------------------------------------------------------

double eval_cubic(const std::vector<double>& c, double x) {
    double r = 0.0;
    for (std::size_t k = c.size(); k-- > 0;) r = r * x + c[k];
    return r;
}

Sinogram mar_bhc(const Sinogram& sino, const MetalTrace& trace, const Sinogram& metal_path_mm,
                 double metal_mu_per_mm, BhcReport* report) {
    require_trace_shape(sino, trace);
    require_same_shape(sino, metal_path_mm, "mar_bhc");
    if (!(metal_mu_per_mm > 0.0)) throw ArgumentError("metal attenuation must be positive");
    const Sinogram background = mar_li(sino, trace);
    Sinogram out = background;
    if (report) *report = BhcReport{};
    if (report) report->coefficients.resize(sino.n_views());

    for (std::uint32_t v = 0; v < sino.n_views(); ++v) {
        const std::size_t m = trace.count_in_view(v);
        if (m == 0) continue;
        if (m < 4) {
            if (report) report->fallback_views.push_back(v);
            continue;
        }
        std::vector<double> raw, ideal;
        std::vector<std::uint32_t> bins;
        for (std::uint32_t j = 0; j < sino.n_detectors(); ++j) {
            if (!trace.at(v, j)) continue;
            raw.push_back(sino.at(v, j) - background.at(v, j));
            ideal.push_back(metal_mu_per_mm * metal_path_mm.at(v, j));
            bins.push_back(j);
        }
        double scale = 0.0;
        for (double r : raw) scale = std::max(scale, std::abs(r));
        if (scale == 0.0) scale = 1.0;
        const Eigen::Index rows = Eigen::Index(m);
        Eigen::MatrixXd a(rows, 4);
        Eigen::VectorXd b(rows);
        for (std::size_t k = 0; k < m; ++k) {
            const double x = raw[k] / scale;
            a(long(k), 0) = 1.0;
            a(long(k), 1) = x;
            a(long(k), 2) = x * x;
            a(long(k), 3) = x * x * x;
            b(long(k)) = ideal[k];
        }
        const Eigen::VectorXd c = a.colPivHouseholderQr().solve(b);
        const std::vector<double> coef = {c(0), c(1) / scale, c(2) / (scale * scale), c(3) / (scale * scale * scale)};

        const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
        bool monotone = true;
        for (int s = 0; s <= 32 && monotone; ++s) {
            const double x = *lo + (*hi - *lo) * s / 32.0;
            const double slope = coef[1] + 2.0 * coef[2] * x + 3.0 * coef[3] * x * x;
            monotone = slope >= -1e-12 * std::max(1.0, std::abs(coef[1]));
        }
        if (report) {
            if (!monotone) report->non_monotone_views.push_back(v);
            report->coefficients[v] = coef;
        }
        for (std::size_t k = 0; k < m; ++k) out.at(v, bins[k]) = background.at(v, bins[k]) + eval_cubic(coef, raw[k]);
    }
    return out;
}

// --- NMAR -----------------------------------------------------------------------------

Volume3D nmar_prior(const Volume3D& vol_hu, const Volume3D& mask, const NmarSettings& settings) {
    require_same_grid(vol_hu, mask, "nmar_prior");
    if (vol_hu.kind() != VolumeKind::HU) throw ArgumentError("nmar_prior expects an HU volume");
    double bone_sum = 0.0;
    std::size_t bone_n = 0;
    for (std::size_t i = 0; i < vol_hu.size(); ++i)
        if (mask[i] == 0.0f && vol_hu[i] >= settings.soft_bone_hu) {
            bone_sum += vol_hu[i];
            ++bone_n;
        }
    const float bone = bone_n ? float(bone_sum / double(bone_n)) : 1000.0f;
    std::vector<float> out(vol_hu.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float v = vol_hu[i];
        if (mask[i] != 0.0f) out[i] = 0.0f;
        else if (v < settings.air_soft_hu) out[i] = kHuAir;
        else if (v < settings.soft_bone_hu) out[i] = 0.0f;
        else out[i] = bone;
    }
    return vol_hu.with_values(std::move(out));
}

namespace {

Sinogram nmar_sinogram(const Sinogram& sino, const Sinogram& prior, const MetalTrace& trace, double eps) {
    Sinogram norm = sino;
    std::vector<std::uint8_t> fallback(sino.n_views(), 0);
    for (std::uint32_t v = 0; v < sino.n_views(); ++v)
        for (std::uint32_t j = 0; j < sino.n_detectors(); ++j) {
            const double p = prior.at(v, j);
            if (trace.at(v, j) && p <= eps) fallback[v] = 1;
            norm.at(v, j) = sino.at(v, j) / std::max(p, eps);
        }
    const Sinogram li_norm = mar_li(norm, trace);
    const Sinogram li_plain = mar_li(sino, trace);
    Sinogram out = sino;
    for (std::uint32_t v = 0; v < sino.n_views(); ++v) {
        if (trace.count_in_view(v) == 0) continue;
        for (std::uint32_t j = 0; j < sino.n_detectors(); ++j)
            out.at(v, j) = fallback[v] ? li_plain.at(v, j) : li_norm.at(v, j) * std::max(prior.at(v, j), eps);
    }
    return out;
}

Slice2D relative_attenuation(const Volume3D& vol, std::uint32_t z, double mu_ref) {
    Slice2D s = vol.slice_z(z);
    for (float& v : s.values) v = float(std::max(0.0, mu_ref * (1.0 + double(v) / 1000.0)));
    return s;
}

std::vector<Volume3D> run_with_mask(const std::vector<BaselineMethod>& methods, const Volume3D& vol_hu,
                                    const Volume3D& mask, const WaterTable& water, const BaselineSettings& settings) {
    if (vol_hu.kind() != VolumeKind::HU) throw ArgumentError("baselines expect an HU volume");
    require_same_grid(vol_hu, mask, "baseline");
    const Dims d = vol_hu.dims();
    const Spacing sp = vol_hu.spacing();
    const FanBeamGeometry geom =
        settings.geometry ? *settings.geometry : FanBeamGeometry::for_slice(d.nx, d.ny, sp.sx, sp.sy);
    const double mu_ref = water.mu_per_mm(settings.reference_energy_kev);
    const double mu_metal = mu_ref * (1.0 + double(kMetalHu) / 1000.0);
    const double min_pixel = std::min(sp.sx, sp.sy);

    const bool need_prior = std::find(methods.begin(), methods.end(), BaselineMethod::NMAR) != methods.end();
    std::optional<Volume3D> prior;
    if (need_prior) prior = nmar_prior(vol_hu, mask, settings.nmar);

    std::vector<std::vector<Slice2D>> slices(methods.size(), std::vector<Slice2D>(d.nz));
    parallel_for(d.nz, [&](std::size_t zi) {
        const auto z = std::uint32_t(zi);
        try {
            const Slice2D input = vol_hu.slice_z(z);
            const Slice2D mask_slice = mask.slice_z(z);
            const bool has_metal =
                std::any_of(mask_slice.values.begin(), mask_slice.values.end(), [](float v) { return v != 0.0f; });
            MetalTrace trace;
            Sinogram path;
            if (has_metal) {
                path = fanbeam_project(mask_slice, geom, z);
                trace = trace_from_path(path, min_pixel);
            }
            if (!has_metal || trace.empty()) {
                for (auto& per_method : slices) per_method[z] = input;
                return;
            }
            // Only the change made to the sinogram is reconstructed and added to the input,
            // so regions the correction does not reach keep their original values.
            const Sinogram sino = fanbeam_project(relative_attenuation(vol_hu, z, mu_ref), geom, z);
            for (std::size_t m = 0; m < methods.size(); ++m) {
                Sinogram corrected;
                switch (methods[m]) {
                    case BaselineMethod::LI: corrected = mar_li(sino, trace); break;
                    case BaselineMethod::BHC: corrected = mar_bhc(sino, trace, path, mu_metal); break;
                    case BaselineMethod::NMAR: {
                        const Sinogram p = fanbeam_project(relative_attenuation(*prior, z, mu_ref), geom, z);
                        corrected = nmar_sinogram(sino, p, trace, settings.nmar.epsilon);
                        break;
                    }
                }
                Sinogram& delta = corrected;
                for (std::size_t i = 0; i < delta.size(); ++i) delta.values()[i] -= sino.values()[i];
                Slice2D img = fanbeam_reconstruct(delta, d.nx, d.ny, sp.sx, sp.sy);
                for (std::size_t i = 0; i < img.values.size(); ++i) {
                    const double hu = double(input.values[i]) + 1000.0 * double(img.values[i]) / mu_ref;
                    img.values[i] = mask_slice.values[i] != 0.0f
                                        ? input.values[i]
                                        : float(std::clamp(hu, double(kHuMin), double(kHuMax)));
                }
                slices[m][z] = std::move(img);
            }
        } catch (const InterpolationError& e) {
            throw InterpolationError("slice " + std::to_string(z) + ": " + e.what());
        } catch (const GeometryError& e) {
            throw GeometryError("slice " + std::to_string(z) + ": " + e.what());
        }
    });
    std::vector<Volume3D> out;
    for (auto& s : slices) out.push_back(Volume3D::from_slices(d, sp, VolumeKind::HU, s));
    return out;
}

}  // namespace

BaselineMethod parse_baseline_method(const std::string& name) {
    if (name == "li") return BaselineMethod::LI;
    if (name == "bhc") return BaselineMethod::BHC;
    if (name == "nmar") return BaselineMethod::NMAR;
    throw ConfigError("unknown baseline method '" + name + "' (expected li, bhc or nmar)");
}

const char* to_string(BaselineMethod method) {
    switch (method) {
        case BaselineMethod::LI: return "li";
        case BaselineMethod::BHC: return "bhc";
        case BaselineMethod::NMAR: return "nmar";
    }
    return "?";
}

Volume3D nmar(const Volume3D& vol_hu, const Volume3D& mask, const WaterTable& water, const BaselineSettings& settings) {
    if (mask.kind() != VolumeKind::Mask) throw ArgumentError("nmar expects a Mask");
    return run_with_mask({BaselineMethod::NMAR}, vol_hu, mask, water, settings).front();
}

std::vector<Volume3D> run_baselines(const std::vector<BaselineMethod>& methods, const Volume3D& vol_hu,
                                    const WaterTable& water, const BaselineSettings& settings) {
    const Volume3D mask = detect_metal(vol_hu, settings.metal_threshold_hu);
    return run_with_mask(methods, vol_hu, mask, water, settings);
}

Volume3D run_baseline(BaselineMethod method, const Volume3D& vol_hu, const WaterTable& water,
                      const BaselineSettings& settings) {
    return run_baselines({method}, vol_hu, water, settings).front();
}

}  // namespace marsim
