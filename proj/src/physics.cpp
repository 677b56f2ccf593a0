#include "marsim/physics.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/rng.hpp"

namespace marsim {

namespace {
constexpr std::uint64_t kAlphaStream = 0xa1fa;
constexpr std::uint64_t kTraceStream = 0x7ace;
}  // namespace

void SimulationConfig::validate() const {
    if (alpha_r) validate_alpha(*alpha_r);
    if (!std::isfinite(noise_sigma2) || noise_sigma2 < 0.0) throw ConfigError("noise_sigma2 must be finite and >= 0");
    if (geometry) {
        try {
            geometry->validate();
        } catch (const GeometryError& e) {
            throw ConfigError(std::string("geometry: ") + e.what());
        }
    }
    if (!(roi.radius_mm >= 0.0)) throw ConfigError("roi radius must be >= 0");
    if (!(photons_per_bin > 0.0) || !std::isfinite(photons_per_bin)) throw ConfigError("photons_per_bin must be positive");
}

std::vector<Volume3D> attenuation_stack(const Volume3D& vol_hu, const EnergySpectrum& spectrum,
                                        const WaterTable& water) {
    std::vector<Volume3D> out;
    out.reserve(spectrum.size());
    for (const auto& s : spectrum.samples()) out.push_back(hu_to_attenuation(vol_hu, s.energy_kev, water));
    return out;
}

Sinogram detector_signal(std::span<const Sinogram> projections, const EnergySpectrum& spectrum,
                         const Sinogram* scatter) {
    if (projections.size() != spectrum.size())
        throw ArgumentError("need one projection per spectrum sample (" + std::to_string(spectrum.size()) + "), got " +
                            std::to_string(projections.size()));
    for (const auto& p : projections) require_same_shape(p, projections[0], "detector_signal");
    if (scatter) require_same_shape(*scatter, projections[0], "detector_signal scatter");

    Sinogram out(projections[0].geometry(), projections[0].slice_index());
    auto l = out.values();
    for (std::size_t i = 0; i < projections.size(); ++i) {
        const double phi = spectrum.samples()[i].weight;
        const auto p = projections[i].values();
        for (std::size_t b = 0; b < l.size(); ++b) l[b] += phi * std::exp(-p[b]);
    }
    if (scatter) {
        const auto s = scatter->values();
        for (std::size_t b = 0; b < l.size(); ++b) l[b] += s[b];
    }
    return out;
}

Sinogram add_detector_noise(const Sinogram& signal, double sigma2, const NoiseStream& stream) {
    if (!std::isfinite(sigma2) || sigma2 < 0.0) throw ArgumentError("noise variance must be finite and >= 0");
    Sinogram out = signal;
    if (sigma2 == 0.0) return out;
    const double sigma = std::sqrt(sigma2);
    auto v = out.values();
    for (std::size_t b = 0; b < v.size(); ++b) v[b] += sigma * counter_normal(stream.seed, stream.slice, b);
    return out;
}

Sinogram log_transform(const Sinogram& signal) {
    Sinogram out = signal;
    for (double& v : out.values()) v = -std::log(std::max(v, kPhotonFloor));
    return out;
}

Sinogram polychromatic_sinogram(std::span<const Sinogram> projections, const EnergySpectrum& spectrum,
                                const Sinogram* scatter, double noise_sigma2, const NoiseStream& stream,
                                double photons_per_bin) {
    if (!(photons_per_bin > 0.0) || !std::isfinite(photons_per_bin))
        throw ArgumentError("photons_per_bin must be positive");
    Sinogram signal = detector_signal(projections, spectrum, scatter);
    if (photons_per_bin == 1.0) return log_transform(add_detector_noise(signal, noise_sigma2, stream));
    for (double& v : signal.values()) v *= photons_per_bin;
    Sinogram noisy = add_detector_noise(signal, noise_sigma2, stream);
    for (double& v : noisy.values()) v /= photons_per_bin;
    return log_transform(noisy);
}

double resolve_alpha(const SimulationConfig& cfg) {
    if (cfg.alpha_r) {
        validate_alpha(*cfg.alpha_r);
        return *cfg.alpha_r;
    }
    CounterRng rng(cfg.rng_seed, kAlphaStream);
    return kAlphaMin + (kAlphaMax - kAlphaMin) * rng.uniform();
}

Volume3D simulate_artifacts(const Volume3D& vol_hu, const SimulationConfig& cfg, const WaterTable& water,
                            const ScatterBank* bank) {
    cfg.validate();
    if (vol_hu.kind() != VolumeKind::HU) throw ArgumentError("simulate_artifacts expects an HU volume");
    if (cfg.scatter_enabled && !bank) throw ConfigError("scatter is enabled but no scatter bank was supplied");

    const Dims d = vol_hu.dims();
    const Spacing sp = vol_hu.spacing();
    const FanBeamGeometry geom = cfg.geometry ? *cfg.geometry : FanBeamGeometry::for_slice(d.nx, d.ny, sp.sx, sp.sy);
    geom.validate();

    const double alpha = resolve_alpha(cfg);
    Sinogram trace;
    if (cfg.scatter_enabled) {
        RoiFootprint roi = cfg.roi;
        if (roi.radius_mm <= 0.0) roi.radius_mm = 0.5 * std::hypot(d.nx * double(sp.sx), d.ny * double(sp.sy));
        CounterRng rng(cfg.rng_seed, kTraceStream);
        trace = sample_trace(*bank, roi, geom, rng);
    }

    // mu_i = mu_w(E_i) * max(0, 1 + HU/1000), so every energy shares one projection.
    std::vector<double> mu_w;
    for (const auto& s : cfg.spectrum.samples()) mu_w.push_back(water.mu_per_mm(s.energy_kev));
    const double e_ref = cfg.spectrum.mean_energy();
    const double mu_ref = water.mu_per_mm(e_ref);

    std::vector<Slice2D> slices(d.nz);
    parallel_for(d.nz, [&](std::size_t z) {
        Slice2D rel = vol_hu.slice_z(std::uint32_t(z));
        for (float& v : rel.values) v = float(std::max(0.0, 1.0 + double(v) / 1000.0));
        const Sinogram base = fanbeam_project(rel, geom, std::uint32_t(z));

        std::vector<Sinogram> proj(mu_w.size(), base);
        for (std::size_t i = 0; i < mu_w.size(); ++i)
            for (double& v : proj[i].values()) v *= mu_w[i];

        Sinogram scatter;
        if (cfg.scatter_enabled) {
            const Sinogram primary = detector_signal(proj, cfg.spectrum, nullptr);
            scatter = normalize_scatter(primary, trace, alpha);
        }
        const Sinogram eff = polychromatic_sinogram(proj, cfg.spectrum, cfg.scatter_enabled ? &scatter : nullptr,
                                                    cfg.noise_sigma2, NoiseStream{cfg.rng_seed, std::uint32_t(z)},
                                                    cfg.photons_per_bin);
        Slice2D mu = fanbeam_reconstruct(eff, d.nx, d.ny, sp.sx, sp.sy);
        for (float& v : mu.values)
            v = float(std::clamp(1000.0 * (double(v) / mu_ref - 1.0), double(kHuMin), double(kHuMax)));
        slices[z] = std::move(mu);
    });
    return Volume3D::from_slices(d, sp, VolumeKind::HU, slices);
}

}  // namespace marsim
