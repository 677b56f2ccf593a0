#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "marsim/projector.hpp"
#include "marsim/scatter.hpp"
#include "marsim/volume.hpp"

namespace marsim {

inline constexpr double kPhotonFloor = 1e-8;
inline constexpr double kDefaultNoiseSigma2 = 0.04;
inline constexpr double kDefaultPhotonsPerBin = 50.0;

struct SimulationConfig {
    EnergySpectrum spectrum = EnergySpectrum::default_tungsten_140kvp();
    bool scatter_enabled = false;
    /// Scatter-to-primary ratio; nullopt draws it uniformly from [0.001, 0.02].
    std::optional<double> alpha_r;
    double noise_sigma2 = kDefaultNoiseSigma2;
    /// Detector signal of an unattenuated ray; noise_sigma2 is in these units.
    double photons_per_bin = kDefaultPhotonsPerBin;
    std::uint64_t rng_seed = 0;
    /// nullopt derives the default geometry from the slice size.
    std::optional<FanBeamGeometry> geometry;
    /// Where the simulated volume sits inside the scatter bank's phantom plane.
    RoiFootprint roi;

    void validate() const;
};

/// Noise stream for one slice; bin b of the slice draws counter_normal(seed, slice, b).
struct NoiseStream {
    std::uint64_t seed = 0;
    std::uint32_t slice = 0;
};

/// One attenuation volume per spectrum sample.
std::vector<Volume3D> attenuation_stack(const Volume3D& vol_hu, const EnergySpectrum& spectrum,
                                        const WaterTable& water);

/// L(b) = sum_i phi_i exp(-P_i(b)) + S(b).
Sinogram detector_signal(std::span<const Sinogram> projections, const EnergySpectrum& spectrum,
                         const Sinogram* scatter);

/// L_final = L + N(0, sigma2) per bin (no clamping).
Sinogram add_detector_noise(const Sinogram& signal, double sigma2, const NoiseStream& stream);

/// -ln(max(L, 1e-8)).
Sinogram log_transform(const Sinogram& signal);

/// Detector model followed by the monochromatic-equivalent log transform. The signal is
/// scaled to photons_per_bin before the noise is added and rescaled before the log.
Sinogram polychromatic_sinogram(std::span<const Sinogram> projections, const EnergySpectrum& spectrum,
                                const Sinogram* scatter, double noise_sigma2,
                                const NoiseStream& stream, double photons_per_bin = 1.0);

/// Scatter-to-primary ratio used for a volume: fixed value or a seeded uniform draw.
double resolve_alpha(const SimulationConfig& cfg);

/// Full artifact simulation of an HU volume (already containing metal), slice by slice:
/// energy-resolved projections, detector model with scatter and noise, FBP, and HU
/// remapping at the spectrum's mean energy. The same alpha_r and scatter trace are used
/// for every slice of the volume.
Volume3D simulate_artifacts(const Volume3D& vol_hu, const SimulationConfig& cfg,
                            const WaterTable& water, const ScatterBank* bank = nullptr);

}  // namespace marsim
