#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "marsim/phantom.hpp"
#include "marsim/projector.hpp"
#include "marsim/rng.hpp"
#include "marsim/volume.hpp"

namespace marsim {

inline constexpr double kElectronRestEnergyKev = 511.0;

/// Photon energy after Compton scattering through angle beta:
/// E' = E / (1 + (E/511)(1 - cos beta)).
double compton_energy(double energy_kev, double beta_rad);

/// Klein-Nishina differential cross-section in cos(theta), unnormalized.
double klein_nishina_density(double energy_kev, double cos_theta);

/// Integral of klein_nishina_density over cos(theta) in [-1, 1] (closed form).
double klein_nishina_total(double energy_kev);

/// Draw cos(theta) from the Klein-Nishina distribution (Kahn's rejection method).
double sample_klein_nishina_cos(double energy_kev, CounterRng& rng);

/// Probability that an interaction at this energy is a photoelectric absorption
/// (smooth model 1 / (1 + (E/28 keV)^3)).
double photoelectric_probability(double energy_kev);

/// Precomputed Monte Carlo tallies for one fan-beam plane through a phantom.
/// `primary` holds the unscattered signal F, `scatter` the scattered offset S~; both
/// are energy-weighted and scaled so an unattenuated ray tallies 1.
struct ScatterBank {
    FanBeamGeometry geometry;
    Sinogram primary;
    Sinogram scatter;
    std::uint64_t n_histories = 0;
    std::uint64_t seed = 0;
    std::uint32_t phantom_id = 0;

    void validate() const;
    bool operator==(const ScatterBank&) const = default;
};

inline constexpr std::uint32_t kPhantomIdHead = 1;
inline constexpr std::uint32_t kPhantomIdUniform = 2;

enum class ScatterEstimator {
    /// Tally scattered photons where they hit the detector.
    Analog,
    /// At every real collision, score the expected uncollided Compton contribution to one
    /// uniformly chosen detector bin; transport continues analog but is not tallied.
    ForcedDetection,
};

struct TraceOptions {
    /// Histories terminate at the interaction after this many Compton events (1..3).
    int max_scatters = 1;
    bool photoelectric = true;
    std::uint32_t phantom_id = kPhantomIdHead;
    ScatterEstimator estimator = ScatterEstimator::ForcedDetection;
};

ScatterEstimator parse_scatter_estimator(const std::string& name);

/// Detector-plane geometry for tracing through a phantom: defaults from the
/// phantom's axial extent.
FanBeamGeometry bank_geometry_for(const MaterialPhantom& phantom, std::uint32_t n_views = 180);

/// Trace n_histories photons (spread evenly over the views) through the phantom.
/// Material attenuation is density-scaled water attenuation. History h of view v uses
/// the Philox stream keyed by (seed, v * 2^32 + h); views are tallied independently.
ScatterBank trace_photons(const MaterialPhantom& phantom, const FanBeamGeometry& geometry,
                          const EnergySpectrum& spectrum, const WaterTable& water,
                          std::uint64_t n_histories, std::uint64_t seed,
                          const TraceOptions& options = {});

/// S = mean(F)/mean(S~) * alpha_r * S~, so that mean(S)/mean(F) == alpha_r.
Sinogram normalize_scatter(const Sinogram& primary, const Sinogram& scatter, double alpha_r);
Sinogram normalize_scatter(const ScatterBank& bank, double alpha_r);

inline constexpr double kAlphaMin = 0.001;
inline constexpr double kAlphaMax = 0.02;
void validate_alpha(double alpha_r);

/// Disk in the bank's plane (mm, isocenter-centered) whose projection band is resampled
/// onto a target sinogram grid.
struct RoiFootprint {
    double center_x_mm = 0.0;
    double center_y_mm = 0.0;
    double radius_mm = 0.0;
    /// Number of candidate view rotations drawn from; 0 means one per bank view,
    /// 1 disables the random rotation.
    std::uint32_t view_offsets = 0;
};

/// Extract the band of bank detector bins covered by the footprint in each view,
/// resample linearly onto `target` (views circularly, detectors across the band).
/// A view rotation chosen with `rng` models the unknown pose of the ROI in the head.
Sinogram sample_trace(const ScatterBank& bank, const RoiFootprint& footprint,
                      const FanBeamGeometry& target, CounterRng& rng);

/// File: "MARB1\0", u32 n_views, n_detectors, f32 source_to_iso_mm,
/// detector_angular_pitch_rad, source_to_detector_mm, u64 n_histories, u64 seed,
/// u32 phantom_id, then F and S~ payloads (f32, n_views*n_detectors each).
void write_scatter_bank(const ScatterBank& bank, const std::filesystem::path& path);
ScatterBank read_scatter_bank(const std::filesystem::path& path);

}  // namespace marsim
