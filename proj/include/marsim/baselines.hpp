#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "marsim/projector.hpp"
#include "marsim/volume.hpp"

namespace marsim {

inline constexpr float kMetalThresholdHu = 2500.0f;

/// Voxels >= threshold, keeping 26-connected components of at least min_component voxels.
Volume3D detect_metal(const Volume3D& vol_hu, float hu_threshold = kMetalThresholdHu,
                      std::size_t min_component = 8);

/// Sinogram bins whose rays cross metal.
class MetalTrace {
public:
    MetalTrace() = default;
    MetalTrace(std::uint32_t n_views, std::uint32_t n_detectors);

    std::uint32_t n_views() const { return n_views_; }
    std::uint32_t n_detectors() const { return n_detectors_; }
    bool at(std::uint32_t v, std::uint32_t j) const { return bins_[std::size_t(v) * n_detectors_ + j] != 0; }
    void set(std::uint32_t v, std::uint32_t j, bool on) { bins_[std::size_t(v) * n_detectors_ + j] = on ? 1 : 0; }
    std::size_t count() const;
    std::size_t count_in_view(std::uint32_t v) const;
    bool empty() const { return count() == 0; }

private:
    std::uint32_t n_views_ = 0;
    std::uint32_t n_detectors_ = 0;
    std::vector<std::uint8_t> bins_;
};

/// Bin set iff the projection of the binary mask exceeds half a pixel size.
MetalTrace metal_trace(const Slice2D& mask, const FanBeamGeometry& geometry);

/// Trace bins replaced, per view, by linear interpolation between the nearest untouched
/// bins (constant extension at the row ends). Throws InterpolationError when a whole
/// view is covered.
Sinogram mar_li(const Sinogram& sino, const MetalTrace& trace);

struct BhcReport {
    /// Views with fewer than four trace bins, corrected by mar_li instead.
    std::vector<std::uint32_t> fallback_views;
    /// Views whose fitted polynomial decreases somewhere on the sample range.
    std::vector<std::uint32_t> non_monotone_views;
    /// Cubic coefficients (c0..c3) per view; empty for fallback views.
    std::vector<std::vector<double>> coefficients;
};

/// Beam-hardening-style correction of the metal trace. Per view, the excess attenuation
/// over the interpolated background (raw = sino - mar_li(sino)) is mapped by a cubic p
/// fitted to (raw -> ideal) pairs, ideal = metal_mu * metal path length; trace bins become
/// background + p(raw).
Sinogram mar_bhc(const Sinogram& sino, const MetalTrace& trace, const Sinogram& metal_path_mm,
                 double metal_mu_per_mm, BhcReport* report = nullptr);

/// Evaluate p(x) = c0 + c1 x + c2 x^2 + c3 x^3.
double eval_cubic(const std::vector<double>& c, double x);

struct NmarSettings {
    float air_soft_hu = -300.0f;
    float soft_bone_hu = 400.0f;
    double epsilon = 1e-3;
};

/// Three-class prior (air -1000, soft 0, bone = mean bone-class HU); metal voxels -> soft.
Volume3D nmar_prior(const Volume3D& vol_hu, const Volume3D& mask, const NmarSettings& settings = {});

enum class BaselineMethod { LI, BHC, NMAR };

BaselineMethod parse_baseline_method(const std::string& name);
const char* to_string(BaselineMethod method);

struct BaselineSettings {
    float metal_threshold_hu = kMetalThresholdHu;
    /// Energy at which HU are mapped to attenuation for re-projection.
    double reference_energy_kev = 77.2;
    /// nullopt: default geometry for the slice size.
    std::optional<FanBeamGeometry> geometry;
    NmarSettings nmar;
};

/// Normalized MAR: sinogram divided by the prior's sinogram, interpolated over the trace,
/// denormalized and reconstructed; metal voxels re-inserted from the input.
Volume3D nmar(const Volume3D& vol_hu, const Volume3D& mask, const WaterTable& water,
              const BaselineSettings& settings = {});

/// Apply one baseline slice by slice to an HU volume with metal detected from the
/// volume itself. The reconstruction of (corrected - measured sinogram) is added to the
/// input, so slices without a metal trace come back unchanged; metal voxels are
/// re-inserted from the input.
Volume3D run_baseline(BaselineMethod method, const Volume3D& vol_hu, const WaterTable& water,
                      const BaselineSettings& settings = {});

/// Several baselines on one volume; re-projection and metal trace are computed once.
std::vector<Volume3D> run_baselines(const std::vector<BaselineMethod>& methods, const Volume3D& vol_hu,
                                    const WaterTable& water, const BaselineSettings& settings = {});

}  // namespace marsim
