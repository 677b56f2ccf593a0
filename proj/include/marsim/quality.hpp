#pragma once

#include <span>
#include <string>
#include <vector>

#include "marsim/volume.hpp"

namespace marsim {

inline constexpr double kPsnrCapDb = 99.0;
inline constexpr double kRetinexEpsilon = 1e-6;

struct SliceMetrics {
    double psnr_db = 0.0;
    double rmse = 0.0;
    double ssim = 0.0;
    bool identical = false;
};

struct MetricReport {
    /// Capped at 99 dB when the inputs are identical (see `identical`).
    double psnr_db = 0.0;
    double rmse = 0.0;
    double ssim = 0.0;
    bool identical = false;
    std::vector<SliceMetrics> per_slice;

    /// "psnr=... rmse=... ssim=... identical=0|1"
    std::string to_key_value() const;
};

struct SsimSettings {
    double sigma = 1.5;
    int radius = 5;
    double k1 = 0.01;
    double k2 = 0.03;
    double dynamic_range = 1.0;
};

/// RMSE, PSNR (peak 1) and Gaussian-windowed 3D SSIM between two normalized volumes.
MetricReport metrics(const Volume3D& a, const Volume3D& b, const SsimSettings& ssim = {});

/// Normalized 1D Gaussian taps, radius ceil(3 sigma) unless given.
std::vector<double> gaussian_kernel(double sigma, int radius = -1);

/// Separable blur along x, y and z with clamp-to-edge. Masks blur to Normalized.
Volume3D gaussian_blur_3d(const Volume3D& vol, double sigma_voxels);

/// R = exp(log I - log blur(I)). Inputs must be >= 1e-6.
Volume3D retinex_reflectance(const Volume3D& vol, double sigma_voxels);

/// mean over voxels of |g - R(g)| / max(|y|, 1e-6).
double retinex_loss(const Volume3D& g_out, const Volume3D& y, double sigma_voxels);

/// Map a normalized volume into [1e-6, 1] for the Retinex operators.
Volume3D shift_for_retinex(const Volume3D& normalized);

struct GanLosses {
    double disc = 0.0;
    double mse = 0.0;
    double retinex = 0.0;
    double adv = 0.0;
    double gen = 0.0;
};

/// Discriminator objective, MSE, Retinex, adversarial and total generator losses
/// (gen = alpha * retinex + mse + adv). d values must lie in (0, 1).
GanLosses gan_losses(std::span<const double> d_real, std::span<const double> d_fake,
                     const Volume3D& g_out, const Volume3D& target, const Volume3D& y, double alpha,
                     double sigma_voxels = 3.0);

double mse_loss(const Volume3D& g_out, const Volume3D& target);

}  // namespace marsim
