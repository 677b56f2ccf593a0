#include "marsim/quality.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "marsim/error.hpp"
#include "marsim/parallel.hpp"

namespace marsim {

std::string MetricReport::to_key_value() const {
    char buf[160];
    std::snprintf(buf, sizeof buf, "psnr=%.6f rmse=%.8f ssim=%.8f identical=%d", psnr_db, rmse, ssim, identical ? 1 : 0);
    return buf;
}

std::vector<double> gaussian_kernel(double sigma, int radius) {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("gaussian sigma must be positive");
    if (radius < 0) radius = int(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * std::size_t(radius) + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) sum += k[std::size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (double& v : k) v /= sum;
    return k;
}

namespace {

// In-place separable blur of a double buffer, clamp-to-edge, along x then y then z.
void blur_buffer(std::vector<double>& buf, Dims d, const std::vector<double>& taps) {
    const long r = long(taps.size() / 2);
    const std::size_t strides[3] = {1, d.nx, std::size_t(d.nx) * d.ny};
    const std::uint32_t lens[3] = {d.nx, d.ny, d.nz};
    std::vector<double> out(buf.size());
    for (int axis = 0; axis < 3; ++axis) {
        const std::size_t stride = strides[axis];
        const long len = lens[axis];
        // Lines along `axis` are indexed by the other two coordinates.
        const std::size_t n_lines = buf.size() / std::size_t(len);
        parallel_for(n_lines, [&](std::size_t line) {
            std::size_t base;
            if (axis == 0) base = line * d.nx;
            else if (axis == 1) base = (line / d.nx) * std::size_t(d.nx) * d.ny + line % d.nx;
            else base = line;
            for (long i = 0; i < len; ++i) {
                double acc = 0.0;
                for (long k = -r; k <= r; ++k) {
                    const long j = std::clamp(i + k, 0L, len - 1);
                    acc += taps[std::size_t(k + r)] * buf[base + std::size_t(j) * stride];
                }
                out[base + std::size_t(i) * stride] = acc;
            }
        });
        buf.swap(out);
    }
}

std::vector<double> to_double(const Volume3D& v) { return {v.data().begin(), v.data().end()}; }

}  // namespace

Volume3D gaussian_blur_3d(const Volume3D& vol, double sigma_voxels) {
    const auto taps = gaussian_kernel(sigma_voxels);
    std::vector<double> buf = to_double(vol);
    blur_buffer(buf, vol.dims(), taps);
    std::vector<float> out(buf.begin(), buf.end());
    VolumeKind kind = vol.kind() == VolumeKind::Mask ? VolumeKind::Normalized : vol.kind();
    if (kind == VolumeKind::Normalized || kind == VolumeKind::HU) {
        // Convex combinations stay in range up to rounding.
        const float lo = kind == VolumeKind::HU ? kHuMin : 0.0f, hi = kind == VolumeKind::HU ? kHuMax : 1.0f;
        for (float& v : out) v = std::clamp(v, lo, hi);
    } else if (kind == VolumeKind::Attenuation) {
        for (float& v : out) v = std::max(v, 0.0f);
    }
    return vol.with_values(std::move(out), kind);
}

// --- metrics --------------------------------------------------------------------------

MetricReport metrics(const Volume3D& a, const Volume3D& b, const SsimSettings& s) {
    require_same_grid(a, b, "metrics");
    if (a.kind() != VolumeKind::Normalized || b.kind() != VolumeKind::Normalized)
        throw ArgumentError("metrics expects two Normalized volumes");
    const Dims d = a.dims();
    const std::size_t n = a.size();

    const auto taps = gaussian_kernel(s.sigma, s.radius);
    std::vector<double> ma = to_double(a), mb = to_double(b), saa(n), sbb(n), sab(n);
    for (std::size_t i = 0; i < n; ++i) {
        saa[i] = ma[i] * ma[i];
        sbb[i] = mb[i] * mb[i];
        sab[i] = ma[i] * mb[i];
    }
    for (auto* buf : {&ma, &mb, &saa, &sbb, &sab}) blur_buffer(*buf, d, taps);
    const double c1 = (s.k1 * s.dynamic_range) * (s.k1 * s.dynamic_range);
    const double c2 = (s.k2 * s.dynamic_range) * (s.k2 * s.dynamic_range);

    MetricReport r;
    r.per_slice.resize(d.nz);
    const std::size_t plane = std::size_t(d.nx) * d.ny;
    double sq_total = 0.0, ssim_total = 0.0;
    for (std::uint32_t z = 0; z < d.nz; ++z) {
        double sq = 0.0, ss = 0.0;
        for (std::size_t i = z * plane; i < (z + 1) * plane; ++i) {
            const double diff = double(a[i]) - double(b[i]);
            sq += diff * diff;
            const double mu_ab = ma[i] * mb[i];
            const double var_a = saa[i] - ma[i] * ma[i];
            const double var_b = sbb[i] - mb[i] * mb[i];
            const double cov = sab[i] - mu_ab;
            const double num = (2.0 * mu_ab + c1) * (2.0 * cov + c2);
            const double den = (ma[i] * ma[i] + mb[i] * mb[i] + c1) * (var_a + var_b + c2);
            ss += num / den;
        }
        sq_total += sq;
        ssim_total += ss;
        SliceMetrics& m = r.per_slice[z];
        m.rmse = std::sqrt(sq / double(plane));
        m.identical = m.rmse == 0.0;
        m.psnr_db = m.identical ? kPsnrCapDb : std::min(kPsnrCapDb, 20.0 * std::log10(1.0 / m.rmse));
        m.ssim = ss / double(plane);
    }
    r.rmse = std::sqrt(sq_total / double(n));
    r.identical = r.rmse == 0.0;
    r.psnr_db = r.identical ? kPsnrCapDb : std::min(kPsnrCapDb, 20.0 * std::log10(1.0 / r.rmse));
    r.ssim = std::clamp(ssim_total / double(n), -1.0, 1.0);
    return r;
}

// --- Retinex and losses ---------------------------------------------------------------

Volume3D retinex_reflectance(const Volume3D& vol, double sigma_voxels) {
    for (float v : vol.data())
        if (!(v >= float(kRetinexEpsilon)))
            throw DomainError("retinex input must be >= 1e-6 everywhere (shift the volume first)");
    const auto taps = gaussian_kernel(sigma_voxels);
    std::vector<double> blur = to_double(vol);
    blur_buffer(blur, vol.dims(), taps);
    std::vector<float> out(vol.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = float(std::exp(std::log(double(vol[i])) - std::log(blur[i])));
    return vol.with_values(std::move(out), VolumeKind::Attenuation);
}

double retinex_loss(const Volume3D& g_out, const Volume3D& y, double sigma_voxels) {
    require_same_grid(g_out, y, "retinex_loss");
    const Volume3D r = retinex_reflectance(g_out, sigma_voxels);
    double sum = 0.0;
    for (std::size_t i = 0; i < g_out.size(); ++i)
        sum += std::abs(double(g_out[i]) - double(r[i])) / std::max(std::abs(double(y[i])), kRetinexEpsilon);
    return sum / double(g_out.size());
}

Volume3D shift_for_retinex(const Volume3D& normalized) {
    if (normalized.kind() != VolumeKind::Normalized) throw ArgumentError("shift_for_retinex expects a Normalized volume");
    std::vector<float> out(normalized.size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = float(double(normalized[i]) * (1.0 - kRetinexEpsilon) + kRetinexEpsilon);
    return normalized.with_values(std::move(out));
}

double mse_loss(const Volume3D& g_out, const Volume3D& target) {
    require_same_grid(g_out, target, "mse_loss");
    double sum = 0.0;
    for (std::size_t i = 0; i < g_out.size(); ++i) {
        const double d = double(target[i]) - double(g_out[i]);
        sum += d * d;
    }
    return sum / double(g_out.size());
}

GanLosses gan_losses(std::span<const double> d_real, std::span<const double> d_fake, const Volume3D& g_out,
                     const Volume3D& target, const Volume3D& y, double alpha, double sigma_voxels) {
    if (d_real.empty() || d_fake.empty()) throw ArgumentError("discriminator batches must be nonempty");
    if (!(alpha >= 0.0)) throw ArgumentError("alpha must be >= 0");
    for (auto batch : {d_real, d_fake})
        for (double v : batch)
            if (!(v > 0.0 && v < 1.0)) throw DomainError("discriminator outputs must lie in (0, 1)");
    GanLosses l;
    double real = 0.0, fake = 0.0, adv = 0.0;
    for (double v : d_real) real += std::log(v);
    for (double v : d_fake) {
        fake += std::log(1.0 - v);
        adv += (v - 1.0) * (v - 1.0);
    }
    l.disc = real / double(d_real.size()) + fake / double(d_fake.size());
    l.adv = 0.5 * adv / double(d_fake.size());
    l.mse = mse_loss(g_out, target);
    l.retinex = retinex_loss(g_out, y, sigma_voxels);
    l.gen = alpha * l.retinex + l.mse + l.adv;
    return l;
}

}  // namespace marsim
