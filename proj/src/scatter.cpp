#include "marsim/scatter.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "binary.hpp"
#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/volume_io.hpp"

namespace marsim {

using std::numbers::pi;

// --- interaction physics --------------------------------------------------------------

double compton_energy(double energy_kev, double beta_rad) {
    if (!(energy_kev > 0.0)) throw ArgumentError("photon energy must be positive");
    return energy_kev / (1.0 + (energy_kev / kElectronRestEnergyKev) * (1.0 - std::cos(beta_rad)));
}

double klein_nishina_density(double energy_kev, double cos_theta) {
    const double alpha = energy_kev / kElectronRestEnergyKev;
    const double k = 1.0 / (1.0 + alpha * (1.0 - cos_theta));
    return k * k * (k + 1.0 / k - (1.0 - cos_theta * cos_theta));
}

double klein_nishina_total(double energy_kev) {
    if (!(energy_kev > 0.0)) throw ArgumentError("photon energy must be positive");
    const double a = energy_kev / kElectronRestEnergyKev;
    if (a < 1e-4) return (8.0 / 3.0) * (1.0 - 2.0 * a);
    const double l = std::log1p(2.0 * a);
    return 2.0 * ((1.0 + a) / (a * a) * (2.0 * (1.0 + a) / (1.0 + 2.0 * a) - l / a) + l / (2.0 * a) -
                  (1.0 + 3.0 * a) / ((1.0 + 2.0 * a) * (1.0 + 2.0 * a)));
}

double sample_klein_nishina_cos(double energy_kev, CounterRng& rng) {
    if (!(energy_kev > 0.0)) throw ArgumentError("photon energy must be positive");
    const double alpha = energy_kev / kElectronRestEnergyKev;
    const double beta = 1.0 + 2.0 * alpha;
    const double t = beta / (beta + 8.0);
    for (;;) {
        const double r1 = rng.uniform(), r2 = rng.uniform(), r3 = rng.uniform();
        double x;
        if (r1 < t) {
            x = 1.0 + 2.0 * alpha * r2;
            if (r3 > 4.0 * (1.0 / x - 1.0 / (x * x))) continue;
        } else {
            x = beta / (1.0 + 2.0 * alpha * r2);
            const double mu = 1.0 + (1.0 - x) / alpha;
            if (r3 > 0.5 * (mu * mu + 1.0 / x)) continue;
        }
        return std::clamp(1.0 + (1.0 - x) / alpha, -1.0, 1.0);
    }
}

double photoelectric_probability(double energy_kev) {
    const double r = energy_kev / 28.0;
    return 1.0 / (1.0 + r * r * r);
}

// --- bank -----------------------------------------------------------------------------

void ScatterBank::validate() const {
    geometry.validate();
    if (!(primary.geometry() == geometry) || !(scatter.geometry() == geometry))
        throw ArgumentError("scatter bank sinograms do not match the bank geometry");
    if (primary.size() != std::size_t(geometry.n_views) * geometry.n_detectors || scatter.size() != primary.size())
        throw ArgumentError("scatter bank sinogram sizes are inconsistent");
    bool any_primary = false;
    for (double v : primary.values()) any_primary = any_primary || v > 0.0;
    if (!any_primary) throw ArgumentError("scatter bank primary signal is zero everywhere");
    for (double v : scatter.values())
        if (v < 0.0) throw ArgumentError("scatter bank contains negative scatter");
}

FanBeamGeometry bank_geometry_for(const MaterialPhantom& phantom, std::uint32_t n_views) {
    return FanBeamGeometry::for_slice(phantom.dims.nx, phantom.dims.ny, phantom.spacing.sx, phantom.spacing.sy,
                                      n_views);
}

namespace {

struct Photon {
    double x, y, z;
    double u, v, w;
    double energy;
};

void rotate_direction(Photon& p, double mu, double phi) {
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - mu * mu));
    const double cp = std::cos(phi), sp = std::sin(phi);
    if (std::abs(p.w) > 0.99999) {
        p.u = sin_t * cp;
        p.v = sin_t * sp;
        p.w = std::copysign(mu, p.w);
        return;
    }
    const double a = std::sqrt(1.0 - p.w * p.w);
    const double u = mu * p.u + sin_t * (p.u * p.w * cp - p.v * sp) / a;
    const double v = mu * p.v + sin_t * (p.v * p.w * cp + p.u * sp) / a;
    const double w = mu * p.w - a * sin_t * cp;
    const double n = std::sqrt(u * u + v * v + w * w);
    p.u = u / n;
    p.v = v / n;
    p.w = w / n;
}

// Distance along the direction to leave [-hx,hx]x[-hy,hy]x[-hz,hz]; entry distance via t_in.
bool box_interval(const Photon& p, double hx, double hy, double hz, double& t_in, double& t_out) {
    t_in = 0.0;
    t_out = 1e300;
    const double o[3] = {p.x, p.y, p.z}, d[3] = {p.u, p.v, p.w}, h[3] = {hx, hy, hz};
    for (int a = 0; a < 3; ++a) {
        if (std::abs(d[a]) < 1e-15) {
            if (std::abs(o[a]) > h[a]) return false;
            continue;
        }
        double t0 = (-h[a] - o[a]) / d[a], t1 = (h[a] - o[a]) / d[a];
        if (t0 > t1) std::swap(t0, t1);
        t_in = std::max(t_in, t0);
        t_out = std::min(t_out, t1);
    }
    return t_out > t_in;
}

struct Tracer {
    const MaterialPhantom& phantom;
    const FanBeamGeometry& geom;
    const EnergySpectrum& spectrum;
    const WaterTable& water;
    TraceOptions options;
    std::vector<double> density;  // per label
    double max_density = 0.0;
    double hx, hy, hz;
    double row_half_height;
    double step_mm;

    Tracer(const MaterialPhantom& ph, const FanBeamGeometry& g, const EnergySpectrum& s, const WaterTable& w,
           const TraceOptions& o)
        : phantom(ph), geom(g), spectrum(s), water(w), options(o), density(256, 0.0) {
        for (const auto& [id, m] : ph.table) density[id] = m.density_g_cm3;
        for (auto l : ph.labels) max_density = std::max(max_density, density[l]);
        hx = 0.5 * ph.dims.nx * ph.spacing.sx;
        hy = 0.5 * ph.dims.ny * ph.spacing.sy;
        hz = 0.5 * ph.dims.nz * ph.spacing.sz;
        row_half_height = ph.spacing.sz * g.source_to_detector_mm / g.source_to_iso_mm;
        step_mm = 0.5 * std::min({ph.spacing.sx, ph.spacing.sy, ph.spacing.sz});
    }

    double mu_water(double e) const { return water.mu_per_mm(std::clamp(e, water.min_energy(), water.max_energy())); }

    double density_at(double x, double y, double z) const {
        const auto i = std::min<std::uint32_t>(std::uint32_t(std::max(0.0, (x + hx) / phantom.spacing.sx)), phantom.dims.nx - 1);
        const auto j = std::min<std::uint32_t>(std::uint32_t(std::max(0.0, (y + hy) / phantom.spacing.sy)), phantom.dims.ny - 1);
        const auto k = std::min<std::uint32_t>(std::uint32_t(std::max(0.0, (z + hz) / phantom.spacing.sz)), phantom.dims.nz - 1);
        return density[phantom.label_at(i, j, k)];
    }

    // exp(-line integral) from p along (u, v, w) to the phantom boundary, midpoint rule.
    double transmission(double x, double y, double z, double u, double v, double w, double energy) const {
        Photon q{x, y, z, u, v, w, energy};
        double t0, t1;
        if (!box_interval(q, hx, hy, hz, t0, t1)) return 1.0;
        const double len = t1 - std::max(t0, 0.0);
        const int n = std::max(1, int(std::ceil(len / step_mm)));
        const double ds = len / n;
        double acc = 0.0;
        for (int i = 0; i < n; ++i) {
            const double t = std::max(t0, 0.0) + (i + 0.5) * ds;
            acc += density_at(x + t * u, y + t * v, z + t * w);
        }
        return std::exp(-acc * ds * mu_water(energy));
    }

    // Expected energy deposited in detector bin j by a Compton event at p that escapes
    // without further interaction.
    double forced_score(const Photon& p, std::uint32_t j, double sx, double sy, double cx, double cy) const {
        const double gamma = geom.detector_angle(double(j));
        const double dx = cx * std::cos(gamma) - cy * std::sin(gamma), dy = cx * std::sin(gamma) + cy * std::cos(gamma);
        const double qx = sx + geom.source_to_detector_mm * dx - p.x, qy = sy + geom.source_to_detector_mm * dy - p.y, qz = -p.z;
        const double r = std::sqrt(qx * qx + qy * qy + qz * qz);
        const double ox = qx / r, oy = qy / r, oz = qz / r;
        // detector normal points away from the source
        const double cos_inc = ox * dx + oy * dy;
        if (cos_inc <= 0.0) return 0.0;
        const double mu = std::clamp(p.u * ox + p.v * oy + p.w * oz, -1.0, 1.0);
        const double e_out = p.energy / (1.0 + (p.energy / kElectronRestEnergyKev) * (1.0 - mu));
        const double p_omega = klein_nishina_density(p.energy, mu) / (2.0 * pi * klein_nishina_total(p.energy));
        const double area = geom.source_to_detector_mm * geom.detector_angular_pitch_rad * 2.0 * row_half_height;
        const double survive = options.photoelectric ? 1.0 - photoelectric_probability(p.energy) : 1.0;
        return survive * p_omega * area * cos_inc / (r * r) * transmission(p.x, p.y, p.z, ox, oy, oz, e_out) * e_out;
    }

    // Detector bin hit by the photon leaving the phantom, or -1.
    long detector_bin(const Photon& p, double sx, double sy, double cx, double cy) const {
        const double dx = p.x - sx, dy = p.y - sy;
        const double a = p.u * p.u + p.v * p.v;
        if (a < 1e-15) return -1;
        const double b = dx * p.u + dy * p.v;
        const double c = dx * dx + dy * dy - geom.source_to_detector_mm * geom.source_to_detector_mm;
        const double disc = b * b - a * c;
        if (disc < 0.0) return -1;
        const double t = (-b + std::sqrt(disc)) / a;
        if (t <= 0.0) return -1;
        if (std::abs(p.z + t * p.w) > row_half_height) return -1;
        const double hx_ = dx + t * p.u, hy_ = dy + t * p.v;
        const double gamma = std::atan2(cx * hy_ - cy * hx_, cx * hx_ + cy * hy_);
        const double j = std::round(geom.detector_index(gamma));
        if (j < 0.0 || j >= double(geom.n_detectors)) return -1;
        return long(j);
    }

    void trace_view(std::uint32_t view, std::uint64_t n, std::uint64_t seed, std::span<double> f_row,
                    std::span<double> s_row) const {
        const double beta = geom.view_angle(view);
        const double sx = geom.source_to_iso_mm * std::cos(beta), sy = geom.source_to_iso_mm * std::sin(beta);
        const double cx = -std::cos(beta), cy = -std::sin(beta);
        const double half = geom.fan_half_angle();
        std::vector<double> cdf;
        double acc = 0.0;
        for (const auto& s : spectrum.samples()) cdf.push_back(acc += s.weight);
        const bool forced = options.estimator == ScatterEstimator::ForcedDetection;

        for (std::uint64_t h = 0; h < n; ++h) {
            CounterRng rng(seed, (std::uint64_t(view) << 32) | h);
            const double ue = rng.uniform() * acc;
            const std::size_t ei = std::min<std::size_t>(std::size_t(std::lower_bound(cdf.begin(), cdf.end(), ue) - cdf.begin()), cdf.size() - 1);
            const double gamma = (2.0 * rng.uniform() - 1.0) * half;
            Photon p{sx, sy, 0.0, cx * std::cos(gamma) - cy * std::sin(gamma), cx * std::sin(gamma) + cy * std::cos(gamma), 0.0,
                     spectrum.samples()[ei].energy_kev};
            int scatters = 0;
            bool alive = true;
            double t_in, t_out;
            if (box_interval(p, hx, hy, hz, t_in, t_out)) {
                p.x += t_in * p.u;
                p.y += t_in * p.v;
                p.z += t_in * p.w;
                double to_exit = t_out - t_in;
                double mu_max = max_density * mu_water(p.energy);
                while (alive && mu_max > 0.0) {
                    const double step = -std::log(rng.uniform()) / mu_max;
                    if (step >= to_exit) break;
                    p.x += step * p.u;
                    p.y += step * p.v;
                    p.z += step * p.w;
                    to_exit -= step;
                    if (rng.uniform() * max_density >= density_at(p.x, p.y, p.z)) continue;  // virtual collision
                    if (forced && scatters < options.max_scatters) {
                        const auto j = std::min<std::uint32_t>(std::uint32_t(rng.uniform() * geom.n_detectors), geom.n_detectors - 1);
                        s_row[j] += double(geom.n_detectors) * forced_score(p, j, sx, sy, cx, cy);
                    }
                    if (scatters >= options.max_scatters ||
                        (options.photoelectric && rng.uniform() < photoelectric_probability(p.energy))) {
                        alive = false;
                        break;
                    }
                    const double mu = sample_klein_nishina_cos(p.energy, rng);
                    rotate_direction(p, mu, 2.0 * pi * rng.uniform());
                    p.energy = compton_energy(p.energy, std::acos(mu));
                    ++scatters;
                    mu_max = max_density * mu_water(p.energy);
                    double a, b;
                    if (!box_interval(p, hx, hy, hz, a, b)) break;
                    to_exit = b;
                }
            }
            if (!alive || (forced && scatters > 0)) continue;
            const long bin = detector_bin(p, sx, sy, cx, cy);
            if (bin < 0) continue;
            (scatters == 0 ? f_row : s_row)[std::size_t(bin)] += p.energy;
        }
    }
};

}  // namespace

ScatterBank trace_photons(const MaterialPhantom& phantom, const FanBeamGeometry& geometry,
                          const EnergySpectrum& spectrum, const WaterTable& water, std::uint64_t n_histories,
                          std::uint64_t seed, const TraceOptions& options) {
    phantom.validate();
    geometry.validate();
    if (n_histories < 1) throw ArgumentError("n_histories must be >= 1");
    if (options.max_scatters < 1 || options.max_scatters > 3) throw ArgumentError("max_scatters must be 1..3");
    if (geometry.source_to_iso_mm <= 0.5 * std::hypot(phantom.dims.nx * double(phantom.spacing.sx),
                                                     phantom.dims.ny * double(phantom.spacing.sy)))
        throw GeometryError("source lies inside the phantom");

    const Tracer tracer(phantom, geometry, spectrum, water, options);
    ScatterBank bank{geometry, Sinogram(geometry, 0), Sinogram(geometry, 0), n_histories, seed, options.phantom_id};
    const std::uint64_t base = n_histories / geometry.n_views, extra = n_histories % geometry.n_views;
    const double e_mean = spectrum.mean_energy();
    parallel_for(geometry.n_views, [&](std::size_t v) {
        const std::uint64_t n = base + (v < extra ? 1 : 0);
        if (n == 0) return;
        auto f = bank.primary.row(std::uint32_t(v));
        auto s = bank.scatter.row(std::uint32_t(v));
        tracer.trace_view(std::uint32_t(v), n, seed, f, s);
        // An unattenuated ray tallies 1: expected vacuum count per bin is n / n_detectors.
        const double scale = double(geometry.n_detectors) / (double(n) * e_mean);
        // Stored at file precision so a written bank reads back identical.
        for (auto& x : f) x = double(float(x * scale));
        for (auto& x : s) x = double(float(x * scale));
    });
    return bank;
}

// --- normalization --------------------------------------------------------------------

ScatterEstimator parse_scatter_estimator(const std::string& name) {
    if (name == "analog") return ScatterEstimator::Analog;
    if (name == "forced") return ScatterEstimator::ForcedDetection;
    throw ConfigError("unknown scatter estimator '" + name + "' (expected analog or forced)");
}

void validate_alpha(double alpha_r) {
    if (!(alpha_r >= kAlphaMin && alpha_r <= kAlphaMax))
        throw ArgumentError("alpha_r " + std::to_string(alpha_r) + " outside [0.001, 0.02]");
}

Sinogram normalize_scatter(const Sinogram& primary, const Sinogram& scatter, double alpha_r) {
    validate_alpha(alpha_r);
    require_same_shape(primary, scatter, "normalize_scatter");
    const double ms = scatter.mean();
    if (!(ms > 0.0)) throw DegenerateBankError("mean scatter is zero; cannot normalize");
    const double k = primary.mean() / ms * alpha_r;
    Sinogram out = scatter;
    for (double& v : out.values()) v *= k;
    return out;
}

Sinogram normalize_scatter(const ScatterBank& bank, double alpha_r) {
    return normalize_scatter(bank.primary, bank.scatter, alpha_r);
}

// --- trace resampling -----------------------------------------------------------------

namespace {

// Bank detector values across the footprint band of one bank view, resampled to n bins.
void band_row(const ScatterBank& bank, const RoiFootprint& fp, std::uint32_t view, std::uint32_t n,
              std::vector<double>& out) {
    const FanBeamGeometry& g = bank.geometry;
    const double beta = g.view_angle(view);
    const double sx = g.source_to_iso_mm * std::cos(beta), sy = g.source_to_iso_mm * std::sin(beta);
    const double cx = -std::cos(beta), cy = -std::sin(beta);
    const double vx = fp.center_x_mm - sx, vy = fp.center_y_mm - sy;
    const double dist = std::hypot(vx, vy);
    if (!(fp.radius_mm < dist)) throw GeometryError("ROI footprint contains the source");
    const double delta = std::asin(fp.radius_mm / dist);
    const double gc = std::atan2(cx * vy - cy * vx, cx * vx + cy * vy);
    const double half = g.fan_half_angle();
    if (gc - delta < -half - 1e-9 || gc + delta > half + 1e-9)
        throw GeometryError("ROI footprint falls outside the detector arc");
    const auto row = bank.scatter.row(view);
    out.resize(n);
    for (std::uint32_t j = 0; j < n; ++j) {
        const double gamma = gc - delta + (j + 0.5) / n * 2.0 * delta;
        const double u = std::clamp(g.detector_index(gamma), 0.0, double(g.n_detectors - 1));
        const auto j0 = std::min<std::uint32_t>(std::uint32_t(u), g.n_detectors - 2);
        const double w = u - j0;
        out[j] = (1.0 - w) * row[j0] + w * row[j0 + 1];
    }
}

}  // namespace

Sinogram sample_trace(const ScatterBank& bank, const RoiFootprint& fp, const FanBeamGeometry& target,
                      CounterRng& rng) {
    bank.geometry.validate();
    target.validate();
    if (!(fp.radius_mm > 0.0)) throw GeometryError("ROI footprint radius must be positive");
    const std::uint32_t nb = bank.geometry.n_views;
    const std::uint32_t choices = fp.view_offsets == 0 ? nb : fp.view_offsets;
    const std::uint32_t pick = std::min<std::uint32_t>(std::uint32_t(rng.uniform() * choices), choices - 1);
    const double offset = std::floor(double(pick) * nb / choices);

    // Every bank view contributes at most once; compute bands lazily.
    std::vector<std::vector<double>> bands(nb);
    auto band = [&](std::uint32_t v) -> const std::vector<double>& {
        if (bands[v].empty()) band_row(bank, fp, v, target.n_detectors, bands[v]);
        return bands[v];
    };

    Sinogram out(target, 0);
    for (std::uint32_t t = 0; t < target.n_views; ++t) {
        const double u = std::fmod(double(t) * nb / target.n_views + offset, double(nb));
        const auto v0 = std::min<std::uint32_t>(std::uint32_t(u), nb - 1);
        const std::uint32_t v1 = (v0 + 1) % nb;
        const double w = u - v0;
        const auto& a = band(v0);
        auto row = out.row(t);
        if (w == 0.0) {
            std::copy(a.begin(), a.end(), row.begin());
            continue;
        }
        const auto& b = band(v1);
        for (std::uint32_t j = 0; j < target.n_detectors; ++j) row[j] = (1.0 - w) * a[j] + w * b[j];
    }
    return out;
}

// --- file format ----------------------------------------------------------------------

namespace {
constexpr char kBankMagic[7] = "MARB1";
}

void write_scatter_bank(const ScatterBank& bank, const std::filesystem::path& path) {
    bank.validate();
    detail::ByteWriter w;
    w.bytes(kBankMagic, 6);
    w.u32(bank.geometry.n_views);
    w.u32(bank.geometry.n_detectors);
    w.f32(float(bank.geometry.source_to_iso_mm));
    w.f32(float(bank.geometry.detector_angular_pitch_rad));
    w.f32(float(bank.geometry.source_to_detector_mm));
    w.u64(bank.n_histories);
    w.u64(bank.seed);
    w.u32(bank.phantom_id);
    for (double v : bank.primary.values()) w.f32(float(v));
    for (double v : bank.scatter.values()) w.f32(float(v));
    write_file_bytes(path, w.take());
}

ScatterBank read_scatter_bank(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    detail::ByteReader r(bytes);
    r.expect_magic(kBankMagic);
    FanBeamGeometry g;
    g.n_views = r.u32();
    g.n_detectors = r.u32();
    g.source_to_iso_mm = r.f32();
    g.detector_angular_pitch_rad = r.f32();
    g.source_to_detector_mm = r.f32();
    ScatterBank bank;
    bank.n_histories = r.u64();
    bank.seed = r.u64();
    bank.phantom_id = r.u32();
    if (g.n_views == 0 || g.n_detectors == 0) throw ParseError(ParseErrorCode::ZeroDimension, "empty scatter bank");
    std::uint64_t n = 0;
    if (!detail::checked_count({g.n_views, g.n_detectors}, std::uint64_t(1) << 30, n))
        throw ParseError(ParseErrorCode::DimOverflow, "scatter bank too large");
    if (r.remaining() < 8 * n) throw ParseError(ParseErrorCode::Truncated, "scatter bank payload");
    if (r.remaining() > 8 * n) throw ParseError(ParseErrorCode::TrailingBytes, "data after scatter bank payload");
    std::vector<double> f(n), s(n);
    for (auto& v : f) v = r.f32();
    for (auto& v : s) v = r.f32();
    try {
        g.validate();
        bank.geometry = g;
        bank.primary = Sinogram(g, 0, std::move(f));
        bank.scatter = Sinogram(g, 0, std::move(s));
        bank.validate();
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(ParseErrorCode::InvalidData, e.what());
    }
    return bank;
}

}  // namespace marsim
