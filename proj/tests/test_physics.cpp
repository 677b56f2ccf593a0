#include <cmath>

#include "doctest.h"
#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/phantom.hpp"
#include "marsim/physics.hpp"
#include "marsim/quality.hpp"
#include "test_util.hpp"

using namespace marsim;

namespace {

const WaterTable& water() { return WaterTable::standard(); }

Volume3D water_cylinder(std::uint32_t n, std::uint32_t nz, float s, double radius_mm) {
    std::vector<float> v(std::size_t(n) * n * nz, kHuAir);
    for (std::uint32_t k = 0; k < nz; ++k)
        for (std::uint32_t j = 0; j < n; ++j)
            for (std::uint32_t i = 0; i < n; ++i) {
                const double x = (i + 0.5) * s - 0.5 * n * s, y = (j + 0.5) * s - 0.5 * n * s;
                if (x * x + y * y <= radius_mm * radius_mm) v[(std::size_t(k) * n + j) * n + i] = 0.0f;
            }
    return Volume3D({n, n, nz}, {s, s, s}, VolumeKind::HU, v);
}

SimulationConfig clean_config(std::vector<SpectrumSample> spectrum) {
    SimulationConfig cfg;
    cfg.spectrum = EnergySpectrum(std::move(spectrum));
    cfg.noise_sigma2 = 0.0;
    cfg.scatter_enabled = false;
    return cfg;
}

// Mean HU inside radius r0 and in the ring [r1, r2] of the middle slice.
std::pair<double, double> center_and_rim(const Volume3D& v, double r0, double r1, double r2) {
    const auto n = v.dims().nx;
    const float s = v.spacing().sx;
    const Slice2D sl = v.slice_z(v.dims().nz / 2);
    double c = 0, r = 0;
    int nc = 0, nr = 0;
    for (std::uint32_t j = 0; j < n; ++j)
        for (std::uint32_t i = 0; i < n; ++i) {
            const double x = (i + 0.5) * s - 0.5 * n * s, y = (j + 0.5) * s - 0.5 * n * s;
            const double d = std::hypot(x, y);
            if (d < r0) c += sl.at(i, j), ++nc;
            if (d >= r1 && d <= r2) r += sl.at(i, j), ++nr;
        }
    return {c / nc, r / nr};
}

const ScatterBank& head_bank() {
    static const ScatterBank bank = [] {
        const MaterialPhantom ph = make_head_phantom({64, 64, 64}, {3, 3, 3});
        return trace_photons(ph, bank_geometry_for(ph, 60), EnergySpectrum::default_tungsten_140kvp(), water(),
                             200000, 3);
    }();
    return bank;
}

RoiFootprint insert_roi() {
    const Vec3 c = head_insert_center({64, 64, 64}, {3, 3, 3});
    RoiFootprint roi;
    roi.center_x_mm = c.x;
    roi.center_y_mm = c.y;
    return roi;
}

}  // namespace

TEST_CASE("attenuation stack") {
    const Volume3D v = make_cochlea_volume(CochleaSpiral{}, {60, 50, 50}, {0.2f, 0.2f, 0.2f});
    const auto stack = attenuation_stack(v, EnergySpectrum::default_tungsten_140kvp(), water());
    REQUIRE(stack.size() == 5);
    const auto one = attenuation_stack(v, EnergySpectrum({{70.0, 1.0}}), water());
    CHECK(one.size() == 1);
    CHECK(one[0] == hu_to_attenuation(v, 70.0, water()));
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < 1000.0f) continue;
        for (std::size_t e = 1; e < 5; ++e) REQUIRE(stack[e][i] < stack[e - 1][i]);
    }
}

TEST_CASE("single energy without scatter or noise is Beer-Lambert") {
    const auto g = FanBeamGeometry::for_slice(32, 32, 1, 1, 60);
    Sinogram p(g, 0);
    CounterRng rng(2, 2);
    for (double& x : p.values()) x = 8.0 * rng.uniform();
    const std::vector<Sinogram> stack{p};
    const Sinogram eff = polychromatic_sinogram(stack, EnergySpectrum({{60, 1}}), nullptr, 0.0, {});
    for (std::size_t i = 0; i < p.size(); ++i)
        CHECK(eff.values()[i] == doctest::Approx(p.values()[i]).epsilon(1e-6));
}

TEST_CASE("two energies: effective attenuation lies between the monoenergetic ones") {
    const auto g = FanBeamGeometry::for_slice(32, 32, 1, 1, 20);
    const Volume3D slab = water_cylinder(32, 1, 1.0f, 12.0);
    const Slice2D rel = [&] {
        Slice2D s = slab.slice_z(0);
        for (float& x : s.values) x = float(std::max(0.0, 1.0 + x / 1000.0));
        return s;
    }();
    const Sinogram base = fanbeam_project(rel, g);
    Sinogram lo = base, hi = base;
    for (double& x : lo.values()) x *= water().mu_per_mm(40.0);
    for (double& x : hi.values()) x *= water().mu_per_mm(100.0);
    const std::vector<Sinogram> stack{lo, hi};
    const Sinogram eff = polychromatic_sinogram(stack, EnergySpectrum({{40, 1}, {100, 1}}), nullptr, 0.0, {});
    int strict = 0;
    for (std::size_t i = 0; i < eff.size(); ++i) {
        CHECK(eff.values()[i] <= lo.values()[i] + 1e-12);
        CHECK(eff.values()[i] >= hi.values()[i] - 1e-12);
        strict += eff.values()[i] < lo.values()[i] - 1e-9 && eff.values()[i] > hi.values()[i] + 1e-9;
    }
    CHECK(strict > 0);
}

TEST_CASE("detector model checks shapes") {
    const auto g = FanBeamGeometry::for_slice(32, 32, 1, 1, 20);
    const auto g2 = FanBeamGeometry::for_slice(32, 32, 1, 1, 24);
    const std::vector<Sinogram> two{Sinogram(g, 0)};
    const Sinogram wrong(g2, 0);
    CHECK_THROWS_AS(detector_signal(two, EnergySpectrum::default_tungsten_140kvp(), nullptr), ArgumentError);
    CHECK_THROWS_AS(detector_signal(two, EnergySpectrum({{60, 1}}), &wrong), ArgumentError);
    const Sinogram l = detector_signal(two, EnergySpectrum({{60, 1}}), nullptr);
    for (double x : l.values()) CHECK(x == 1.0);
}

TEST_CASE("noise: seeded, variance, photon floor") {
    const auto g = FanBeamGeometry::for_slice(64, 64, 1, 1, 360);
    const Sinogram ones(g, 0, 1.0);
    const Sinogram a = add_detector_noise(ones, 0.04, {5, 0});
    CHECK(a == add_detector_noise(ones, 0.04, {5, 0}));
    CHECK(a != add_detector_noise(ones, 0.04, {6, 0}));
    CHECK(a != add_detector_noise(ones, 0.04, {5, 1}));
    double s2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s2 += (a.values()[i] - 1.0) * (a.values()[i] - 1.0);
    CHECK(s2 / double(a.size()) == doctest::Approx(0.04).epsilon(0.05));

    Sinogram tiny(g, 0, -3.0);
    tiny.values()[0] = 0.5;
    const Sinogram lg = log_transform(tiny);
    CHECK(lg.values()[0] == doctest::Approx(-std::log(0.5)));
    CHECK(lg.values()[1] == doctest::Approx(-std::log(kPhotonFloor)));

    // relative noise with photons_per_bin: variance sigma2 / I0^2 on the unit-flux signal
    const std::vector<Sinogram> zero{Sinogram(g, 0)};
    const Sinogram eff = polychromatic_sinogram(zero, EnergySpectrum({{60, 1}}), nullptr, 0.04, {1, 0}, 50.0);
    double v2 = 0.0;
    for (double x : eff.values()) {
        const double n = std::exp(-x) - 1.0;
        v2 += n * n;
    }
    CHECK(v2 / double(eff.size()) == doctest::Approx(0.04 / 2500.0).epsilon(0.05));
}

TEST_CASE("alpha resolution") {
    SimulationConfig cfg;
    cfg.alpha_r = 0.01;
    CHECK(resolve_alpha(cfg) == 0.01);
    cfg.alpha_r.reset();
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        cfg.rng_seed = seed;
        const double a = resolve_alpha(cfg);
        CHECK(a >= kAlphaMin);
        CHECK(a <= kAlphaMax);
        CHECK(a == resolve_alpha(cfg));
    }
    cfg.alpha_r = 0.0005;
    CHECK_THROWS(cfg.validate());
    cfg.alpha_r = 0.05;
    CHECK_THROWS(cfg.validate());
    cfg.alpha_r.reset();
    cfg.photons_per_bin = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("metal-free monoenergetic simulation round trips") {
    const Volume3D v = make_cochlea_volume(CochleaSpiral{}, {60, 50, 50}, {0.2f, 0.2f, 0.2f});
    const Volume3D out = simulate_artifacts(v, clean_config({{77.2, 1.0}}), water());
    CHECK(out.dims() == v.dims());
    CHECK(out.kind() == VolumeKind::HU);
    CHECK(metrics(normalize_for_metrics(out), normalize_for_metrics(v)).psnr_db > 30.0);
}

TEST_CASE("beam hardening cups a water cylinder") {
    const Volume3D cyl = water_cylinder(64, 1, 1.0f, 24.0);
    const Volume3D poly = simulate_artifacts(cyl, clean_config({{40, 0.12}, {60, 0.30}, {80, 0.28}, {100, 0.20}, {120, 0.10}}), water());
    const Volume3D mono = simulate_artifacts(cyl, clean_config({{77.2, 1.0}}), water());
    const auto [pc, pr] = center_and_rim(poly, 6.0, 16.0, 20.0);
    const auto [mc, mr] = center_and_rim(mono, 6.0, 16.0, 20.0);
    CHECK(pc < pr);
    CHECK(pr - pc > 3.0 * std::abs(mc - mr));
}

TEST_CASE("scatter needs a bank; traces change the image; alpha is monotone") {
    const Volume3D v = make_cochlea_volume(CochleaSpiral{}, {60, 50, 50}, {0.2f, 0.2f, 0.2f});
    SimulationConfig cfg = clean_config({{40, 0.12}, {60, 0.30}, {80, 0.28}, {100, 0.20}, {120, 0.10}});
    cfg.scatter_enabled = true;
    CHECK_THROWS_AS(simulate_artifacts(v, cfg, water()), ConfigError);

    cfg.scatter_enabled = false;
    const Volume3D off = simulate_artifacts(v, cfg, water());
    cfg.scatter_enabled = true;
    cfg.roi = insert_roi();
    cfg.rng_seed = 4;
    double prev = 0.0;
    for (double alpha : {0.002, 0.01, 0.02}) {
        cfg.alpha_r = alpha;
        const Volume3D on = simulate_artifacts(v, cfg, water(), &head_bank());
        double mad = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) mad += std::abs(double(on[i]) - off[i]);
        mad /= double(v.size());
        CHECK(mad > prev);
        prev = mad;
    }
}

TEST_CASE("metal raises HU variance around the electrode") {
    const CochleaSpiral s;
    const Dims d{60, 50, 50};
    const Spacing sp{0.2f, 0.2f, 0.2f};
    const Volume3D sdf = signed_distance(sample_centerline(s, d, sp), s.duct_radius_mm, d, sp);
    const Volume3D clean = make_cochlea_volume(s, sdf);
    const Volume3D metal = insert_metal(clean, electrode_mask(sdf, -0.15));
    SimulationConfig cfg;
    cfg.scatter_enabled = false;
    cfg.rng_seed = 9;
    const Volume3D a = simulate_artifacts(metal, cfg, water());
    const Volume3D b = simulate_artifacts(clean, cfg, water());
    // 2 mm shell around the body, restricted to uniform bone so anatomy adds no variance
    auto shell_variance = [&](const Volume3D& v) {
        double s1 = 0, s2 = 0;
        int n = 0;
        for (std::size_t i = 0; i < v.size(); ++i)
            if (sdf[i] > 0.1f && sdf[i] <= 1.85f && clean[i] == kBoneHu) {
                s1 += v[i];
                s2 += double(v[i]) * v[i];
                ++n;
            }
        return s2 / n - (s1 / n) * (s1 / n);
    };
    CHECK(shell_variance(a) > shell_variance(b));
}

TEST_CASE("simulation is deterministic across runs and thread counts") {
    const Volume3D v = make_cochlea_volume(CochleaSpiral{}, {60, 50, 50}, {0.2f, 0.2f, 0.2f});
    SimulationConfig cfg;
    cfg.scatter_enabled = true;
    cfg.roi = insert_roi();
    cfg.rng_seed = 77;
    set_thread_count(1);
    const Volume3D one = simulate_artifacts(v, cfg, water(), &head_bank());
    set_thread_count(4);
    const Volume3D four = simulate_artifacts(v, cfg, water(), &head_bank());
    set_thread_count(0);
    CHECK(one == four);
    cfg.rng_seed = 78;
    CHECK(!(simulate_artifacts(v, cfg, water(), &head_bank()) == one));
}
