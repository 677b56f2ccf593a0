#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <numbers>
#include <set>

#include "doctest.h"
#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/scatter.hpp"
#include "marsim/volume_io.hpp"
#include "test_util.hpp"

using namespace marsim;

namespace {

const WaterTable& water() { return WaterTable::standard(); }

template <class R>
double mean_of(const R& r) {
    double s = 0.0;
    for (double v : r) s += v;
    return s / double(std::size(r));
}

// Klein-Nishina dsigma/dcos up to a constant, written from the textbook form
// (E'/E)^2 (E'/E + E/E' - sin^2).
double kn_reference(double e_kev, double mu) {
    const double r = 1.0 / (1.0 + e_kev / 511.0 * (1.0 - mu));
    return r * r * (r + 1.0 / r - (1.0 - mu * mu));
}

double kn_bin_mass(double e_kev, double a, double b, int n = 64) {
    const double h = (b - a) / n;
    double s = kn_reference(e_kev, a) + kn_reference(e_kev, b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * kn_reference(e_kev, a + i * h);
    return s * h / 3.0;
}

ScatterBank make_bank(std::uint32_t views, std::uint32_t dets, std::uint64_t seed) {
    ScatterBank b;
    b.geometry = FanBeamGeometry::for_slice(64, 64, 3, 3, views, dets);
    b.primary = Sinogram(b.geometry, 0);
    b.scatter = Sinogram(b.geometry, 0);
    CounterRng rng(seed, 1);
    for (double& x : b.primary.values()) x = float(0.1 + rng.uniform());
    for (double& x : b.scatter.values()) x = float(1e-3 * rng.uniform());
    b.n_histories = 1000;
    b.seed = seed;
    return b;
}

}  // namespace

TEST_CASE("compton kinematics") {
    CHECK(compton_energy(100.0, 0.0) == 100.0);
    CHECK(compton_energy(511.0, std::numbers::pi / 2) == doctest::Approx(255.5).epsilon(1e-12));
    CHECK(compton_energy(511.0, std::numbers::pi) == doctest::Approx(511.0 / 3.0).epsilon(1e-12));
    CounterRng rng(1, 1);
    for (int i = 0; i < 1000; ++i) {
        const double e = 10.0 + 500.0 * rng.uniform();
        const double beta = (std::numbers::pi - 0.1) * rng.uniform();
        const double ep = compton_energy(e, beta);
        CHECK(ep < e);
        CHECK(ep == doctest::Approx(e / (1.0 + e / 511.0 * (1.0 - std::cos(beta)))).epsilon(1e-12));
        CHECK(compton_energy(e, beta + 0.1) < ep + 1e-12 * e);
    }
    CHECK_THROWS_AS(compton_energy(0.0, 1.0), ArgumentError);
    CHECK_THROWS_AS(compton_energy(-5.0, 1.0), ArgumentError);
}

TEST_CASE("klein-nishina density shape") {
    for (double e : {20.0, 80.0, 500.0})
        for (double mu : {-0.9, -0.3, 0.2, 0.8}) {
            const double ratio = klein_nishina_density(e, mu) / klein_nishina_density(e, 1.0);
            CHECK(ratio == doctest::Approx(kn_reference(e, mu) / kn_reference(e, 1.0)).epsilon(1e-12));
        }
}

TEST_CASE("klein-nishina sampling: chi-squared at three energies") {
    const int bins = 40;
    const int draws = 1000000;
    for (double e : {30.0, 100.0, 500.0}) {
        std::vector<double> counts(bins, 0.0);
        CounterRng rng(std::uint64_t(e), 17);
        int out_of_range = 0;
        for (int i = 0; i < draws; ++i) {
            const double mu = sample_klein_nishina_cos(e, rng);
            if (mu < -1.0 || mu > 1.0) ++out_of_range;
            counts[std::min(bins - 1, int((mu + 1.0) / 2.0 * bins))] += 1.0;
        }
        CHECK(out_of_range == 0);
        double total = 0.0;
        std::vector<double> mass(bins);
        for (int b = 0; b < bins; ++b) total += mass[b] = kn_bin_mass(e, -1.0 + 2.0 * b / bins, -1.0 + 2.0 * (b + 1) / bins);
        double chi2 = 0.0;
        for (int b = 0; b < bins; ++b) {
            const double expected = draws * mass[b] / total;
            chi2 += (counts[b] - expected) * (counts[b] - expected) / expected;
        }
        const boost::math::chi_squared dist(bins - 1);
        const double p = boost::math::cdf(boost::math::complement(dist, chi2));
        INFO("E = " << e << " chi2 = " << chi2 << " p = " << p);
        CHECK(p > 0.01);
    }
}

TEST_CASE("photoelectric model") {
    CHECK(photoelectric_probability(28.0) == doctest::Approx(0.5));
    CHECK(photoelectric_probability(10.0) > photoelectric_probability(60.0));
    CHECK(photoelectric_probability(140.0) < 0.01);
}

TEST_CASE("vacuum phantom: primary is one, scatter negligible") {
    const MaterialPhantom air = make_uniform_phantom({32, 32, 32}, {3, 3, 3}, materials::kAir);
    const auto g = bank_geometry_for(air, 20);
    const ScatterBank b = trace_photons(air, g, EnergySpectrum::default_tungsten_140kvp(), water(), 400000, 5);
    CHECK_NOTHROW(b.validate());
    CHECK(b.primary.mean() == doctest::Approx(1.0).epsilon(0.03));
    CHECK(b.scatter.mean() <= 1e-3 * b.primary.mean());
}

TEST_CASE("water phantom bank: invariants, seeding, thread independence") {
    const MaterialPhantom w = make_uniform_phantom({24, 24, 24}, {4, 4, 4}, materials::kWater);
    const auto g = bank_geometry_for(w, 12);
    const auto spec = EnergySpectrum::default_tungsten_140kvp();
    set_thread_count(1);
    const ScatterBank a = trace_photons(w, g, spec, water(), 60000, 9);
    set_thread_count(3);
    const ScatterBank a3 = trace_photons(w, g, spec, water(), 60000, 9);
    set_thread_count(0);
    CHECK(a == a3);
    const ScatterBank b = trace_photons(w, g, spec, water(), 60000, 10);
    CHECK(!(a.scatter == b.scatter));
    for (double x : a.scatter.values()) REQUIRE(x >= 0.0);
    CHECK(a.scatter.mean() > 0.0);
    double fmax = 0.0;
    for (double x : a.primary.values()) fmax = std::max(fmax, x);
    CHECK(fmax > 0.0);
    // water attenuates the central rays
    CHECK(a.primary.at(0, g.n_detectors / 2) < 0.5);
    CHECK(a.n_histories == 60000);

    TraceOptions multi;
    multi.max_scatters = 3;
    const ScatterBank m = trace_photons(w, g, spec, water(), 60000, 9, multi);
    CHECK(m.scatter.mean() > a.scatter.mean());
    multi.max_scatters = 4;
    CHECK_THROWS(trace_photons(w, g, spec, water(), 100, 9, multi));
}

TEST_CASE("scatter normalization") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const ScatterBank b = make_bank(30, 40, seed);
        for (double alpha : {0.001, 0.0137, 0.02}) {
            const Sinogram s = normalize_scatter(b, alpha);
            CHECK(std::abs(s.mean() / b.primary.mean() - alpha) <= 1e-12 * alpha);
        }
    }
    const ScatterBank b = make_bank(30, 40, 1);
    CHECK_THROWS_AS(normalize_scatter(b, 0.0005), ArgumentError);
    CHECK_THROWS_AS(normalize_scatter(b, 0.021), ArgumentError);
    ScatterBank zero = b;
    zero.scatter = Sinogram(b.geometry, 0);
    CHECK_THROWS_AS(normalize_scatter(zero, 0.01), DegenerateBankError);
}

TEST_CASE("sample_trace: identity, nonnegativity, offsets, arc check") {
    const ScatterBank b = make_bank(36, 48, 3);
    RoiFootprint full;
    full.radius_mm = b.geometry.source_to_iso_mm * std::sin(b.geometry.fan_half_angle());
    full.view_offsets = 1;
    CounterRng rng(1, 2);
    const Sinogram id = sample_trace(b, full, b.geometry, rng);
    for (std::size_t i = 0; i < id.size(); ++i) CHECK(id.values()[i] == doctest::Approx(b.scatter.values()[i]).epsilon(1e-9));

    RoiFootprint roi;
    roi.center_x_mm = 10.0;
    roi.center_y_mm = -5.0;
    roi.radius_mm = 15.0;
    const auto target = FanBeamGeometry::for_slice(60, 50, 0.2f, 0.2f);
    std::set<std::uint64_t> signatures;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        CounterRng r(seed, 7);
        const Sinogram t = sample_trace(b, roi, target, r);
        for (double x : t.values()) REQUIRE(x >= 0.0);
        signatures.insert(std::uint64_t(t.at(0, 0) * 1e12));
    }
    CHECK(signatures.size() > 10);

    roi.view_offsets = 1;
    CounterRng r1(1, 7), r2(2, 7);
    CHECK(sample_trace(b, roi, target, r1) == sample_trace(b, roi, target, r2));

    RoiFootprint outside;
    outside.center_x_mm = 80.0;
    outside.radius_mm = 30.0;
    CounterRng r3(1, 1);
    CHECK_THROWS_AS(sample_trace(b, outside, target, r3), GeometryError);
}

TEST_CASE("bank file round trip") {
    const MaterialPhantom w = make_uniform_phantom({16, 16, 16}, {4, 4, 4}, materials::kWater);
    const ScatterBank b = trace_photons(w, bank_geometry_for(w, 8), EnergySpectrum::default_tungsten_140kvp(), water(), 5000, 2);
    const auto dir = test::temp_dir("bank");
    write_scatter_bank(b, dir / "b.marb");
    const ScatterBank back = read_scatter_bank(dir / "b.marb");
    CHECK(back.primary.values().size() == b.primary.values().size());
    CHECK(std::equal(back.primary.values().begin(), back.primary.values().end(), b.primary.values().begin()));
    CHECK(std::equal(back.scatter.values().begin(), back.scatter.values().end(), b.scatter.values().begin()));
    CHECK(back.n_histories == b.n_histories);
    CHECK(back.seed == 2);
    CHECK(back.geometry.n_views == 8);
    auto bytes = read_file_bytes(dir / "b.marb");
    bytes[0] = 'X';
    write_file_bytes(dir / "bad.marb", bytes);
    CHECK_THROWS_AS(read_scatter_bank(dir / "bad.marb"), ParseError);
}

TEST_CASE("klein-nishina total cross section matches quadrature") {
    for (double e : {1.0, 20.0, 80.0, 140.0, 500.0}) {
        CHECK(klein_nishina_total(e) == doctest::Approx(kn_bin_mass(e, -1.0, 1.0, 4096)).epsilon(1e-9));
    }
    CHECK(klein_nishina_total(1e-3) == doctest::Approx(8.0 / 3.0).epsilon(1e-5));
    CHECK_THROWS_AS(klein_nishina_total(0.0), ArgumentError);
}

TEST_CASE("forced detection and analog tallies agree") {
    const MaterialPhantom w = make_uniform_phantom({24, 24, 24}, {4, 4, 4}, materials::kWater);
    const auto g = bank_geometry_for(w, 4);
    const auto spec = EnergySpectrum::default_tungsten_140kvp();
    TraceOptions analog;
    analog.estimator = ScatterEstimator::Analog;
    const int seeds = 8;
    const std::uint64_t n = 200000;
    std::vector<double> ma, mf;
    std::vector<double> prof_a(g.n_detectors, 0.0), prof_f(g.n_detectors, 0.0);
    for (int s = 0; s < seeds; ++s) {
        const ScatterBank a = trace_photons(w, g, spec, water(), n, 100 + s, analog);
        const ScatterBank f = trace_photons(w, g, spec, water(), n, 100 + s);
        ma.push_back(mean_of(a.scatter.values()));
        mf.push_back(mean_of(f.scatter.values()));
        // forced detection leaves the primary tally untouched
        CHECK(a.primary == f.primary);
        for (std::uint32_t v = 0; v < g.n_views; ++v)
            for (std::uint32_t j = 0; j < g.n_detectors; ++j) {
                prof_a[j] += a.scatter.at(v, j);
                prof_f[j] += f.scatter.at(v, j);
            }
    }
    auto stats = [&](const std::vector<double>& x) {
        const double m = mean_of(x);
        double var = 0.0;
        for (double v : x) var += (v - m) * (v - m);
        return std::pair{m, std::sqrt(var / (x.size() - 1) / x.size())};
    };
    const auto [a_mean, a_se] = stats(ma);
    const auto [f_mean, f_se] = stats(mf);
    MESSAGE("analog " << a_mean << " +- " << a_se << ", forced " << f_mean << " +- " << f_se);
    REQUIRE(a_mean > 0.0);
    CHECK(std::abs(a_mean - f_mean) < 4.0 * std::hypot(a_se, f_se));
    CHECK(f_se < 0.5 * a_se);

    // coarse profile: half-fan sums
    const std::size_t half = g.n_detectors / 2;
    double la = 0, lf = 0, ta = 0, tf = 0;
    for (std::size_t j = 0; j < g.n_detectors; ++j) {
        ta += prof_a[j];
        tf += prof_f[j];
        if (j < half) { la += prof_a[j]; lf += prof_f[j]; }
    }
    CHECK(lf / tf == doctest::Approx(0.5).epsilon(0.05));
    CHECK(la / ta == doctest::Approx(lf / tf).epsilon(0.25));
}
