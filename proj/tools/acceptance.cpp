// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number of failures.
// Usage: marsim_acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "marsim/baselines.hpp"
#include "marsim/config.hpp"
#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/phantom.hpp"
#include "marsim/physics.hpp"
#include "marsim/pipeline.hpp"
#include "marsim/projector.hpp"
#include "marsim/quality.hpp"
#include "marsim/scatter.hpp"
#include "marsim/volume_io.hpp"

using namespace marsim;
namespace fs = std::filesystem;

namespace {

int failures = 0;

void report(const char* name, bool pass, const std::string& detail) {
    std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    failures += !pass;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

const WaterTable& water() { return WaterTable::standard(); }

SimulationConfig plain_config(std::vector<SpectrumSample> spectrum) {
    SimulationConfig c;
    c.spectrum = EnergySpectrum(std::move(spectrum));
    c.scatter_enabled = false;
    c.noise_sigma2 = 0.0;
    return c;
}

// --- criteria -------------------------------------------------------------------------

void compton() {
    CounterRng rng(101, 0);
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double e = 1.0 + 999.0 * rng.uniform();
        const double beta = std::numbers::pi * rng.uniform();
        const double ref = e / (1.0 + (e / 511.0) * (1.0 - std::cos(beta)));
        worst = std::max(worst, std::abs(compton_energy(e, beta) - ref) / ref);
    }
    const double back = compton_energy(511.0, std::numbers::pi);
    const bool ok = worst <= 1e-9 && std::abs(back - 170.333) < 5e-4;
    report("compton-kinematics", ok, fmt("max rel err %.2e over 100 pairs (tol 1e-9); E(511, pi) = %.6f keV", worst, back));
}

Volume3D smooth_phantom() {
    const Dims d{64, 64, 8};
    const float s = 0.5f;
    std::vector<float> v(d.count());
    for (std::uint32_t k = 0; k < d.nz; ++k)
        for (std::uint32_t j = 0; j < d.ny; ++j)
            for (std::uint32_t i = 0; i < d.nx; ++i) {
                const double x = (i + 0.5) * s - 16.0, y = (j + 0.5) * s - 16.0;
                const double r = std::hypot(x / 1.1, y);
                double w = 1.0;
                if (r > 13.0) w = 0.0;
                else if (r > 9.0) w = std::pow(std::cos(0.5 * std::numbers::pi * (r - 9.0) / 4.0), 2);
                const double bump = 500.0 * std::exp(-((x - 3) * (x - 3) + (y + 2) * (y + 2)) / (2.0 * (2.0 + 0.1 * k)));
                v[(std::size_t(k) * d.ny + j) * d.nx + i] = float(-1000.0 + w * (1000.0 + bump));
            }
    return Volume3D(d, {s, s, s}, VolumeKind::HU, std::move(v));
}

void beer_lambert() {
    set_thread_count(1);
    const auto t0 = std::chrono::steady_clock::now();
    const Volume3D vol = smooth_phantom();
    const double e = 77.2;
    const SimulationConfig cfg = plain_config({{e, 1.0}});
    const Volume3D out = simulate_artifacts(vol, cfg, water());
    const double psnr = metrics(normalize_for_metrics(out), normalize_for_metrics(vol)).psnr_db;

    // effective sinogram against the plain projection of the attenuation map
    const Volume3D mu = hu_to_attenuation(vol, e, water());
    const auto g = FanBeamGeometry::for_slice(64, 64, 0.5f, 0.5f);
    double worst = 0.0;
    for (std::uint32_t z = 0; z < vol.dims().nz; ++z) {
        const std::vector<Sinogram> p{fanbeam_project(mu.slice_z(z), g, z)};
        const Sinogram eff = polychromatic_sinogram(p, cfg.spectrum, nullptr, 0.0, {});
        for (std::size_t i = 0; i < eff.size(); ++i) {
            const double ref = p[0].values()[i];
            worst = std::max(worst, std::abs(eff.values()[i] - ref) / std::max(std::abs(ref), 1e-6));
        }
    }
    const double secs = seconds_since(t0);
    set_thread_count(0);
    report("beer-lambert", psnr > 30.0 && worst <= 1e-6 && secs < 60.0,
           fmt("64x64x8 round trip PSNR %.2f dB (> 30); sinogram max rel dev %.2e (<= 1e-6); %.1f s single-thread (< 60)",
               psnr, worst, secs));
}

std::pair<double, double> center_rim(const Volume3D& v) {
    const auto n = v.dims().nx;
    const Slice2D sl = v.slice_z(0);
    double c = 0, r = 0;
    int nc = 0, nr = 0;
    for (std::uint32_t j = 0; j < n; ++j)
        for (std::uint32_t i = 0; i < n; ++i) {
            const double d = std::hypot(i + 0.5 - n / 2.0, j + 0.5 - n / 2.0);
            if (d < 6.0) c += sl.at(i, j), ++nc;
            if (d >= 16.0 && d <= 20.0) r += sl.at(i, j), ++nr;
        }
    return {c / nc, r / nr};
}

void cupping() {
    const std::uint32_t n = 64;
    std::vector<float> v(n * n, kHuAir);
    for (std::uint32_t j = 0; j < n; ++j)
        for (std::uint32_t i = 0; i < n; ++i)
            if (std::hypot(i + 0.5 - n / 2.0, j + 0.5 - n / 2.0) <= 24.0) v[j * n + i] = 0.0f;
    const Volume3D cyl({n, n, 1}, {1, 1, 1}, VolumeKind::HU, v);
    const auto [pc, pr] = center_rim(simulate_artifacts(cyl, plain_config({{40, 0.12}, {60, 0.30}, {80, 0.28}, {100, 0.20}, {120, 0.10}}), water()));
    const auto [mc, mr] = center_rim(simulate_artifacts(cyl, plain_config({{77.2, 1.0}}), water()));
    const double gap = pr - pc, mono = std::abs(mc - mr);
    report("cupping", pc < pr && gap > 3.0 * mono,
           fmt("5-energy rim-center %.2f HU vs mono |center-rim| %.2f HU (ratio %.1f, need > 3)", gap, mono,
               gap / std::max(mono, 1e-12)));
}

void scatter_normalization() {
    const MaterialPhantom ph = make_uniform_phantom({64, 64, 64}, {3, 3, 3}, materials::kWater);
    const auto g = bank_geometry_for(ph, 12);
    CounterRng rng(77, 0);
    double worst = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
        const ScatterBank b = trace_photons(ph, g, EnergySpectrum::default_tungsten_140kvp(), water(), 20000, 1000 + k);
        const double alpha = kAlphaMin + (kAlphaMax - kAlphaMin) * rng.uniform();
        const Sinogram s = normalize_scatter(b, alpha);
        worst = std::max(worst, std::abs(s.mean() / b.primary.mean() - alpha));
    }
    int rejected = 0;
    const ScatterBank b = trace_photons(ph, g, EnergySpectrum::default_tungsten_140kvp(), water(), 20000, 1);
    for (double a : {0.0, 0.0009999, 0.0200001, 0.05, -0.01}) {
        try {
            (void)normalize_scatter(b, a);
        } catch (const ArgumentError&) {
            ++rejected;
        }
    }
    int accepted = 0;
    for (double a : {0.001, 0.02}) {
        try {
            (void)normalize_scatter(b, a);
            ++accepted;
        } catch (const Error&) {
        }
    }
    report("scatter-normalization", worst <= 1e-12 && rejected == 5 && accepted == 2,
           fmt("10 traced banks, max |mean(S)/mean(F) - alpha| %.2e (<= 1e-12); %d/5 out-of-range alphas rejected, "
               "bounds accepted %d/2",
               worst, rejected, accepted));
}

void noise() {
    const auto g = FanBeamGeometry::for_slice(512, 512, 1, 1, 1000, 1024);
    const Sinogram ones(g, 0, 1.0);
    const Sinogram noisy = add_detector_noise(ones, 0.04, {2024, 0});
    double s2 = 0.0;
    for (std::size_t i = 0; i < noisy.size(); ++i) s2 += (noisy.values()[i] - 1.0) * (noisy.values()[i] - 1.0);
    const double direct = s2 / double(noisy.size());
    // end to end through the detector model at unit flux
    const std::vector<Sinogram> zero{Sinogram(g, 0)};
    const Sinogram eff = polychromatic_sinogram(zero, EnergySpectrum({{60, 1}}), nullptr, 0.04, {2025, 0}, 1.0);
    double e2 = 0.0;
    for (double x : eff.values()) e2 += (std::exp(-x) - 1.0) * (std::exp(-x) - 1.0);
    const double chain = e2 / double(eff.size());
    const bool ok = std::abs(direct / 0.04 - 1.0) <= 0.05 && std::abs(chain / 0.04 - 1.0) <= 0.05;
    report("noise-calibration", ok,
           fmt("%zu bins: var(L_final - L) %.5f, through detector model %.5f (target 0.04 +-5%%)", noisy.size(), direct,
               chain));
}

void mc_convergence() {
    const MaterialPhantom head = make_head_phantom({64, 64, 64}, {3, 3, 3});
    const auto g = bank_geometry_for(head, 20);
    const auto spec = EnergySpectrum::default_tungsten_140kvp();
    const int seeds = 20;
    std::vector<double> rel_se;
    std::string detail;
    for (std::uint64_t n : {10000ull, 40000ull, 160000ull}) {
        std::vector<double> means;
        for (int s = 0; s < seeds; ++s) means.push_back(trace_photons(head, g, spec, water(), n, 500 + s).scatter.mean());
        double m = 0.0, v = 0.0;
        for (double x : means) m += x;
        m /= seeds;
        for (double x : means) v += (x - m) * (x - m);
        v /= seeds - 1;
        rel_se.push_back(std::sqrt(v) / m);
        detail += fmt("N=%llu rel SE %.4f; ", static_cast<unsigned long long>(n), rel_se.back());
    }
    // each 4x step should halve the SE; accept a ratio within a factor 2 of 2
    bool ok = true;
    for (int i = 0; i + 1 < 3; ++i) {
        const double ratio = rel_se[i] / rel_se[i + 1];
        ok = ok && ratio >= 1.0 && ratio <= 4.0;
        detail += fmt("ratio %.2f; ", ratio);
    }
    set_thread_count(1);
    const ScatterBank a = trace_photons(head, g, spec, water(), 40000, 9);
    const ScatterBank b = trace_photons(head, g, spec, water(), 40000, 9);
    set_thread_count(4);
    const ScatterBank c = trace_photons(head, g, spec, water(), 40000, 9);
    set_thread_count(0);
    const bool same = a == b && a == c;
    report("mc-convergence", ok && same, detail + (same ? "same-seed runs bit-identical (1 and 4 threads)" : "same-seed runs DIFFER"));
}

void li_exactness() {
    const auto g = FanBeamGeometry::for_slice(32, 32, 1, 1, 90, 64);
    CounterRng rng(31, 0);
    double worst_sino = 0.0, worst_img = 0.0;
    for (int c = 0; c < 100; ++c) {
        Sinogram s(g, 0);
        MetalTrace t(g.n_views, g.n_detectors);
        for (std::uint32_t v = 0; v < g.n_views; ++v) {
            const double a = 0.5 + 2.0 * rng.uniform(), b = 0.05 * (rng.uniform() - 0.5);
            for (std::uint32_t j = 0; j < g.n_detectors; ++j) s.at(v, j) = a + b * j;
            const auto lo = std::uint32_t(1 + rng.uniform() * 40), len = std::uint32_t(1 + rng.uniform() * 20);
            for (std::uint32_t j = lo; j < std::min(lo + len, g.n_detectors - 1); ++j) t.set(v, j, true);
        }
        Sinogram corrupted = s;
        for (std::uint32_t v = 0; v < g.n_views; ++v)
            for (std::uint32_t j = 0; j < g.n_detectors; ++j)
                if (t.at(v, j)) corrupted.at(v, j) += 5.0 * rng.uniform();
        const Sinogram fixed = mar_li(corrupted, t);
        for (std::size_t i = 0; i < s.size(); ++i)
            worst_sino = std::max(worst_sino, std::abs(fixed.values()[i] - s.values()[i]));
        const Slice2D ref = fanbeam_reconstruct(s, 32, 32, 1, 1);
        const Slice2D out = fanbeam_reconstruct(fixed, 32, 32, 1, 1);
        double imax = 0.0, dmax = 0.0;
        for (std::size_t i = 0; i < ref.values.size(); ++i) {
            imax = std::max(imax, double(std::abs(ref.values[i])));
            dmax = std::max(dmax, double(std::abs(out.values[i] - ref.values[i])));
        }
        worst_img = std::max(worst_img, dmax / std::max(imax, 1e-30));
    }
    report("li-exactness", worst_sino <= 1e-12 && worst_img <= 1e-6,
           fmt("100 affine cases: max sinogram error %.2e (<= 1e-12), max image error %.2e of peak (<= 1e-6, float "
               "image storage)",
               worst_sino, worst_img));
}

PipelineConfig default_config(const fs::path& out, std::uint32_t n) {
    PipelineConfig c;
    c.dataset.out_dir = out;
    c.dataset.n_volumes = n;
    return c;
}

void baseline_ordering(const fs::path& work) {
    const auto t0 = std::chrono::steady_clock::now();
    const fs::path dir = work / "dataset20";
    fs::remove_all(dir);
    const Manifest m = cmd_generate(default_config(dir, 20));
    std::size_t ok_samples = 0;
    for (const auto& e : m.entries) ok_samples += e.ok();
    EvaluateOptions opt;
    opt.config = default_config(dir, 20);
    const EvaluationResult r = cmd_evaluate(Manifest::load(dir / kManifestName), opt);
    const fs::path csv = work / "metrics.csv";
    write_metric_table(r, csv);
    const double secs = seconds_since(t0);

    std::ifstream in(csv);
    std::vector<std::string> lines;
    for (std::string l; std::getline(in, l);) lines.push_back(l);
    bool layout = !lines.empty() && lines[0] == "volume_id,method,psnr,rmse,ssim" && lines.size() == 1 + ok_samples * 4 + 4;
    std::map<std::string, int> per_method;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto c1 = lines[i].find(','), c2 = lines[i].find(',', c1 + 1);
        per_method[lines[i].substr(c1 + 1, c2 - c1 - 1)]++;
        layout = layout && std::count(lines[i].begin(), lines[i].end(), ',') == 4;
    }
    for (const char* name : {"untreated", "li", "bhc", "nmar"}) layout = layout && per_method[name] == int(ok_samples) + 1;

    const double li = r.improved_fraction.at("li");
    std::string means;
    for (const auto& a : r.aggregate) means += fmt("%s %.5f, ", a.method.c_str(), a.report.rmse);
    report("baseline-ordering", ok_samples == 20 && li >= 0.8 && layout && secs < 600.0,
           fmt("%zu/20 volumes; li rmse <= untreated on %.0f%% (>= 80%%), bhc %.0f%%, nmar %.0f%%; mean rmse %s"
               "CSV layout %s (%s); %.0f s (< 600)",
               ok_samples, 100 * li, 100 * r.improved_fraction.at("bhc"), 100 * r.improved_fraction.at("nmar"),
               means.c_str(), layout ? "ok" : "BAD", csv.string().c_str(), secs));
}

void retinex() {
    const Dims d{12, 12, 12};
    const Spacing sp{0.2f, 0.2f, 0.2f};
    const Volume3D one = Volume3D::filled(d, sp, VolumeKind::Normalized, 1.0f);
    double const_loss = retinex_loss(one, one, 3.0);
    double const_refl = 0.0;
    for (float c : {0.05f, 0.4f, 1.0f}) {
        const Volume3D r = retinex_reflectance(Volume3D::filled(d, sp, VolumeKind::Normalized, c), 3.0);
        for (float x : r.data()) const_refl = std::max(const_refl, std::abs(double(x) - 1.0));
    }
    CounterRng rng(3, 3);
    std::vector<float> v(d.count());
    for (float& x : v) x = float(0.05 + 0.95 * rng.uniform());
    const Volume3D base(d, sp, VolumeKind::Attenuation, v);
    const Volume3D rb = retinex_reflectance(base, 3.0);
    double scale_dev = 0.0;
    for (float k : {0.001f, 7.0f, 1000.0f}) {
        std::vector<float> w = v;
        for (float& x : w) x *= k;
        const Volume3D rs = retinex_reflectance(base.with_values(w), 3.0);
        for (std::size_t i = 0; i < rb.size(); ++i) scale_dev = std::max(scale_dev, std::abs(double(rs[i]) - rb[i]) / rb[i]);
    }
    double closed = 0.0;
    for (float c : {0.1f, 0.5f, 0.75f, 1.0f}) {
        const double l = retinex_loss(Volume3D::filled(d, sp, VolumeKind::Normalized, c), one, 3.0);
        closed = std::max(closed, std::abs(l - std::abs(double(c) - 1.0)));
    }
    report("retinex", const_loss == 0.0 && const_refl <= 1e-6 && scale_dev <= 1e-6 && closed <= 1e-9,
           fmt("constant volume: loss %.1e, max |R-1| %.1e; scale invariance max rel dev %.2e (<= 1e-6); "
               "g=c,y=1 max |loss-|c-1|| %.2e (<= 1e-9)",
               const_loss, const_refl, scale_dev, closed));
}

void metric_checks() {
    const Dims d{30, 25, 25};
    const Spacing sp{0.2f, 0.2f, 0.2f};
    CounterRng rng(8, 8);
    std::vector<float> a(d.count()), b(d.count());
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = float(0.85 * rng.uniform());
        b[i] = a[i] + 0.1f;
    }
    const Volume3D va(d, sp, VolumeKind::Normalized, a), vb(d, sp, VolumeKind::Normalized, b);
    const MetricReport same = metrics(va, va);
    const MetricReport off = metrics(va, vb);
    const bool ok = same.rmse == 0.0 && same.ssim == 1.0 && same.identical && std::abs(off.rmse - 0.1) <= 1e-6 &&
                    std::abs(off.psnr_db - 20.0) <= 1e-6 * 20.0;
    report("metrics", ok,
           fmt("identical: rmse %.1e ssim %.6f flagged %d; +0.1: rmse %.9f psnr %.7f dB (tol 1e-6)", same.rmse,
               same.ssim, int(same.identical), off.rmse, off.psnr_db));
}

bool same_tree(const fs::path& a, const fs::path& b, std::size_t& files) {
    std::vector<fs::path> names;
    for (const auto& e : fs::directory_iterator(a)) names.push_back(e.path().filename());
    std::size_t nb = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++nb;
    if (names.size() != nb) return false;
    files = names.size();
    for (const auto& n : names)
        if (!fs::exists(b / n) || read_file_bytes(a / n) != read_file_bytes(b / n)) return false;
    return true;
}

void determinism(const fs::path& work) {
    const fs::path r1 = work / "det_run1", r2 = work / "det_run2", r3 = work / "det_threads4";
    for (const auto& p : {r1, r2, r3}) fs::remove_all(p);
    set_thread_count(1);
    (void)cmd_generate(default_config(r1, 3));
    (void)cmd_generate(default_config(r2, 3));
    set_thread_count(4);
    (void)cmd_generate(default_config(r3, 3));
    set_thread_count(0);
    std::size_t n12 = 0, n13 = 0;
    const bool same12 = same_tree(r1, r2, n12), same13 = same_tree(r1, r3, n13);
    report("determinism", same12 && same13 && n12 == 10,
           fmt("3-volume dataset: run1 vs run2 %s (%zu files), 1 vs 4 threads %s", same12 ? "byte-identical" : "DIFFER",
               n12, same13 ? "byte-identical" : "DIFFER"));
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::current_path() / "acceptance_out";
    fs::create_directories(work);
    const auto t0 = std::chrono::steady_clock::now();
    auto guarded = [](const char* name, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            report(name, false, std::string("exception: ") + e.what());
        }
    };
    guarded("compton-kinematics", compton);
    guarded("beer-lambert", beer_lambert);
    guarded("cupping", cupping);
    guarded("scatter-normalization", scatter_normalization);
    guarded("noise-calibration", noise);
    guarded("mc-convergence", mc_convergence);
    guarded("li-exactness", li_exactness);
    guarded("baseline-ordering", [&] { baseline_ordering(work); });
    guarded("retinex", retinex);
    guarded("metrics", metric_checks);
    guarded("determinism", [&] { determinism(work); });
    std::printf("%d failed, %.0f s total\n", failures, seconds_since(t0));
    return failures;
}
