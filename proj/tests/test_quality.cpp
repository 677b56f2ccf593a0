#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "marsim/error.hpp"
#include "marsim/quality.hpp"
#include "test_util.hpp"

using namespace marsim;

namespace {

const Spacing kSp{0.2f, 0.2f, 0.2f};

Volume3D constant(Dims d, VolumeKind kind, float v) { return Volume3D::filled(d, kSp, kind, v); }

Volume3D with_voxel(const Volume3D& v, std::size_t i, float value) {
    std::vector<float> data = v.values();
    data[i] = value;
    return v.with_values(std::move(data));
}

}  // namespace

TEST_CASE("metrics: identical and offset volumes") {
    const Volume3D a = test::random_volume({12, 10, 8}, kSp, VolumeKind::Normalized, 1, 0.0f, 0.9f);
    const MetricReport same = metrics(a, a);
    CHECK(same.rmse == 0.0);
    CHECK(same.ssim == 1.0);
    CHECK(same.identical);
    CHECK(same.psnr_db == kPsnrCapDb);
    REQUIRE(same.per_slice.size() == 8);
    for (const auto& s : same.per_slice) CHECK(s.identical);

    std::vector<float> shifted = a.values();
    for (float& v : shifted) v += 0.1f;
    const Volume3D b = a.with_values(shifted);
    const MetricReport off = metrics(a, b);
    CHECK(off.rmse == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(off.psnr_db == doctest::Approx(20.0).epsilon(1e-6));
    CHECK(!off.identical);
    const std::string kv = off.to_key_value();
    CHECK(kv.rfind("psnr=", 0) == 0);
    CHECK(kv.find(" rmse=0.1") != std::string::npos);
    CHECK(kv.find(" ssim=") != std::string::npos);
    CHECK(kv.substr(kv.size() - 11) == "identical=0");
    CHECK(same.to_key_value().substr(same.to_key_value().size() - 11) == "identical=1");
}

TEST_CASE("metrics: symmetry, ranges and slice consistency") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Volume3D a = test::random_volume({10, 9, 7}, kSp, VolumeKind::Normalized, seed, 0.0f, 1.0f);
        const Volume3D b = test::random_volume({10, 9, 7}, kSp, VolumeKind::Normalized, seed + 100, 0.0f, 1.0f);
        const MetricReport ab = metrics(a, b), ba = metrics(b, a);
        CHECK(ab.rmse == ba.rmse);
        CHECK(ab.ssim == doctest::Approx(ba.ssim).epsilon(1e-12));
        CHECK(ab.rmse >= 0.0);
        CHECK(ab.ssim >= -1.0);
        CHECK(ab.ssim <= 1.0);
        CHECK(std::isfinite(ab.psnr_db));
        // brute-force rmse
        double sq = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) sq += (double(a[i]) - b[i]) * (double(a[i]) - b[i]);
        CHECK(ab.rmse == doctest::Approx(std::sqrt(sq / double(a.size()))).epsilon(1e-12));
        double mean_sq = 0.0;
        for (const auto& s : ab.per_slice) mean_sq += s.rmse * s.rmse;
        CHECK(std::sqrt(mean_sq / 7.0) == doctest::Approx(ab.rmse).epsilon(1e-12));
    }
    const Volume3D a = test::random_volume({8, 8, 8}, kSp, VolumeKind::Normalized, 2, 0.0f, 1.0f);
    CHECK_THROWS_AS(metrics(a, constant({8, 8, 8}, VolumeKind::Attenuation, 0.5f)), ArgumentError);
    CHECK_THROWS(metrics(a, constant({8, 8, 7}, VolumeKind::Normalized, 0.5f)));
}

TEST_CASE("metrics: SSIM drops with noise") {
    const Volume3D a = test::random_volume({16, 16, 8}, kSp, VolumeKind::Normalized, 5, 0.3f, 0.7f);
    CounterRng rng(9, 0);
    double last = 1.0;
    for (double amp : {0.01, 0.05, 0.2}) {
        std::vector<float> v = a.values();
        for (float& x : v) x = std::clamp(float(x + amp * rng.normal()), 0.0f, 1.0f);
        const double s = metrics(a, a.with_values(v)).ssim;
        CHECK(s < last);
        last = s;
    }
}

TEST_CASE("gaussian blur") {
    const auto k = gaussian_kernel(1.5);
    CHECK(k.size() == 11);
    double sum = 0.0;
    for (double t : k) sum += t;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-14));
    CHECK_THROWS_AS(gaussian_kernel(0.0), ArgumentError);

    const Volume3D c = constant({9, 8, 7}, VolumeKind::Attenuation, 0.37f);
    const Volume3D bc = gaussian_blur_3d(c, 2.0);
    for (float v : bc.data()) CHECK(v == doctest::Approx(0.37).epsilon(1e-6));

    // a centered delta blurs into the separable product of the 1D taps
    const Dims d{21, 21, 21};
    const Volume3D delta = with_voxel(constant(d, VolumeKind::Attenuation, 0.0f), Volume3D::filled(d, kSp, VolumeKind::Attenuation, 0).index(10, 10, 10), 1.0f);
    const Volume3D bd = gaussian_blur_3d(delta, 1.5);
    const int r = int(k.size() / 2);
    double total = 0.0;
    for (std::uint32_t z = 0; z < 21; ++z)
        for (std::uint32_t y = 0; y < 21; ++y)
            for (std::uint32_t x = 0; x < 21; ++x) {
                total += bd.at(x, y, z);
                const int dx = int(x) - 10, dy = int(y) - 10, dz = int(z) - 10;
                const double expected = (std::abs(dx) <= r && std::abs(dy) <= r && std::abs(dz) <= r)
                                            ? k[dx + r] * k[dy + r] * k[dz + r]
                                            : 0.0;
                CHECK(bd.at(x, y, z) == doctest::Approx(expected).epsilon(1e-5).scale(1e-9));
            }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));

    const Volume3D m = test::random_volume({8, 8, 8}, kSp, VolumeKind::Mask, 3, 0.0f, 1.0f);
    CHECK(gaussian_blur_3d(m, 1.0).kind() == VolumeKind::Normalized);
}

TEST_CASE("retinex operators") {
    const Dims d{10, 10, 10};
    SUBCASE("constant volume has unit reflectance and zero self-loss") {
        const Volume3D c = constant(d, VolumeKind::Normalized, 0.4f);
        const Volume3D r = retinex_reflectance(c, 3.0);
        for (float v : r.data()) CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(retinex_loss(constant(d, VolumeKind::Normalized, 1.0f), c, 3.0) == doctest::Approx(0.0).scale(1e-9));
    }
    SUBCASE("closed form g = c, y = 1") {
        for (float c : {0.25f, 0.5f, 0.9f}) {
            const double loss = retinex_loss(constant(d, VolumeKind::Normalized, c), constant(d, VolumeKind::Normalized, 1.0f), 3.0);
            CHECK(std::abs(loss - std::abs(double(c) - 1.0)) <= 1e-9);
        }
    }
    SUBCASE("scale invariance") {
        const Volume3D v = test::random_volume(d, kSp, VolumeKind::Attenuation, 4, 0.1f, 1.0f);
        const Volume3D r = retinex_reflectance(v, 2.0);
        for (float s : {0.01f, 3.0f, 250.0f}) {
            std::vector<float> scaled = v.values();
            for (float& x : scaled) x *= s;
            const Volume3D rs = retinex_reflectance(v.with_values(scaled), 2.0);
            for (std::size_t i = 0; i < r.size(); ++i) REQUIRE(std::abs(rs[i] - r[i]) <= 1e-6 * r[i]);
        }
    }
    SUBCASE("checkerboard: bright cells above one, dark below") {
        std::vector<float> v(d.count());
        for (std::uint32_t z = 0; z < d.nz; ++z)
            for (std::uint32_t y = 0; y < d.ny; ++y)
                for (std::uint32_t x = 0; x < d.nx; ++x) v[(z * d.ny + y) * d.nx + x] = ((x + y + z) % 2) ? 0.8f : 0.2f;
        const Volume3D cb(d, kSp, VolumeKind::Normalized, v);
        const Volume3D r = retinex_reflectance(cb, 1.0);
        for (std::size_t i = 0; i < cb.size(); ++i) CHECK((cb[i] > 0.5f) == (r[i] > 1.0f));
    }
    SUBCASE("domain") {
        const Volume3D z = constant(d, VolumeKind::Normalized, 0.0f);
        CHECK_THROWS_AS(retinex_reflectance(z, 3.0), DomainError);
        const Volume3D shifted = shift_for_retinex(z);
        for (float x : shifted.data()) CHECK(x >= float(kRetinexEpsilon));
        CHECK_NOTHROW(retinex_reflectance(shifted, 3.0));
        CHECK(shift_for_retinex(constant(d, VolumeKind::Normalized, 1.0f))[0] == 1.0f);
    }
}

TEST_CASE("gan losses") {
    const Dims d{8, 8, 8};
    const Volume3D g = test::random_volume(d, kSp, VolumeKind::Normalized, 11, 0.1f, 0.9f);
    const Volume3D t = test::random_volume(d, kSp, VolumeKind::Normalized, 12, 0.1f, 0.9f);
    const std::vector<double> half(4, 0.5);
    const GanLosses l = gan_losses(half, half, g, t, t, 5e-5);
    CHECK(l.disc == doctest::Approx(2.0 * std::log(0.5)).epsilon(1e-12));
    CHECK(l.adv == doctest::Approx(0.125).epsilon(1e-12));
    CHECK(l.mse == doctest::Approx(mse_loss(g, t)).epsilon(1e-12));
    CHECK(l.retinex == doctest::Approx(retinex_loss(g, t, 3.0)).epsilon(1e-12));
    CHECK(l.gen == doctest::Approx(5e-5 * l.retinex + l.mse + l.adv).epsilon(1e-12));

    const GanLosses a0 = gan_losses(half, half, g, t, t, 0.0);
    CHECK(a0.gen == doctest::Approx(a0.mse + a0.adv).epsilon(1e-14));
    CHECK(a0.retinex > 0.0);

    const std::vector<double> near_one(3, 1.0 - 1e-9);
    const GanLosses perfect = gan_losses(half, near_one, g, g, t, 2.0);
    CHECK(perfect.mse == 0.0);
    CHECK(perfect.gen == doctest::Approx(2.0 * perfect.retinex).epsilon(1e-9));

    const std::vector<double> bad = {0.5, 1.0};
    CHECK_THROWS_AS(gan_losses(bad, half, g, t, t, 1.0), DomainError);
    CHECK_THROWS_AS(gan_losses(half, std::vector<double>{0.0}, g, t, t, 1.0), DomainError);
    CHECK_THROWS_AS(gan_losses({}, half, g, t, t, 1.0), ArgumentError);
    CHECK_THROWS_AS(gan_losses(half, half, g, t, t, -1.0), ArgumentError);
}

TEST_CASE("finite-difference self-consistency of the losses") {
    const Dims d{8, 8, 8};
    const Volume3D g = test::random_volume(d, kSp, VolumeKind::Attenuation, 21, 0.2f, 0.8f);
    const Volume3D t = test::random_volume(d, kSp, VolumeKind::Attenuation, 22, 0.2f, 0.8f);
    const Volume3D y = test::random_volume(d, kSp, VolumeKind::Attenuation, 23, 0.3f, 0.9f);
    CounterRng rng(5, 5);
    for (int trial = 0; trial < 6; ++trial) {
        const std::size_t i = std::size_t(rng.uniform() * double(g.size()));
        auto central = [&](auto&& f, double h) {
            const Volume3D up = with_voxel(g, i, float(g[i] + h));
            const Volume3D dn = with_voxel(g, i, float(g[i] - h));
            return (f(up) - f(dn)) / (double(up[i]) - double(dn[i]));
        };
        auto mse = [&](const Volume3D& v) { return mse_loss(v, t); };
        const double analytic = 2.0 * (double(g[i]) - t[i]) / double(g.size());
        CHECK(central(mse, 1e-2) == doctest::Approx(analytic).epsilon(1e-4));

        auto ret = [&](const Volume3D& v) { return retinex_loss(v, y, 3.0); };
        const double d1 = central(ret, 2e-2), d2 = central(ret, 1e-2);
        const double richardson = (4.0 * d2 - d1) / 3.0;
        INFO("voxel " << i << " d(h)=" << d1 << " d(h/2)=" << d2);
        CHECK(std::abs(d2 - richardson) <= 1e-3 * std::abs(richardson) + 1e-9);
    }
}
