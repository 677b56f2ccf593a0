#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "marsim/config.hpp"
#include "marsim/error.hpp"
#include "test_util.hpp"

using namespace marsim;

namespace {

KeyValueFile kv(const std::string& text) {
    std::istringstream in(text);
    return KeyValueFile::parse(in);
}

PipelineConfig parse(const std::string& text) { return parse_pipeline_config(kv(text), "/base"); }

}  // namespace

TEST_CASE("key/value syntax") {
    const KeyValueFile f = kv("# comment\n\n a.b = 1 # trailing\nc.d=  two words \n");
    CHECK(f.values().size() == 2);
    CHECK(f.get("a.b") == "1");
    CHECK(f.get("c.d") == "two words");
    CHECK_THROWS_AS(f.get("x.y"), ConfigError);
    CHECK_THROWS_AS(kv("a.b = 1\na.b = 2\n"), ConfigError);
    CHECK_THROWS_AS(kv("novalue\n"), ConfigError);
    CHECK_THROWS_AS(kv("nosection = 1\n"), ConfigError);
    CHECK_THROWS_AS(kv(".b = 1\n"), ConfigError);
    CHECK_THROWS_AS(KeyValueFile::load("/nonexistent/marsim.cfg"), ConfigError);
}

TEST_CASE("defaults") {
    const PipelineConfig c = parse("");
    CHECK(c.phantom.dims == Dims{60, 50, 50});
    CHECK(c.phantom.spacing == Spacing{0.2f, 0.2f, 0.2f});
    CHECK(c.simulation.scatter_enabled);
    CHECK(!c.simulation.alpha_r.has_value());
    CHECK(c.dataset.n_volumes == 20);
    CHECK(c.dataset.out_dir == std::filesystem::path("/base/dataset"));
    CHECK(c.geometry.n_views == 360);
    const FanBeamGeometry g = c.slice_geometry();
    CHECK(g.n_views == 360);
    CHECK(g.n_detectors == 120);
    const RoiFootprint roi = c.roi_footprint();
    const Vec3 insert = head_insert_center(c.scatter.head_dims, c.scatter.head_spacing);
    CHECK(roi.center_x_mm == insert.x);
    CHECK(roi.center_y_mm == insert.y);
    CHECK(roi.radius_mm == doctest::Approx(0.5 * std::hypot(12.0, 10.0)).epsilon(1e-6));
}

TEST_CASE("values and relative paths") {
    const PipelineConfig c = parse(
        "phantom.dims = 64,56,48\n"
        "phantom.spacing_mm = 0.25\n"
        "simulation.alpha_r = 0.01\n"
        "simulation.scatter = off\n"
        "simulation.photons_per_bin = 1\n"
        "scatter.bank = banks/head.marb\n"
        "scatter.roi_x_mm = 12.5\n"
        "dataset.out_dir = out\n"
        "dataset.n_volumes = 3\n"
        "run.threads = 2\n");
    CHECK(c.phantom.dims == Dims{64, 56, 48});
    CHECK(c.phantom.spacing == Spacing{0.25f, 0.25f, 0.25f});
    REQUIRE(c.simulation.alpha_r.has_value());
    CHECK(*c.simulation.alpha_r == 0.01);
    CHECK(!c.simulation.scatter_enabled);
    CHECK(c.simulation.photons_per_bin == 1.0);
    CHECK(c.scatter_bank == std::filesystem::path("/base/banks/head.marb"));
    CHECK(c.scatter.roi_x_mm == 12.5);
    CHECK(std::isnan(c.scatter.roi_y_mm));
    CHECK(c.dataset.out_dir == std::filesystem::path("/base/out"));
    CHECK(c.threads == 2);
    CHECK(parse("dataset.out_dir = /abs/dir\n").dataset.out_dir == std::filesystem::path("/abs/dir"));
}

TEST_CASE("rejections") {
    CHECK_THROWS_AS(parse("phantom.colour = red\n"), ConfigError);
    CHECK_THROWS_AS(parse("phantom.dims = 1,2\n"), ConfigError);
    CHECK_THROWS_AS(parse("phantom.dims = 0,2,3\n"), ConfigError);
    CHECK_THROWS_AS(parse("geometry.n_views = -4\n"), ConfigError);
    CHECK_THROWS_AS(parse("geometry.n_views = 2\n"), ConfigError);
    CHECK_THROWS_AS(parse("simulation.noise_sigma2 = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse("simulation.noise_sigma2 = 1.0x\n"), ConfigError);
    CHECK_THROWS_AS(parse("simulation.scatter = maybe\n"), ConfigError);
    CHECK_THROWS_AS(parse("simulation.alpha_r = 0.5\n"), ConfigError);
    CHECK_THROWS_AS(parse("scatter.max_scatters = 4\n"), ConfigError);
    CHECK_THROWS_AS(parse("scatter.estimator = adjoint\n"), ConfigError);
    CHECK(parse("scatter.estimator = analog\n").scatter.estimator == "analog");
    CHECK_THROWS_AS(parse("scatter.head_dims = 32,32,32\n"), ConfigError);
    CHECK_THROWS_AS(parse("dataset.n_volumes = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse("phantom.randomization = 1.0\n"), ConfigError);
    CHECK_THROWS_AS(parse("simulation.spectrum = 50:1,notanumber\n"), ConfigError);
    CHECK_THROWS_AS(parse("quality.retinex_sigma = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse("phantom.basal_radius_mm = 6.5\n"), ConfigError);
}

TEST_CASE("default_config_text parses back to the defaults") {
    const std::string text = default_config_text();
    const KeyValueFile f = kv(text);
    CHECK(f.values().size() >= 35);
    const PipelineConfig d;
    const PipelineConfig c = parse_pipeline_config(f, "/base");
    CHECK(c.phantom.dims == d.phantom.dims);
    CHECK(c.phantom.spacing == d.phantom.spacing);
    CHECK(c.phantom.spiral.basal_radius_mm == doctest::Approx(d.phantom.spiral.basal_radius_mm));
    CHECK(c.phantom.spiral.turns == doctest::Approx(d.phantom.spiral.turns));
    CHECK(c.electrode.count == d.electrode.count);
    CHECK(c.geometry.n_views == d.geometry.n_views);
    CHECK(c.simulation.spectrum.samples().size() == d.simulation.spectrum.samples().size());
    CHECK(c.simulation.spectrum.mean_energy() == doctest::Approx(d.simulation.spectrum.mean_energy()).epsilon(1e-6));
    CHECK(c.simulation.scatter_enabled == d.simulation.scatter_enabled);
    CHECK(c.simulation.noise_sigma2 == d.simulation.noise_sigma2);
    CHECK(c.simulation.photons_per_bin == d.simulation.photons_per_bin);
    CHECK(c.scatter.n_histories == d.scatter.n_histories);
    CHECK(c.scatter.head_dims == d.scatter.head_dims);
    CHECK(c.dataset.n_volumes == d.dataset.n_volumes);
    CHECK(c.dataset.out_dir == std::filesystem::path("/base/dataset"));
    CHECK(c.water_table == d.water_table);
    CHECK(c.scatter_bank.empty());
}

TEST_CASE("load checks referenced files") {
    const auto dir = test::temp_dir("config");
    {
        std::ofstream(dir / "ok.cfg") << "dataset.n_volumes = 2\n";
        std::ofstream(dir / "missing.cfg") << "scatter.bank = nope.marb\n";
    }
    const PipelineConfig c = load_pipeline_config(dir / "ok.cfg");
    CHECK(c.dataset.n_volumes == 2);
    CHECK(c.dataset.out_dir == dir / "dataset");
    CHECK_THROWS_AS(load_pipeline_config(dir / "missing.cfg"), ConfigError);
}
