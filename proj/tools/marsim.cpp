// Command-line front end: dataset generation, baseline evaluation, slice export and
// scatter-bank precomputation.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "marsim/baselines.hpp"
#include "marsim/config.hpp"
#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/pipeline.hpp"
#include "marsim/scatter.hpp"
#include "marsim/volume_io.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<std::uint32_t> parse_indices(const std::string& s) {
    std::vector<std::uint32_t> out;
    for (const auto& item : split_list(s)) {
        try {
            std::size_t used = 0;
            const unsigned long v = std::stoul(item, &used);
            if (used != item.size() || item[0] == '-') throw std::invalid_argument(item);
            out.push_back(std::uint32_t(v));
        } catch (const std::logic_error&) {
            throw marsim::ConfigError("bad slice index '" + item + "'");
        }
    }
    if (out.empty()) throw marsim::ConfigError("no slice indices given");
    return out;
}

marsim::PipelineConfig config_or_default(const std::string& path) {
    return path.empty() ? marsim::PipelineConfig{} : marsim::load_pipeline_config(path);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Metal-artifact simulation for cochlear-implant CT"};
    app.require_subcommand(1);
    app.fallthrough();
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (0: config or hardware)");

    std::string config_path, manifest_path, methods = "li,bhc,nmar", out_path, slices_path, external_dir;
    std::string method, in_path, axis = "z", indices, out_dir = ".", phantom = "head";
    std::uint64_t histories = 0, seed = 0;
    bool seed_given = false;

    auto* gen = app.add_subcommand("generate", "Generate a paired dataset from a config file");
    gen->add_option("--config", config_path, "Pipeline config")->required();

    auto* eval = app.add_subcommand("evaluate", "Run baselines on a dataset and write the metric table");
    eval->add_option("--manifest", manifest_path, "Dataset manifest")->required();
    eval->add_option("--methods", methods, "Comma list of li, bhc, nmar, external");
    eval->add_option("--out", out_path, "Metric table (CSV)")->required();
    eval->add_option("--slices", slices_path, "Per-slice metric table (CSV)");
    eval->add_option("--external-dir", external_dir, "Directory of <index>.marv outputs for 'external'");
    eval->add_option("--config", config_path, "Pipeline config (geometry, thresholds, water table)");

    auto* base = app.add_subcommand("baseline", "Apply one MAR baseline to a volume");
    base->add_option("--method", method, "li, bhc or nmar")->required();
    base->add_option("--in", in_path, "Input HU volume")->required();
    base->add_option("--out", out_path, "Output volume")->required();
    base->add_option("--config", config_path, "Pipeline config");

    auto* exp = app.add_subcommand("export-slices", "Write PGM images of volume slices");
    exp->add_option("--in", in_path, "Input HU volume")->required();
    exp->add_option("--axis", axis, "x, y or z");
    exp->add_option("--indices", indices, "Comma list of slice indices")->required();
    exp->add_option("--out-dir", out_dir, "Output directory");

    auto* bank = app.add_subcommand("scatter-bank", "Trace a scatter bank through a voxel phantom");
    bank->add_option("--phantom", phantom, "head or water");
    bank->add_option("--out", out_path, "Bank file")->required();
    bank->add_option("--config", config_path, "Pipeline config (scatter section)");
    bank->add_option("--histories", histories, "Override scatter.n_histories");
    bank->add_option("--seed", seed, "Override scatter.seed")->each([&](const std::string&) { seed_given = true; });

    app.add_subcommand("print-config", "Print every config key with its default value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitConfig;
    }

    try {
        if (app.got_subcommand("print-config")) {
            std::cout << marsim::default_config_text();
            return 0;
        }
        const marsim::PipelineConfig cfg = config_or_default(config_path);
        marsim::set_thread_count(threads ? threads : cfg.threads);

        if (*gen) {
            const auto m = marsim::cmd_generate(cfg);
            std::size_t failed = 0;
            for (const auto& e : m.entries) failed += !e.ok();
            std::printf("wrote %zu samples (%zu failed) to %s\n", m.entries.size() - failed, failed,
                        cfg.dataset.out_dir.string().c_str());
            return failed == m.entries.size() ? kExitData : 0;
        }
        if (*eval) {
            marsim::EvaluateOptions opt;
            opt.methods = split_list(methods);
            opt.external_dir = external_dir;
            if (!config_path.empty()) opt.config = cfg;
            for (const auto& m : opt.methods)
                if (m != "external") (void)marsim::parse_baseline_method(m);
            const auto result = marsim::cmd_evaluate(marsim::Manifest::load(manifest_path), opt);
            marsim::write_metric_table(result, out_path);
            if (!slices_path.empty()) marsim::write_slice_table(result, slices_path);
            for (const auto& [m, frac] : result.improved_fraction)
                std::printf("%s: rmse <= untreated on %.0f%% of volumes\n", m.c_str(), 100.0 * frac);
            return 0;
        }
        if (*base) {
            const auto which = marsim::parse_baseline_method(method);
            marsim::BaselineSettings settings;
            if (!config_path.empty()) {
                settings.metal_threshold_hu = cfg.metal_threshold_hu;
                settings.reference_energy_kev = cfg.simulation.spectrum.mean_energy();
                settings.geometry = cfg.slice_geometry();
            }
            const auto vol = marsim::read_volume(in_path);
            marsim::write_volume(marsim::run_baseline(which, vol, marsim::WaterTable::load(cfg.water_table), settings),
                                 out_path);
            return 0;
        }
        if (*exp) {
            if (axis.size() != 1) throw marsim::ConfigError("axis must be x, y or z");
            const auto vol = marsim::read_volume(in_path);
            const auto idx = parse_indices(indices);
            const marsim::Dims d = vol.dims();
            const std::uint32_t limit = axis[0] == 'x' ? d.nx : axis[0] == 'y' ? d.ny : axis[0] == 'z' ? d.nz : 0;
            if (limit == 0) throw marsim::ConfigError("axis must be x, y or z");
            for (auto i : idx)
                if (i >= limit) throw marsim::ConfigError("slice index " + std::to_string(i) + " out of range");
            for (const auto& p : marsim::cmd_export_slices(vol, axis[0], idx, out_dir))
                std::printf("%s\n", p.string().c_str());
            return 0;
        }
        if (*bank) {
            marsim::PipelineConfig c = cfg;
            if (histories) c.scatter.n_histories = histories;
            if (seed_given) c.scatter.seed = seed;
            marsim::ScatterBank b;
            if (phantom == "head") {
                b = marsim::build_scatter_bank(c);
            } else if (phantom == "water") {
                const auto ph = marsim::make_uniform_phantom(c.scatter.head_dims, c.scatter.head_spacing,
                                                             marsim::materials::kWater);
                marsim::TraceOptions opt;
                opt.max_scatters = c.scatter.max_scatters;
                opt.photoelectric = c.scatter.photoelectric;
                opt.estimator = marsim::parse_scatter_estimator(c.scatter.estimator);
                opt.phantom_id = marsim::kPhantomIdUniform;
                b = marsim::trace_photons(ph, marsim::bank_geometry_for(ph, c.scatter.n_views), c.simulation.spectrum,
                                          marsim::WaterTable::load(c.water_table), c.scatter.n_histories,
                                          c.scatter.seed, opt);
            } else {
                throw marsim::ConfigError("unknown phantom '" + phantom + "' (expected head or water)");
            }
            marsim::write_scatter_bank(b, out_path);
            std::printf("mean F %.6g, mean S~ %.6g\n", b.primary.mean(), b.scatter.mean());
            return 0;
        }
    } catch (const marsim::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitConfig;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitData;
    }
    return 0;
}
