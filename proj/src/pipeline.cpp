#include "marsim/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "marsim/baselines.hpp"
#include "marsim/error.hpp"
#include "marsim/parallel.hpp"
#include "marsim/phantom.hpp"
#include "marsim/physics.hpp"
#include "marsim/rng.hpp"
#include "marsim/volume_io.hpp"

namespace marsim {

// --- manifest -------------------------------------------------------------------------

Manifest Manifest::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(ParseErrorCode::CannotOpen, "cannot open manifest " + path.string());
    Manifest m;
    m.dir = path.parent_path();
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line.rfind("# failed ", 0) == 0) {
            ManifestEntry e;
            const auto colon = line.find(':');
            try {
                e.index = std::uint32_t(std::stoul(line.substr(9, colon - 9)));
            } catch (const std::logic_error&) {
                throw ParseError(ParseErrorCode::InvalidData, "manifest line " + std::to_string(line_no) + ": bad index");
            }
            e.error = colon == std::string::npos ? "failed" : line.substr(colon + 2);
            if (e.error.empty()) e.error = "failed";
            m.entries.push_back(e);
            continue;
        }
        if (line[0] == '#') continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string item;
        while (std::getline(ss, item, '\t')) f.push_back(item);
        if (f.size() != 6)
            throw ParseError(ParseErrorCode::InvalidData,
                             "manifest line " + std::to_string(line_no) + ": expected 6 tab-separated fields");
        ManifestEntry e;
        try {
            e.index = std::uint32_t(std::stoul(f[0]));
            e.alpha_r = std::stod(f[4]);
            e.seed = std::stoull(f[5]);
        } catch (const std::logic_error&) {
            throw ParseError(ParseErrorCode::InvalidData, "manifest line " + std::to_string(line_no) + ": bad number");
        }
        e.clean = f[1];
        e.artifact = f[2];
        e.target = f[3];
        m.entries.push_back(e);
    }
    return m;
}

void Manifest::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest " + path.string());
    out << "# index\tclean\tartifact\ttarget\talpha_r\tseed\n";
    char buf[64];
    for (const auto& e : entries) {
        if (!e.ok()) {
            std::string msg = e.error;
            for (char& c : msg)
                if (c == '\n' || c == '\t') c = ' ';
            out << "# failed " << e.index << ": " << msg << "\n";
            continue;
        }
        std::snprintf(buf, sizeof buf, "%.17g", e.alpha_r);
        out << e.index << '\t' << e.clean << '\t' << e.artifact << '\t' << e.target << '\t' << buf << '\t' << e.seed
            << '\n';
    }
    if (!out) throw Error("failed writing manifest " + path.string());
}

// --- generation -----------------------------------------------------------------------

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint32_t index) { return mix_seed(dataset_seed, index); }

CochleaSpiral randomized_spiral(const CochleaSpiral& base, double randomization, std::uint64_t seed) {
    CounterRng rng(seed, 0x5917a1);
    auto jitter = [&] { return 1.0 + randomization * (2.0 * rng.uniform() - 1.0); };
    CochleaSpiral s = base;
    s.basal_radius_mm *= jitter();
    s.turns = std::min(3.0, s.turns * jitter());
    s.height_mm *= jitter();
    return s;
}

SampleVolumes generate_sample(const PipelineConfig& cfg, std::uint32_t index, const WaterTable& water,
                              const ScatterBank* bank) {
    const std::uint64_t seed = sample_seed(cfg.dataset.seed, index);
    const Dims dims = cfg.phantom.dims;
    const Spacing sp = cfg.phantom.spacing;
    const CochleaSpiral spiral = randomized_spiral(cfg.phantom.spiral, cfg.phantom.randomization, mix_seed(seed, 1));

    const auto line = sample_centerline(spiral, dims, sp);
    const Volume3D sdf = signed_distance(line, spiral.duct_radius_mm, dims, sp);
    Volume3D clean = make_cochlea_volume(spiral, sdf);
    const Volume3D body = electrode_mask(sdf, cfg.electrode.body_threshold_mm);
    const Volume3D with_metal = insert_metal(clean, body);
    const ElectrodeArray electrodes =
        place_electrodes(spiral, dims, sp, cfg.electrode.count, cfg.electrode.pitch_mm, cfg.electrode.start_mm);
    Volume3D target = augment_target(clean, electrodes);

    SimulationConfig sim = cfg.simulation;
    sim.rng_seed = seed;
    sim.geometry = cfg.slice_geometry();
    sim.roi = cfg.roi_footprint();
    const double alpha = resolve_alpha(sim);
    sim.alpha_r = alpha;
    Volume3D artifact = simulate_artifacts(with_metal, sim, water, bank);
    return {std::move(clean), std::move(artifact), std::move(target), alpha, seed};
}

ScatterBank build_scatter_bank(const PipelineConfig& cfg) {
    const MaterialPhantom head = make_head_phantom(cfg.scatter.head_dims, cfg.scatter.head_spacing);
    TraceOptions opt;
    opt.max_scatters = cfg.scatter.max_scatters;
    opt.photoelectric = cfg.scatter.photoelectric;
    opt.estimator = parse_scatter_estimator(cfg.scatter.estimator);
    opt.phantom_id = kPhantomIdHead;
    return trace_photons(head, bank_geometry_for(head, cfg.scatter.n_views), cfg.simulation.spectrum,
                         WaterTable::load(cfg.water_table), cfg.scatter.n_histories, cfg.scatter.seed, opt);
}

Manifest cmd_generate(const PipelineConfig& cfg) {
    cfg.validate(true);
    const WaterTable water = WaterTable::load(cfg.water_table);
    std::optional<ScatterBank> bank;
    if (cfg.simulation.scatter_enabled)
        bank = cfg.scatter_bank.empty() ? build_scatter_bank(cfg) : read_scatter_bank(cfg.scatter_bank);

    const auto& dir = cfg.dataset.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw Error("cannot create output directory " + dir.string());

    Manifest m;
    m.dir = dir;
    m.entries.resize(cfg.dataset.n_volumes);
    parallel_for(cfg.dataset.n_volumes, [&](std::size_t i) {
        ManifestEntry& e = m.entries[i];
        e.index = std::uint32_t(i);
        char stem[32];
        std::snprintf(stem, sizeof stem, "%04u", unsigned(i));
        try {
            const SampleVolumes s = generate_sample(cfg, std::uint32_t(i), water, bank ? &*bank : nullptr);
            e.clean = std::string("clean_") + stem + ".marv";
            e.artifact = std::string("artifact_") + stem + ".marv";
            e.target = std::string("target_") + stem + ".marv";
            write_volume(s.clean, dir / e.clean);
            write_volume(s.artifact, dir / e.artifact);
            write_volume(s.target, dir / e.target);
            e.alpha_r = s.alpha_r;
            e.seed = s.seed;
        } catch (const Error& ex) {
            e = ManifestEntry{};
            e.index = std::uint32_t(i);
            e.error = ex.what();
        }
    });
    m.write(dir / kManifestName);
    return m;
}

// --- evaluation -----------------------------------------------------------------------

namespace {

MetricRow skipped_row(const std::string& id, const std::string& method) {
    MetricRow r;
    r.volume_id = id;
    r.method = method;
    r.skipped = true;
    return r;
}

}  // namespace

EvaluationResult cmd_evaluate(const Manifest& manifest, const EvaluateOptions& options) {
    std::vector<BaselineMethod> baselines;
    bool external = false;
    for (const auto& m : options.methods) {
        if (m == "external") external = true;
        else baselines.push_back(parse_baseline_method(m));
    }
    if (external && options.external_dir.empty()) throw ConfigError("method 'external' needs an external directory");

    const WaterTable water = options.config ? WaterTable::load(options.config->water_table) : WaterTable::standard();
    BaselineSettings settings;
    if (options.config) {
        settings.metal_threshold_hu = options.config->metal_threshold_hu;
        settings.reference_energy_kev = options.config->simulation.spectrum.mean_energy();
        settings.geometry = options.config->slice_geometry();
    }

    EvaluationResult result;
    std::vector<std::string> methods{kUntreatedMethod};
    for (const auto& m : options.methods) methods.push_back(m);

    for (const auto& e : manifest.entries) {
        if (!e.ok()) continue;
        const std::string id = std::to_string(e.index);
        const Volume3D clean = read_volume(manifest.resolve(e.clean));
        const Volume3D artifact = read_volume(manifest.resolve(e.artifact));
        require_same_grid(clean, artifact, "evaluate");
        const Volume3D ref = normalize_for_metrics(clean);
        result.rows.push_back({id, kUntreatedMethod, metrics(normalize_for_metrics(artifact), ref), false});

        std::vector<Volume3D> corrected;
        if (!baselines.empty()) corrected = run_baselines(baselines, artifact, water, settings);
        std::size_t bi = 0;
        for (const auto& m : options.methods) {
            if (m != "external") {
                result.rows.push_back({id, m, metrics(normalize_for_metrics(corrected[bi++]), ref), false});
                continue;
            }
            const auto path = options.external_dir / (id + ".marv");
            if (!std::filesystem::is_regular_file(path)) {
                result.rows.push_back(skipped_row(id, m));
                continue;
            }
            const Volume3D ext = read_volume(path);
            if (!(ext.dims() == clean.dims()) ||
                (ext.kind() != VolumeKind::HU && ext.kind() != VolumeKind::Normalized)) {
                result.rows.push_back(skipped_row(id, m));
                continue;
            }
            const Volume3D norm = ext.kind() == VolumeKind::HU ? normalize_for_metrics(ext)
                                                              : ext.with_values(ext.values(), VolumeKind::Normalized);
            result.rows.push_back({id, m, metrics(norm, ref), false});
        }
    }

    std::map<std::string, double> untreated_rmse;
    for (const auto& r : result.rows)
        if (r.method == kUntreatedMethod) untreated_rmse[r.volume_id] = r.report.rmse;
    for (const auto& m : methods) {
        MetricRow agg;
        agg.volume_id = "mean";
        agg.method = m;
        std::size_t n = 0, improved = 0;
        for (const auto& r : result.rows) {
            if (r.method != m || r.skipped) continue;
            agg.report.psnr_db += r.report.psnr_db;
            agg.report.rmse += r.report.rmse;
            agg.report.ssim += r.report.ssim;
            improved += r.report.rmse <= untreated_rmse[r.volume_id];
            ++n;
        }
        if (n == 0) {
            agg.skipped = true;
        } else {
            agg.report.psnr_db /= double(n);
            agg.report.rmse /= double(n);
            agg.report.ssim /= double(n);
            agg.report.identical = agg.report.rmse == 0.0;
        }
        if (m != kUntreatedMethod) result.improved_fraction[m] = n ? double(improved) / double(n) : 0.0;
        result.aggregate.push_back(agg);
    }
    return result;
}

void write_metric_table(const EvaluationResult& result, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "volume_id,method,psnr,rmse,ssim\n";
    char buf[128];
    auto emit = [&](const MetricRow& r) {
        if (r.skipped) {
            out << r.volume_id << ',' << r.method << ",skipped,skipped,skipped\n";
            return;
        }
        std::snprintf(buf, sizeof buf, "%.6f,%.8f,%.8f", r.report.psnr_db, r.report.rmse, r.report.ssim);
        out << r.volume_id << ',' << r.method << ',' << buf << '\n';
    };
    for (const auto& r : result.rows) emit(r);
    for (const auto& r : result.aggregate) emit(r);
    if (!out) throw Error("failed writing " + path.string());
}

void write_slice_table(const EvaluationResult& result, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << "volume_id,method,slice,psnr,rmse,ssim\n";
    char buf[128];
    for (const auto& r : result.rows) {
        if (r.skipped) continue;
        for (std::size_t z = 0; z < r.report.per_slice.size(); ++z) {
            const auto& s = r.report.per_slice[z];
            std::snprintf(buf, sizeof buf, "%zu,%.6f,%.8f,%.8f", z, s.psnr_db, s.rmse, s.ssim);
            out << r.volume_id << ',' << r.method << ',' << buf << '\n';
        }
    }
    if (!out) throw Error("failed writing " + path.string());
}

// --- slice export ---------------------------------------------------------------------

std::uint8_t hu_to_pixel(float hu) {
    const double v = (std::clamp(double(hu), -1000.0, 3071.0) + 1000.0) / 4071.0 * 255.0;
    return std::uint8_t(std::lround(v));
}

std::vector<std::filesystem::path> cmd_export_slices(const Volume3D& vol, char axis,
                                                     const std::vector<std::uint32_t>& indices,
                                                     const std::filesystem::path& out_dir, const std::string& stem) {
    if (vol.kind() != VolumeKind::HU) throw ArgumentError("slice export expects an HU volume");
    const Dims d = vol.dims();
    std::uint32_t limit, w, h;
    switch (axis) {
        case 'x': limit = d.nx; w = d.ny; h = d.nz; break;
        case 'y': limit = d.ny; w = d.nx; h = d.nz; break;
        case 'z': limit = d.nz; w = d.nx; h = d.ny; break;
        default: throw ArgumentError(std::string("unknown axis '") + axis + "' (expected x, y or z)");
    }
    for (auto i : indices)
        if (i >= limit) throw ArgumentError("slice index " + std::to_string(i) + " out of range along " + axis);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);

    std::vector<std::filesystem::path> written;
    for (auto idx : indices) {
        std::vector<std::uint8_t> pix(std::size_t(w) * h);
        for (std::uint32_t r = 0; r < h; ++r)
            for (std::uint32_t c = 0; c < w; ++c) {
                float v;
                if (axis == 'x') v = vol.at(idx, c, r);
                else if (axis == 'y') v = vol.at(c, idx, r);
                else v = vol.at(c, r, idx);
                pix[std::size_t(r) * w + c] = hu_to_pixel(v);
            }
        const auto path = out_dir / (stem + "_" + axis + std::to_string(idx) + ".pgm");
        const std::string header = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
        std::vector<std::uint8_t> bytes(header.begin(), header.end());
        bytes.insert(bytes.end(), pix.begin(), pix.end());
        write_file_bytes(path, bytes);
        written.push_back(path);
    }
    return written;
}

}  // namespace marsim
