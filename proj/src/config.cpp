#include "marsim/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "marsim/error.hpp"
#include "marsim/scatter.hpp"

namespace marsim {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError(key + ": cannot parse '" + value + "' as " + expected);
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an unsigned integer");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) bad_value(key, v, "a finite number");
        return d;
    } catch (const std::logic_error&) {
        bad_value(key, v, "a finite number");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "a boolean");
}

Dims parse_dims(const std::string& key, const std::string& v) {
    const auto parts = split(v, ',');
    if (parts.size() != 3) bad_value(key, v, "nx,ny,nz");
    return {parse_integer<std::uint32_t>(key, parts[0]), parse_integer<std::uint32_t>(key, parts[1]),
            parse_integer<std::uint32_t>(key, parts[2])};
}

Spacing parse_spacing(const std::string& key, const std::string& v) {
    const auto parts = split(v, ',');
    if (parts.size() == 1) {
        const auto s = float(parse_double(key, parts[0]));
        return {s, s, s};
    }
    if (parts.size() != 3) bad_value(key, v, "sx,sy,sz");
    return {float(parse_double(key, parts[0])), float(parse_double(key, parts[1])), float(parse_double(key, parts[2]))};
}

std::filesystem::path parse_path(const std::string& v, const std::filesystem::path& base) {
    if (v.empty()) return {};
    const std::filesystem::path p(v);
    return p.is_absolute() ? p : base / p;
}

}  // namespace

// --- key/value file -------------------------------------------------------------------

KeyValueFile KeyValueFile::parse(std::istream& in) {
    KeyValueFile f;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected 'section.key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.')
            throw ConfigError("line " + std::to_string(line_no) + ": key '" + key + "' must look like section.key");
        if (f.values_.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
        f.values_[key] = value;
    }
    return f;
}

KeyValueFile KeyValueFile::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    return parse(in);
}

const std::string& KeyValueFile::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("missing key " + key);
    return it->second;
}

// --- pipeline config ------------------------------------------------------------------

ScatterParams::ScatterParams()
    : roi_x_mm(std::numeric_limits<double>::quiet_NaN()), roi_y_mm(std::numeric_limits<double>::quiet_NaN()) {}

void PipelineConfig::validate(bool check_files) const {
    try {
        phantom.spiral.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("phantom: ") + e.what());
    }
    if (phantom.dims.count() == 0) throw ConfigError("phantom.dims must be positive");
    if (!(phantom.spacing.sx > 0.0f && phantom.spacing.sy > 0.0f && phantom.spacing.sz > 0.0f))
        throw ConfigError("phantom.spacing_mm must be positive");
    if (!(phantom.randomization >= 0.0 && phantom.randomization < 1.0))
        throw ConfigError("phantom.randomization must lie in [0, 1)");
    // nominal spiral only; jittered ones can still fail per sample
    const double r = phantom.spiral.duct_radius_mm;
    const Vec3 hi{phantom.dims.nx * double(phantom.spacing.sx), phantom.dims.ny * double(phantom.spacing.sy),
                  phantom.dims.nz * double(phantom.spacing.sz)};
    for (const Vec3& p : sample_centerline(phantom.spiral, phantom.dims, phantom.spacing))
        if (p.x - r < 0.0 || p.y - r < 0.0 || p.z - r < 0.0 || p.x + r > hi.x || p.y + r > hi.y || p.z + r > hi.z)
            throw ConfigError("phantom: cochlea duct does not fit inside the grid");
    if (electrode.count > 0 && !(electrode.pitch_mm > 0.0)) throw ConfigError("electrode.pitch_mm must be positive");
    if (!(electrode.start_mm >= 0.0)) throw ConfigError("electrode.start_mm must be >= 0");
    if (geometry.n_views < 4) throw ConfigError("geometry.n_views must be >= 4");
    if (geometry.source_to_iso_mm < 0.0) throw ConfigError("geometry.source_to_iso_mm must be >= 0");
    try {
        simulation.validate();
    } catch (const ArgumentError& e) {
        throw ConfigError(std::string("simulation: ") + e.what());
    }
    if (scatter.n_views < 4) throw ConfigError("scatter.n_views must be >= 4");
    if (scatter.n_histories < 1) throw ConfigError("scatter.n_histories must be >= 1");
    if (scatter.max_scatters < 1 || scatter.max_scatters > 3) throw ConfigError("scatter.max_scatters must be 1..3");
    if (scatter.estimator != "analog" && scatter.estimator != "forced")
        throw ConfigError("scatter.estimator must be analog or forced");
    if (scatter.head_dims.nx < 64 || scatter.head_dims.ny < 64 || scatter.head_dims.nz < 64)
        throw ConfigError("scatter.head_dims must be at least 64 per axis");
    if (scatter.roi_radius_mm < 0.0) throw ConfigError("scatter.roi_radius_mm must be >= 0");
    if (dataset.n_volumes < 1) throw ConfigError("dataset.n_volumes must be >= 1");
    if (dataset.out_dir.empty()) throw ConfigError("dataset.out_dir must be set");
    if (!(retinex_sigma > 0.0)) throw ConfigError("quality.retinex_sigma must be positive");
    try {
        (void)slice_geometry();
    } catch (const GeometryError& e) {
        throw ConfigError(std::string("geometry: ") + e.what());
    }
    if (check_files) {
        if (!std::filesystem::is_regular_file(water_table))
            throw ConfigError("water table not found: " + water_table.string());
        if (!scatter_bank.empty() && !std::filesystem::is_regular_file(scatter_bank))
            throw ConfigError("scatter bank not found: " + scatter_bank.string());
    }
}

FanBeamGeometry PipelineConfig::slice_geometry() const {
    FanBeamGeometry g = FanBeamGeometry::for_slice(phantom.dims.nx, phantom.dims.ny, phantom.spacing.sx,
                                                   phantom.spacing.sy, geometry.n_views, geometry.n_detectors,
                                                   geometry.source_to_iso_mm);
    g.validate();
    return g;
}

RoiFootprint PipelineConfig::roi_footprint() const {
    RoiFootprint r;
    const Vec3 insert = head_insert_center(scatter.head_dims, scatter.head_spacing);
    r.center_x_mm = std::isnan(scatter.roi_x_mm) ? insert.x : scatter.roi_x_mm;
    r.center_y_mm = std::isnan(scatter.roi_y_mm) ? insert.y : scatter.roi_y_mm;
    r.radius_mm = scatter.roi_radius_mm > 0.0
                      ? scatter.roi_radius_mm
                      : 0.5 * std::hypot(phantom.dims.nx * double(phantom.spacing.sx),
                                         phantom.dims.ny * double(phantom.spacing.sy));
    r.view_offsets = scatter.view_offsets;
    return r;
}

PipelineConfig parse_pipeline_config(const KeyValueFile& file, const std::filesystem::path& base_dir) {
    PipelineConfig c;
    std::string spectrum_text;
    double peak_kvp = c.simulation.spectrum.peak_kvp();
    std::set<std::string> seen;
    for (const auto& [key, v] : file.values()) {
        seen.insert(key);
        auto u32 = [&] { return parse_integer<std::uint32_t>(key, v); };
        auto u64 = [&] { return parse_integer<std::uint64_t>(key, v); };
        auto dbl = [&] { return parse_double(key, v); };
        auto roi = [&] { return v == "insert" ? std::numeric_limits<double>::quiet_NaN() : dbl(); };

        if (key == "phantom.dims") c.phantom.dims = parse_dims(key, v);
        else if (key == "phantom.spacing_mm") c.phantom.spacing = parse_spacing(key, v);
        else if (key == "phantom.basal_radius_mm") c.phantom.spiral.basal_radius_mm = dbl();
        else if (key == "phantom.taper_rate") c.phantom.spiral.taper_rate = dbl();
        else if (key == "phantom.turns") c.phantom.spiral.turns = dbl();
        else if (key == "phantom.height_mm") c.phantom.spiral.height_mm = dbl();
        else if (key == "phantom.duct_radius_mm") c.phantom.spiral.duct_radius_mm = dbl();
        else if (key == "phantom.randomization") c.phantom.randomization = dbl();
        else if (key == "electrode.count") c.electrode.count = u32();
        else if (key == "electrode.pitch_mm") c.electrode.pitch_mm = dbl();
        else if (key == "electrode.start_mm") c.electrode.start_mm = dbl();
        else if (key == "electrode.body_threshold_mm") c.electrode.body_threshold_mm = dbl();
        else if (key == "geometry.n_views") c.geometry.n_views = u32();
        else if (key == "geometry.n_detectors") c.geometry.n_detectors = u32();
        else if (key == "geometry.source_to_iso_mm") c.geometry.source_to_iso_mm = dbl();
        else if (key == "simulation.spectrum") spectrum_text = v;
        else if (key == "simulation.peak_kvp") peak_kvp = dbl();
        else if (key == "simulation.scatter") c.simulation.scatter_enabled = parse_bool(key, v);
        else if (key == "simulation.alpha_r") {
            if (v == "random") c.simulation.alpha_r.reset();
            else c.simulation.alpha_r = dbl();
        } else if (key == "simulation.noise_sigma2") c.simulation.noise_sigma2 = dbl();
        else if (key == "simulation.photons_per_bin") c.simulation.photons_per_bin = dbl();
        else if (key == "scatter.bank") c.scatter_bank = parse_path(v, base_dir);
        else if (key == "scatter.head_dims") c.scatter.head_dims = parse_dims(key, v);
        else if (key == "scatter.head_spacing_mm") c.scatter.head_spacing = parse_spacing(key, v);
        else if (key == "scatter.n_views") c.scatter.n_views = u32();
        else if (key == "scatter.n_histories") c.scatter.n_histories = u64();
        else if (key == "scatter.seed") c.scatter.seed = u64();
        else if (key == "scatter.max_scatters") c.scatter.max_scatters = int(u32());
        else if (key == "scatter.photoelectric") c.scatter.photoelectric = parse_bool(key, v);
        else if (key == "scatter.estimator") c.scatter.estimator = v;
        else if (key == "scatter.roi_x_mm") c.scatter.roi_x_mm = roi();
        else if (key == "scatter.roi_y_mm") c.scatter.roi_y_mm = roi();
        else if (key == "scatter.roi_radius_mm") c.scatter.roi_radius_mm = dbl();
        else if (key == "scatter.view_offsets") c.scatter.view_offsets = u32();
        else if (key == "dataset.n_volumes") c.dataset.n_volumes = u32();
        else if (key == "dataset.out_dir") c.dataset.out_dir = parse_path(v, base_dir);
        else if (key == "dataset.seed") c.dataset.seed = u64();
        else if (key == "paths.water_table") c.water_table = parse_path(v, base_dir);
        else if (key == "baseline.metal_threshold_hu") c.metal_threshold_hu = float(dbl());
        else if (key == "quality.retinex_sigma") c.retinex_sigma = dbl();
        else if (key == "run.threads") c.threads = u32();
        else throw ConfigError("unknown config key '" + key + "'");
    }
    if (!spectrum_text.empty() || seen.count("simulation.peak_kvp")) {
        try {
            c.simulation.spectrum = spectrum_text.empty()
                                        ? EnergySpectrum({c.simulation.spectrum.samples().begin(), c.simulation.spectrum.samples().end()}, peak_kvp)
                                        : EnergySpectrum::parse(spectrum_text, peak_kvp);
        } catch (const Error& e) {
            throw ConfigError(std::string("simulation.spectrum: ") + e.what());
        }
    }
    if (!seen.count("dataset.out_dir")) c.dataset.out_dir = base_dir / c.dataset.out_dir;
    c.validate(false);
    return c;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
    PipelineConfig c = parse_pipeline_config(KeyValueFile::load(path), path.parent_path());
    c.validate(true);
    return c;
}

std::string default_config_text() {
    const PipelineConfig c;
    std::ostringstream o;
    o << "# phantom: synthetic cochlea ROI\n"
      << "phantom.dims = " << c.phantom.dims.nx << "," << c.phantom.dims.ny << "," << c.phantom.dims.nz << "\n"
      << "phantom.spacing_mm = " << c.phantom.spacing.sx << "," << c.phantom.spacing.sy << "," << c.phantom.spacing.sz << "\n"
      << "phantom.basal_radius_mm = " << c.phantom.spiral.basal_radius_mm << "\n"
      << "phantom.taper_rate = " << c.phantom.spiral.taper_rate << "\n"
      << "phantom.turns = " << c.phantom.spiral.turns << "\n"
      << "phantom.height_mm = " << c.phantom.spiral.height_mm << "\n"
      << "phantom.duct_radius_mm = " << c.phantom.spiral.duct_radius_mm << "\n"
      << "phantom.randomization = " << c.phantom.randomization << "\n"
      << "\n# electrode array\n"
      << "electrode.count = " << c.electrode.count << "\n"
      << "electrode.pitch_mm = " << c.electrode.pitch_mm << "\n"
      << "electrode.start_mm = " << c.electrode.start_mm << "\n"
      << "electrode.body_threshold_mm = " << c.electrode.body_threshold_mm << "\n"
      << "\n# fan-beam geometry (0 = derive from the slice size)\n"
      << "geometry.n_views = " << c.geometry.n_views << "\n"
      << "geometry.n_detectors = " << c.geometry.n_detectors << "\n"
      << "geometry.source_to_iso_mm = " << c.geometry.source_to_iso_mm << "\n"
      << "\n# detector model\n"
      << "simulation.spectrum = " << c.simulation.spectrum.to_string() << "\n"
      << "simulation.peak_kvp = " << c.simulation.spectrum.peak_kvp() << "\n"
      << "simulation.scatter = " << (c.simulation.scatter_enabled ? "true" : "false") << "\n"
      << "simulation.alpha_r = random\n"
      << "simulation.noise_sigma2 = " << c.simulation.noise_sigma2 << "\n"
      << "simulation.photons_per_bin = " << c.simulation.photons_per_bin << "\n"
      << "\n# scatter bank (empty bank path: trace one in memory)\n"
      << "scatter.bank =\n"
      << "scatter.head_dims = " << c.scatter.head_dims.nx << "," << c.scatter.head_dims.ny << "," << c.scatter.head_dims.nz << "\n"
      << "scatter.head_spacing_mm = " << c.scatter.head_spacing.sx << "," << c.scatter.head_spacing.sy << "," << c.scatter.head_spacing.sz << "\n"
      << "scatter.n_views = " << c.scatter.n_views << "\n"
      << "scatter.n_histories = " << c.scatter.n_histories << "\n"
      << "scatter.seed = " << c.scatter.seed << "\n"
      << "scatter.max_scatters = " << c.scatter.max_scatters << "\n"
      << "scatter.photoelectric = " << (c.scatter.photoelectric ? "true" : "false") << "\n"
      << "scatter.estimator = " << c.scatter.estimator << "\n"
      << "scatter.roi_x_mm = insert\n"
      << "scatter.roi_y_mm = insert\n"
      << "scatter.roi_radius_mm = " << c.scatter.roi_radius_mm << "\n"
      << "scatter.view_offsets = " << c.scatter.view_offsets << "\n"
      << "\n# dataset\n"
      << "dataset.n_volumes = " << c.dataset.n_volumes << "\n"
      << "dataset.out_dir = " << c.dataset.out_dir.string() << "\n"
      << "dataset.seed = " << c.dataset.seed << "\n"
      << "\npaths.water_table = " << c.water_table.string() << "\n"
      << "baseline.metal_threshold_hu = " << c.metal_threshold_hu << "\n"
      << "quality.retinex_sigma = " << c.retinex_sigma << "\n"
      << "run.threads = " << c.threads << "\n";
    return o.str();
}

}  // namespace marsim
