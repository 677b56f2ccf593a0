#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "marsim/phantom.hpp"
#include "marsim/physics.hpp"
#include "marsim/volume.hpp"

namespace marsim {

/// Flat `section.key = value` file; '#' starts a comment.
class KeyValueFile {
public:
    static KeyValueFile parse(std::istream& in);
    static KeyValueFile load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    const std::string& get(const std::string& key) const;
    const std::map<std::string, std::string>& values() const { return values_; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

private:
    std::map<std::string, std::string> values_;
};

struct PhantomParams {
    CochleaSpiral spiral;
    Dims dims{60, 50, 50};
    Spacing spacing{0.2f, 0.2f, 0.2f};
    /// Relative jitter of basal radius, turns and height per generated volume.
    double randomization = 0.15;
};

struct ElectrodeParams {
    std::uint32_t count = 12;
    double pitch_mm = 1.0;
    double start_mm = 1.0;
    /// SDF threshold of the implant body mask.
    double body_threshold_mm = -0.15;
};

struct GeometryParams {
    std::uint32_t n_views = 360;
    /// 0: twice the larger slice dimension.
    std::uint32_t n_detectors = 0;
    /// 0: twice the slice diagonal.
    double source_to_iso_mm = 0.0;
};

struct ScatterParams {
    Dims head_dims{64, 64, 64};
    Spacing head_spacing{3.0f, 3.0f, 3.0f};
    std::uint32_t n_views = 180;
    std::uint64_t n_histories = 1000000;
    std::uint64_t seed = 7;
    int max_scatters = 1;
    bool photoelectric = true;
    /// analog or forced
    std::string estimator = "forced";
    /// ROI footprint in the bank plane; NaN center means "the head phantom's insert".
    double roi_x_mm;
    double roi_y_mm;
    /// 0: half diagonal of the ROI slice.
    double roi_radius_mm = 0.0;
    std::uint32_t view_offsets = 0;

    ScatterParams();
};

struct DatasetParams {
    std::uint32_t n_volumes = 20;
    std::filesystem::path out_dir = "dataset";
    std::uint64_t seed = 1;
};

struct PipelineConfig {
    PhantomParams phantom;
    ElectrodeParams electrode;
    GeometryParams geometry;
    SimulationConfig simulation = [] {
        SimulationConfig s;
        s.scatter_enabled = true;
        return s;
    }();
    ScatterParams scatter;
    DatasetParams dataset;
    std::filesystem::path water_table = WaterTable::standard_path();
    std::filesystem::path scatter_bank;
    float metal_threshold_hu = 2500.0f;
    double retinex_sigma = 3.0;
    /// 0: hardware concurrency.
    unsigned threads = 0;

    /// Checks ranges; with check_files also that referenced files exist.
    void validate(bool check_files) const;

    FanBeamGeometry slice_geometry() const;
    RoiFootprint roi_footprint() const;
};

/// Parse a pipeline config. Relative paths resolve against base_dir. Unknown keys are
/// rejected with ConfigError.
PipelineConfig parse_pipeline_config(const KeyValueFile& file, const std::filesystem::path& base_dir);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

/// Every recognized key with its default value, in config file syntax.
std::string default_config_text();

}  // namespace marsim
