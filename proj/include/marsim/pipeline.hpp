#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "marsim/config.hpp"
#include "marsim/quality.hpp"
#include "marsim/scatter.hpp"
#include "marsim/volume.hpp"

namespace marsim {

/// One sample of a generated dataset. Paths are relative to the manifest directory.
struct ManifestEntry {
    std::uint32_t index = 0;
    std::string clean;
    std::string artifact;
    std::string target;
    double alpha_r = 0.0;
    std::uint64_t seed = 0;
    /// Non-empty when the sample failed; the file fields are then empty.
    std::string error;

    bool ok() const { return error.empty(); }
};

/// Tab-separated manifest: index, clean, artifact, target, alpha_r, seed. Failed samples
/// are recorded as "# failed <index>: <message>" lines.
struct Manifest {
    std::filesystem::path dir;
    std::vector<ManifestEntry> entries;

    static Manifest load(const std::filesystem::path& path);
    void write(const std::filesystem::path& path) const;
    std::filesystem::path resolve(const std::string& relative) const { return dir / relative; }
};

inline constexpr const char* kManifestName = "manifest.tsv";

struct SampleVolumes {
    Volume3D clean;
    Volume3D artifact;
    Volume3D target;
    double alpha_r = 0.0;
    std::uint64_t seed = 0;
};

/// Spiral with basal radius, turns and height jittered by +-randomization (seeded).
CochleaSpiral randomized_spiral(const CochleaSpiral& base, double randomization, std::uint64_t seed);

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::uint32_t index);

/// Build one clean / artifact / target triple.
SampleVolumes generate_sample(const PipelineConfig& cfg, std::uint32_t index, const WaterTable& water,
                              const ScatterBank* bank);

/// Generate the dataset described by cfg into cfg.dataset.out_dir and write the manifest.
Manifest cmd_generate(const PipelineConfig& cfg);

/// Build a scatter bank on the configured head phantom.
ScatterBank build_scatter_bank(const PipelineConfig& cfg);

struct MetricRow {
    std::string volume_id;
    std::string method;
    MetricReport report;
    bool skipped = false;
};

struct EvaluationResult {
    std::vector<MetricRow> rows;
    /// One row per method (untreated first), volume_id "mean", over non-skipped rows.
    std::vector<MetricRow> aggregate;
    /// Per method: fraction of volumes whose RMSE is <= the untreated RMSE.
    std::map<std::string, double> improved_fraction;
};

inline constexpr const char* kUntreatedMethod = "untreated";

struct EvaluateOptions {
    /// Subset of {li, bhc, nmar, external}.
    std::vector<std::string> methods{"li", "bhc", "nmar"};
    /// For "external": files named <index>.marv in this directory.
    std::filesystem::path external_dir;
    std::optional<PipelineConfig> config;
};

EvaluationResult cmd_evaluate(const Manifest& manifest, const EvaluateOptions& options);

/// CSV with header "volume_id,method,psnr,rmse,ssim": per-volume rows, then the
/// aggregate rows. Skipped rows carry "skipped" in the metric columns.
void write_metric_table(const EvaluationResult& result, const std::filesystem::path& path);
/// volume_id,method,slice,psnr,rmse,ssim
void write_slice_table(const EvaluationResult& result, const std::filesystem::path& path);

/// HU window [-1000, 3071] -> [0, 255], rounded.
std::uint8_t hu_to_pixel(float hu);

/// Write 8-bit binary PGM images of the given slices.
std::vector<std::filesystem::path> cmd_export_slices(const Volume3D& vol, char axis,
                                                     const std::vector<std::uint32_t>& indices,
                                                     const std::filesystem::path& out_dir,
                                                     const std::string& stem = "slice");

}  // namespace marsim
