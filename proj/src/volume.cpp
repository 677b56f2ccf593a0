#include "marsim/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "marsim/error.hpp"

namespace marsim {

const char* to_string(ParseErrorCode code) {
    switch (code) {
        case ParseErrorCode::CannotOpen: return "cannot open";
        case ParseErrorCode::BadMagic: return "bad magic";
        case ParseErrorCode::Truncated: return "truncated";
        case ParseErrorCode::ZeroDimension: return "zero dimension";
        case ParseErrorCode::DimOverflow: return "dimension overflow";
        case ParseErrorCode::BadSpacing: return "bad spacing";
        case ParseErrorCode::BadKind: return "bad kind";
        case ParseErrorCode::InvalidData: return "invalid data";
        case ParseErrorCode::TrailingBytes: return "trailing bytes";
    }
    return "parse error";
}

const char* to_string(VolumeKind kind) {
    switch (kind) {
        case VolumeKind::HU: return "HU";
        case VolumeKind::Attenuation: return "Attenuation";
        case VolumeKind::Mask: return "Mask";
        case VolumeKind::Distance: return "Distance";
        case VolumeKind::Normalized: return "Normalized";
    }
    return "?";
}

namespace {

void check_values(VolumeKind kind, std::span<const float> data) {
    auto bad = [&](const char* what) {
        throw ArgumentError(std::string(to_string(kind)) + " volume: " + what);
    };
    for (float v : data) {
        if (!std::isfinite(v)) bad("non-finite value");
        switch (kind) {
            case VolumeKind::HU:
                if (v < kHuMin || v > kHuMax) bad("value outside [-1024, 3071]");
                break;
            case VolumeKind::Mask:
                if (v != 0.0f && v != 1.0f) bad("value not in {0, 1}");
                break;
            case VolumeKind::Normalized:
                if (v < 0.0f || v > 1.0f) bad("value outside [0, 1]");
                break;
            default: break;
        }
    }
}

}  // namespace

Volume3D::Volume3D(Dims dims, Spacing spacing, VolumeKind kind, std::vector<float> data)
    : dims_(dims), spacing_(spacing), kind_(kind), data_(std::move(data)) {
    if (dims_.nx == 0 || dims_.ny == 0 || dims_.nz == 0)
        throw ArgumentError("volume dimensions must be positive");
    if (!(spacing_.sx > 0.0f) || !(spacing_.sy > 0.0f) || !(spacing_.sz > 0.0f))
        throw ArgumentError("volume spacing must be positive");
    if (data_.size() != dims_.count())
        throw ArgumentError("volume data length " + std::to_string(data_.size()) + " != nx*ny*nz " +
                            std::to_string(dims_.count()));
    check_values(kind_, data_);
}

Volume3D Volume3D::filled(Dims dims, Spacing spacing, VolumeKind kind, float value) {
    return Volume3D(dims, spacing, kind, std::vector<float>(dims.count(), value));
}

Volume3D Volume3D::from_slices(Dims dims, Spacing spacing, VolumeKind kind, std::span<const Slice2D> slices) {
    if (slices.size() != dims.nz) throw ArgumentError("slice count does not match nz");
    std::vector<float> data;
    data.reserve(dims.count());
    for (const auto& s : slices) {
        if (s.nx != dims.nx || s.ny != dims.ny) throw ArgumentError("slice size does not match volume");
        data.insert(data.end(), s.values.begin(), s.values.end());
    }
    return Volume3D(dims, spacing, kind, std::move(data));
}

Slice2D Volume3D::slice_z(std::uint32_t z) const {
    if (z >= dims_.nz) throw ArgumentError("slice index out of range");
    Slice2D s;
    s.nx = dims_.nx;
    s.ny = dims_.ny;
    s.sx = spacing_.sx;
    s.sy = spacing_.sy;
    const auto begin = data_.begin() + std::ptrdiff_t(index(0, 0, z));
    s.values.assign(begin, begin + std::ptrdiff_t(std::size_t(dims_.nx) * dims_.ny));
    return s;
}

Volume3D Volume3D::with_values(std::vector<float> data, VolumeKind kind) const {
    return Volume3D(dims_, spacing_, kind, std::move(data));
}

void require_same_grid(const Volume3D& a, const Volume3D& b, const char* context) {
    if (!(a.dims() == b.dims()))
        throw ArgumentError(std::string(context) + ": volume dimensions differ");
}

// --- spectrum -------------------------------------------------------------------------

EnergySpectrum::EnergySpectrum(std::vector<SpectrumSample> samples, double peak_kvp)
    : samples_(std::move(samples)), peak_kvp_(peak_kvp) {
    if (samples_.empty()) throw ArgumentError("spectrum needs at least one sample");
    double total = 0.0;
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (!(s.energy_kev > 0.0) || s.energy_kev > peak_kvp_)
            throw ArgumentError("spectrum energy outside (0, peak kVp]");
        if (i > 0 && !(s.energy_kev > samples_[i - 1].energy_kev))
            throw ArgumentError("spectrum energies must be strictly increasing");
        if (!(s.weight >= 0.0) || !std::isfinite(s.weight)) throw ArgumentError("spectrum weight must be >= 0");
        total += s.weight;
    }
    if (!(total > 0.0)) throw ArgumentError("spectrum weights sum to zero");
    for (auto& s : samples_) s.weight /= total;
}

EnergySpectrum EnergySpectrum::default_tungsten_140kvp() {
    return EnergySpectrum({{40.0, 0.12}, {60.0, 0.30}, {80.0, 0.28}, {100.0, 0.20}, {120.0, 0.10}}, 140.0);
}

EnergySpectrum EnergySpectrum::parse(const std::string& text, double peak_kvp) {
    std::vector<SpectrumSample> samples;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw ArgumentError("spectrum entry '" + item + "' is not energy:weight");
        try {
            std::size_t used = 0;
            const double e = std::stod(item.substr(0, colon), &used);
            const double w = std::stod(item.substr(colon + 1), &used);
            samples.push_back({e, w});
        } catch (const std::logic_error&) {
            throw ArgumentError("spectrum entry '" + item + "' is not numeric");
        }
    }
    return EnergySpectrum(std::move(samples), peak_kvp);
}

double EnergySpectrum::mean_energy() const {
    double m = 0.0;
    for (const auto& s : samples_) m += s.weight * s.energy_kev;
    return m;
}

std::string EnergySpectrum::to_string() const {
    std::ostringstream os;
    os.precision(15);
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (i) os << ", ";
        os << samples_[i].energy_kev << ':' << samples_[i].weight;
    }
    return os.str();
}

// --- water table ----------------------------------------------------------------------

WaterTable::WaterTable(std::vector<Row> rows) : rows_(std::move(rows)) {
    if (rows_.size() < 2) throw ArgumentError("water table needs at least two rows");
    for (std::size_t i = 0; i < rows_.size(); ++i) {
        if (!(rows_[i].energy_kev > 0.0) || !(rows_[i].mu_per_mm > 0.0))
            throw ArgumentError("water table rows must be positive");
        if (i > 0 && !(rows_[i].energy_kev > rows_[i - 1].energy_kev))
            throw ArgumentError("water table energies must be strictly increasing");
    }
}

WaterTable WaterTable::parse(std::istream& in) {
    std::vector<Row> rows;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        Row r{};
        if (!(ls >> r.energy_kev)) continue;
        if (!(ls >> r.mu_per_mm)) throw ArgumentError("water table line " + std::to_string(line_no) + ": expected two columns");
        rows.push_back(r);
    }
    return WaterTable(std::move(rows));
}

WaterTable WaterTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ArgumentError("cannot open water table " + path.string());
    return parse(in);
}

std::filesystem::path WaterTable::standard_path() {
    return std::filesystem::path(MARSIM_DATA_DIR) / "water_mu.txt";
}

const WaterTable& WaterTable::standard() {
    static const WaterTable table = load(standard_path());
    return table;
}

double WaterTable::mu_per_mm(double energy_kev) const {
    if (!(energy_kev >= min_energy() && energy_kev <= max_energy()))
        throw DomainError("energy " + std::to_string(energy_kev) + " keV outside water table [" +
                          std::to_string(min_energy()) + ", " + std::to_string(max_energy()) + "]");
    auto hi = std::upper_bound(rows_.begin(), rows_.end(), energy_kev,
                               [](double e, const Row& r) { return e < r.energy_kev; });
    if (hi == rows_.end()) return rows_.back().mu_per_mm;
    auto lo = hi - 1;
    const double t = (energy_kev - lo->energy_kev) / (hi->energy_kev - lo->energy_kev);
    return lo->mu_per_mm + t * (hi->mu_per_mm - lo->mu_per_mm);
}

// --- conversions ----------------------------------------------------------------------

Volume3D hu_to_attenuation(const Volume3D& vol, double energy_kev, const WaterTable& table) {
    if (vol.kind() != VolumeKind::HU) throw ArgumentError("hu_to_attenuation expects an HU volume");
    const double mu_w = table.mu_per_mm(energy_kev);
    std::vector<float> out(vol.size());
    const auto in = vol.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = float(std::max(0.0, mu_w * (1.0 + double(in[i]) / 1000.0)));
    return vol.with_values(std::move(out), VolumeKind::Attenuation);
}

Volume3D attenuation_to_hu(const Volume3D& vol, double energy_kev, const WaterTable& table) {
    const double mu_w = table.mu_per_mm(energy_kev);
    std::vector<float> out(vol.size());
    const auto in = vol.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double hu = 1000.0 * (double(in[i]) / mu_w - 1.0);
        out[i] = float(std::clamp(hu, double(kHuMin), double(kHuMax)));
    }
    return vol.with_values(std::move(out), VolumeKind::HU);
}

float normalize_hu(float hu) {
    return std::clamp((hu - kHuAir) / (kHuMax - kHuAir), 0.0f, 1.0f);
}

Volume3D normalize_for_metrics(const Volume3D& vol) {
    if (vol.kind() != VolumeKind::HU) throw ArgumentError("normalize_for_metrics expects an HU volume");
    std::vector<float> out(vol.size());
    const auto in = vol.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = normalize_hu(in[i]);
    return vol.with_values(std::move(out), VolumeKind::Normalized);
}

}  // namespace marsim
