#include "marsim/volume_io.hpp"

#include <cmath>
#include <fstream>
#include <limits>

#include "binary.hpp"
#include "marsim/error.hpp"

namespace marsim {

namespace {
constexpr char kMagic[7] = "MARV1";
// 2^31 f32 values (8 GiB) is far past any volume this tool handles.
constexpr std::uint64_t kMaxElements = std::uint64_t(1) << 31;
}  // namespace

std::vector<std::uint8_t> encode_volume(const Volume3D& vol) {
    detail::ByteWriter w;
    w.reserve(kVolumeHeaderBytes + 4 * vol.size());
    w.bytes(kMagic, 6);
    w.u32(vol.dims().nx);
    w.u32(vol.dims().ny);
    w.u32(vol.dims().nz);
    w.f32(vol.spacing().sx);
    w.f32(vol.spacing().sy);
    w.f32(vol.spacing().sz);
    w.u8(static_cast<std::uint8_t>(vol.kind()));
    w.zeros(7);
    for (float v : vol.data()) w.f32(v);
    return w.take();
}

Volume3D decode_volume(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes);
    r.expect_magic(kMagic);
    Dims dims{r.u32(), r.u32(), r.u32()};
    Spacing spacing{r.f32(), r.f32(), r.f32()};
    const std::uint8_t kind_code = r.u8();
    r.skip(7);

    if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
        throw ParseError(ParseErrorCode::ZeroDimension, "volume header has a zero dimension");
    std::uint64_t n = 0;
    if (!detail::checked_count({dims.nx, dims.ny, dims.nz}, kMaxElements, n))
        throw ParseError(ParseErrorCode::DimOverflow, "nx*ny*nz exceeds the supported size");
    for (float s : {spacing.sx, spacing.sy, spacing.sz})
        if (!(s > 0.0f) || !std::isfinite(s)) throw ParseError(ParseErrorCode::BadSpacing, "spacing must be positive");
    if (kind_code > static_cast<std::uint8_t>(VolumeKind::Normalized))
        throw ParseError(ParseErrorCode::BadKind, "unknown kind code " + std::to_string(kind_code));

    if (r.remaining() < 4 * n)
        throw ParseError(ParseErrorCode::Truncated, "payload holds " + std::to_string(r.remaining()) +
                                                        " bytes, expected " + std::to_string(4 * n));
    if (r.remaining() > 4 * n) throw ParseError(ParseErrorCode::TrailingBytes, "data after the payload");

    std::vector<float> data(n);
    for (auto& v : data) v = r.f32();
    try {
        return Volume3D(dims, spacing, static_cast<VolumeKind>(kind_code), std::move(data));
    } catch (const ArgumentError& e) {
        throw ParseError(ParseErrorCode::InvalidData, e.what());
    }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(ParseErrorCode::CannotOpen, path.string());
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw ParseError(ParseErrorCode::Truncated, "short read on " + path.string());
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw Error("write failed on " + path.string());
}

void write_volume(const Volume3D& vol, const std::filesystem::path& path) {
    write_file_bytes(path, encode_volume(vol));
}

Volume3D read_volume(const std::filesystem::path& path) {
    return decode_volume(read_file_bytes(path));
}

}  // namespace marsim
