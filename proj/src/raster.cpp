#include "segfuse/raster.hpp"

#include <fstream>
#include <iterator>
#include <string>

#include "byte_io.hpp"

namespace segfuse::detail {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace segfuse::detail

namespace segfuse::data {
namespace {
constexpr std::uint8_t kMagic[4] = {'R', 'A', 'S', 'T'};
constexpr std::uint8_t kVersion = 1;
}  // namespace

RasterTile RasterTile::make_real(std::uint32_t c, std::uint32_t h, std::uint32_t w, float fill) {
    RasterTile t;
    t.channels = c;
    t.height = h;
    t.width = w;
    t.dtype = DType::real32;
    t.real.assign(t.payload_size(), fill);
    return t;
}

RasterTile RasterTile::make_labels(std::uint32_t h, std::uint32_t w, std::uint8_t fill) {
    RasterTile t;
    t.channels = 1;
    t.height = h;
    t.width = w;
    t.dtype = DType::label8;
    t.labels.assign(t.payload_size(), fill);
    return t;
}

void RasterTile::validate() const {
    const std::size_t n = payload_size();
    if (dtype == DType::real32) {
        if (real.size() != n || !labels.empty()) throw ShapeError("real raster payload does not match header");
    } else if (dtype == DType::label8) {
        if (channels != 1) throw ShapeError("label rasters have exactly one channel");
        if (labels.size() != n || !real.empty()) throw ShapeError("label raster payload does not match header");
    } else {
        throw ShapeError("raster has unknown dtype");
    }
}

std::vector<std::uint8_t> encode_raster(const RasterTile& tile) {
    tile.validate();
    detail::ByteWriter w;
    w.bytes(kMagic);
    w.u8(kVersion);
    w.u8(static_cast<std::uint8_t>(tile.dtype));
    w.u8(0);
    w.u8(0);
    w.u32(tile.channels);
    w.u32(tile.height);
    w.u32(tile.width);
    if (tile.dtype == DType::real32) {
        w.buffer().reserve(w.buffer().size() + 4 * tile.real.size());
        for (float v : tile.real) w.f32(v);
    } else {
        w.bytes(tile.labels);
    }
    return std::move(w.buffer());
}

RasterTile decode_raster(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "raster");
    const auto magic = r.bytes(4);
    if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) throw BadMagicError("raster: bad magic");
    const std::uint8_t version = r.u8();
    if (version != kVersion) throw VersionError("raster: unsupported version " + std::to_string(version));
    const std::uint8_t dtype = r.u8();
    if (dtype != static_cast<std::uint8_t>(DType::real32) && dtype != static_cast<std::uint8_t>(DType::label8)) {
        throw UnknownDtypeError("raster: unknown dtype " + std::to_string(dtype));
    }
    r.bytes(2);
    RasterTile t;
    t.channels = r.u32();
    t.height = r.u32();
    t.width = r.u32();
    t.dtype = static_cast<DType>(dtype);
    const std::size_t n = t.payload_size();
    if (t.dtype == DType::real32) {
        r.need(4 * n);
        t.real.resize(n);
        for (auto& v : t.real) v = r.f32();
    } else {
        if (t.channels != 1) throw FormatError("raster: label rasters must have one channel");
        auto payload = r.bytes(n);
        t.labels.assign(payload.begin(), payload.end());
    }
    if (r.remaining() != 0) throw FormatError("raster: trailing bytes after payload");
    return t;
}

void write_raster(const RasterTile& tile, const std::filesystem::path& path) {
    detail::write_file(path, encode_raster(tile));
}

RasterTile read_raster(const std::filesystem::path& path) {
    return decode_raster(detail::read_file(path));
}

Tensor to_tensor(const RasterTile& tile) {
    if (tile.dtype != DType::real32) throw ShapeError("to_tensor needs a real raster");
    return Tensor({tile.channels, tile.height, tile.width}, tile.real);
}

RasterTile from_tensor(const Tensor& chw) {
    if (chw.ndim() != 3) throw ShapeError("from_tensor expects C,H,W");
    RasterTile t = RasterTile::make_real(static_cast<std::uint32_t>(chw.dim(0)), static_cast<std::uint32_t>(chw.dim(1)),
                                         static_cast<std::uint32_t>(chw.dim(2)));
    std::copy(chw.values().begin(), chw.values().end(), t.real.begin());
    return t;
}

}  // namespace segfuse::data
