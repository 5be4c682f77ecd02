#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "segfuse/tensor.hpp"

namespace segfuse::data {

inline constexpr std::uint8_t kVoidLabel = 255;

enum class DType : std::uint8_t { real32 = 1, label8 = 2 };

/// Multi-channel raster: real32 image data (C,H,W) or 8-bit class labels
/// (C = 1). Only the payload matching `dtype` is populated.
struct RasterTile {
    std::uint32_t channels = 0;
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    DType dtype = DType::real32;
    std::vector<float> real;
    std::vector<std::uint8_t> labels;

    static RasterTile make_real(std::uint32_t c, std::uint32_t h, std::uint32_t w, float fill = 0.0f);
    static RasterTile make_labels(std::uint32_t h, std::uint32_t w, std::uint8_t fill = 0);

    std::size_t plane_size() const { return std::size_t{height} * width; }
    std::size_t payload_size() const { return std::size_t{channels} * plane_size(); }

    float& at(std::size_t c, std::size_t y, std::size_t x) { return real[(c * height + y) * width + x]; }
    float at(std::size_t c, std::size_t y, std::size_t x) const { return real[(c * height + y) * width + x]; }
    std::uint8_t& label(std::size_t y, std::size_t x) { return labels[y * width + x]; }
    std::uint8_t label(std::size_t y, std::size_t x) const { return labels[y * width + x]; }

    std::span<const float> channel(std::size_t c) const { return std::span(real).subspan(c * plane_size(), plane_size()); }
    std::span<float> channel(std::size_t c) { return std::span(real).subspan(c * plane_size(), plane_size()); }

    /// Throws ShapeError if the payload does not match the header.
    void validate() const;

    bool operator==(const RasterTile&) const = default;
};

// "RAST" | version u8 = 1 | dtype u8 | 2 reserved | u32 C, H, W | payload.
// All integers and reals little-endian, payload channel-major row-major.
std::vector<std::uint8_t> encode_raster(const RasterTile& tile);

/// Throws BadMagicError, VersionError, UnknownDtypeError or TruncatedError.
RasterTile decode_raster(std::span<const std::uint8_t> bytes);

void write_raster(const RasterTile& tile, const std::filesystem::path& path);
RasterTile read_raster(const std::filesystem::path& path);

/// Real raster as a C,H,W tensor.
Tensor to_tensor(const RasterTile& tile);
RasterTile from_tensor(const Tensor& chw);

}  // namespace segfuse::data
