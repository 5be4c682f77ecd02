#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "segfuse/raster.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse::data {

/// Sliding-window layout over an H x W tile. Positions are top-left corners
/// in row-major order; windows cover every pixel.
struct PatchGrid {
    std::size_t window = 0;
    std::size_t stride = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::pair<std::size_t, std::size_t>> positions;  // (y, x)

    std::size_t count() const { return positions.size(); }
};

/// 0, s, 2s, ... up to extent - w, plus extent - w itself when the stride
/// does not land on it.
std::vector<std::size_t> axis_positions(std::size_t extent, std::size_t window, std::size_t stride);

/// Throws ShapeError if the window exceeds the tile and ConfigError on a zero
/// window or stride or a stride larger than the window.
PatchGrid make_grid(std::size_t height, std::size_t width, std::size_t window, std::size_t stride);

struct Patches {
    PatchGrid grid;
    Tensor values;  // P, C, w, w
};

/// Cuts every grid window out of a C,H,W image.
Patches extract_patches(const Tensor& chw, std::size_t window, std::size_t stride);
Patches extract_patches(const RasterTile& tile, std::size_t window, std::size_t stride);

/// Label windows for `grid`, concatenated (P * w * w bytes).
std::vector<std::uint8_t> extract_label_patches(const RasterTile& labels, const PatchGrid& grid);

/// Per-pixel mean of all windows covering each pixel. `patches` is P,K,w,w
/// with one entry per grid position.
Tensor stitch(const Tensor& patches, const PatchGrid& grid);

/// Same, for a list of K,w,w patches.
Tensor stitch(std::span<const Tensor> patches, const PatchGrid& grid);

}  // namespace segfuse::data
