#include "segfuse/patches.hpp"

#include <algorithm>
#include <string>

namespace segfuse::data {

std::vector<std::size_t> axis_positions(std::size_t extent, std::size_t window, std::size_t stride) {
    std::vector<std::size_t> pos;
    const std::size_t last = extent - window;
    for (std::size_t p = 0; p <= last; p += stride) pos.push_back(p);
    if (pos.back() != last) pos.push_back(last);
    return pos;
}

PatchGrid make_grid(std::size_t height, std::size_t width, std::size_t window, std::size_t stride) {
    if (window == 0 || stride == 0) throw ConfigError("window and stride must be positive");
    // A larger stride would leave pixels between windows uncovered.
    if (stride > window) throw ConfigError("stride must not exceed the window");
    if (window > height || window > width) {
        throw ShapeError("window " + std::to_string(window) + " exceeds tile " + std::to_string(height) + "x" +
                         std::to_string(width));
    }
    PatchGrid grid{window, stride, height, width, {}};
    const auto ys = axis_positions(height, window, stride);
    const auto xs = axis_positions(width, window, stride);
    for (std::size_t y : ys) {
        for (std::size_t x : xs) grid.positions.emplace_back(y, x);
    }
    return grid;
}

Patches extract_patches(const Tensor& chw, std::size_t window, std::size_t stride) {
    if (chw.ndim() != 3) throw ShapeError("extract_patches expects C,H,W, got " + shape_str(chw.shape()));
    const std::size_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Patches out{make_grid(h, w, window, stride), {}};
    out.values = Tensor({out.grid.count(), c, window, window});
    float* dst = out.values.data();
    for (const auto& [py, px] : out.grid.positions) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            for (std::size_t y = 0; y < window; ++y) {
                const float* src = chw.data() + (ch * h + py + y) * w + px;
                dst = std::copy(src, src + window, dst);
            }
        }
    }
    return out;
}

Patches extract_patches(const RasterTile& tile, std::size_t window, std::size_t stride) {
    return extract_patches(to_tensor(tile), window, stride);
}

std::vector<std::uint8_t> extract_label_patches(const RasterTile& labels, const PatchGrid& grid) {
    if (labels.dtype != DType::label8) throw ShapeError("extract_label_patches needs a label raster");
    if (labels.height != grid.height || labels.width != grid.width) throw ShapeError("label raster does not match grid");
    const std::size_t w = grid.window;
    std::vector<std::uint8_t> out;
    out.reserve(grid.count() * w * w);
    for (const auto& [py, px] : grid.positions) {
        for (std::size_t y = 0; y < w; ++y) {
            const auto* src = labels.labels.data() + (py + y) * labels.width + px;
            out.insert(out.end(), src, src + w);
        }
    }
    return out;
}

namespace {

template <typename PatchAt>
Tensor stitch_impl(std::size_t count, std::size_t k, const PatchGrid& grid, PatchAt patch_at) {
    if (count != grid.count()) {
        throw ShapeError("stitch: " + std::to_string(count) + " patches for " + std::to_string(grid.count()) +
                         " grid positions");
    }
    const std::size_t h = grid.height, wd = grid.width, w = grid.window;
    // Double accumulation keeps the mean of identical values exact.
    std::vector<double> acc(k * h * wd, 0.0);
    std::vector<std::uint32_t> cover(h * wd, 0);
    for (std::size_t p = 0; p < count; ++p) {
        const auto [py, px] = grid.positions[p];
        const float* src = patch_at(p);
        for (std::size_t c = 0; c < k; ++c) {
            for (std::size_t y = 0; y < w; ++y) {
                double* dst = acc.data() + (c * h + py + y) * wd + px;
                const float* row = src + (c * w + y) * w;
                for (std::size_t x = 0; x < w; ++x) dst[x] += row[x];
            }
        }
        for (std::size_t y = 0; y < w; ++y) {
            for (std::size_t x = 0; x < w; ++x) ++cover[(py + y) * wd + px + x];
        }
    }
    Tensor out({k, h, wd});
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t i = 0; i < h * wd; ++i) {
            out[c * h * wd + i] = static_cast<float>(acc[c * h * wd + i] / cover[i]);
        }
    }
    return out;
}

}  // namespace

Tensor stitch(const Tensor& patches, const PatchGrid& grid) {
    if (patches.ndim() != 4 || patches.dim(2) != grid.window || patches.dim(3) != grid.window) {
        throw ShapeError("stitch expects P,K,w,w patches, got " + shape_str(patches.shape()));
    }
    const std::size_t k = patches.dim(1), stride = k * grid.window * grid.window;
    return stitch_impl(patches.dim(0), k, grid, [&](std::size_t p) { return patches.data() + p * stride; });
}

Tensor stitch(std::span<const Tensor> patches, const PatchGrid& grid) {
    if (patches.empty()) return stitch_impl(0, 0, grid, [](std::size_t) -> const float* { return nullptr; });
    const std::size_t k = patches.front().dim(0);
    for (const auto& p : patches) {
        if (p.ndim() != 3 || p.dim(0) != k || p.dim(1) != grid.window || p.dim(2) != grid.window) {
            throw ShapeError("stitch expects K,w,w patches, got " + shape_str(p.shape()));
        }
    }
    return stitch_impl(patches.size(), k, grid, [&](std::size_t p) { return patches[p].data(); });
}

}  // namespace segfuse::data
