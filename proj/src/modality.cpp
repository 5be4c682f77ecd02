#include "segfuse/modality.hpp"

#include <algorithm>
#include <string>

namespace segfuse::data {

std::string_view modality_name(Modality m) { return m == Modality::irrg ? "irrg" : "composite"; }

Modality parse_modality(std::string_view text) {
    if (text == "irrg") return Modality::irrg;
    if (text == "composite") return Modality::composite;
    throw ConfigError("unknown stream modality '" + std::string(text) + "'");
}

std::vector<float> ndvi(std::span<const float> ir, std::span<const float> red) {
    if (ir.size() != red.size()) throw ShapeError("ndvi: IR and red channels differ in length");
    std::vector<float> out(ir.size());
    for (std::size_t i = 0; i < ir.size(); ++i) {
        const float a = ir[i];
        const float b = red[i];
        if (a < 0.0f || b < 0.0f) throw DataError("ndvi: negative reflectance at pixel " + std::to_string(i));
        const float s = a + b;
        out[i] = s > 0.0f ? std::clamp((a - b) / s, -1.0f, 1.0f) : 0.0f;
    }
    return out;
}

RasterTile ndvi(const RasterTile& irrg) {
    if (irrg.dtype != DType::real32 || irrg.channels < 2) throw ShapeError("ndvi needs an IR/R/G raster");
    RasterTile out = RasterTile::make_real(1, irrg.height, irrg.width);
    out.real = ndvi(irrg.channel(kIrChannel), irrg.channel(kRedChannel));
    return out;
}

void minmax_normalize(std::span<float> values) {
    if (values.empty()) return;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const float mn = *lo, mx = *hi;
    if (!(mx > mn)) {
        std::fill(values.begin(), values.end(), 0.0f);
        return;
    }
    const float range = mx - mn;
    for (auto& v : values) v = (v - mn) / range;
}

RasterTile build_composite(const RasterTile& dsm, const RasterTile& ndsm, const RasterTile& ndvi_tile) {
    for (const RasterTile* t : {&dsm, &ndsm, &ndvi_tile}) {
        if (t->dtype != DType::real32 || t->channels != 1) throw ShapeError("composite inputs must be 1-channel real rasters");
        if (t->height != dsm.height || t->width != dsm.width) throw ShapeError("composite inputs differ in shape");
    }
    RasterTile out = RasterTile::make_real(3, dsm.height, dsm.width);
    const RasterTile* sources[3] = {&dsm, &ndsm, &ndvi_tile};
    for (std::size_t c = 0; c < 3; ++c) {
        auto dst = out.channel(c);
        std::copy(sources[c]->real.begin(), sources[c]->real.end(), dst.begin());
        minmax_normalize(dst);
    }
    return out;
}

}  // namespace segfuse::data
