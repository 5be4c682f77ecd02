#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "segfuse/raster.hpp"

namespace segfuse::data {

/// Input a stream consumes: the optical IRRG tile or the (DSM, NDSM, NDVI)
/// composite.
enum class Modality : std::uint8_t { irrg = 1, composite = 2 };

std::string_view modality_name(Modality m);
/// "irrg" or "composite"; throws ConfigError otherwise.
Modality parse_modality(std::string_view text);

// Channel order of optical tiles.
inline constexpr std::size_t kIrChannel = 0;
inline constexpr std::size_t kRedChannel = 1;
inline constexpr std::size_t kGreenChannel = 2;

/// (IR - R) / (IR + R), 0 where IR + R = 0. Throws DataError on negative
/// reflectances and ShapeError on length mismatch.
std::vector<float> ndvi(std::span<const float> ir, std::span<const float> red);

/// NDVI of an IRRG tile as a one-channel raster.
RasterTile ndvi(const RasterTile& irrg);

/// Maps values affinely onto [0, 1]; a constant input becomes all zeros.
void minmax_normalize(std::span<float> values);

/// Three-channel (DSM, NDSM, NDVI) raster, each channel min-max normalized
/// over the tile.
RasterTile build_composite(const RasterTile& dsm, const RasterTile& ndsm, const RasterTile& ndvi);

}  // namespace segfuse::data
