#pragma once

#include <array>
#include <cstdint>
#include <string_view>

#include "segfuse/raster.hpp"

namespace segfuse::data {

enum class ClassId : std::uint8_t { impervious = 0, building = 1, low_vegetation = 2, tree = 3, car = 4 };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {"impervious", "building", "low_vegetation",
                                                                         "tree", "car"};

/// Procedural urban scene parameters. Object counts are per 256x256 pixels
/// and scale with tile area.
struct SceneSpec {
    std::uint64_t seed = 1;
    std::uint32_t size = 256;
    double buildings = 7;
    double trees = 12;
    double low_vegetation = 9;
    double cars = 26;
    float noise = 0.04f;  // std-dev of optical pixel noise

    void validate() const;
};

// Object height ranges (metres above terrain) before DSM noise of up to
// kDsmNoise is added. Tree and low-vegetation ranges stay disjoint with it.
inline constexpr float kDsmNoise = 0.25f;
inline constexpr float kLowVegetationMaxHeight = 0.5f;
inline constexpr float kTreeMinHeight = 4.0f;
inline constexpr float kTreeMaxHeight = 12.0f;

struct Scene {
    RasterTile irrg;    // 3 channels IR, R, G in [0, 1]
    RasterTile dsm;     // absolute elevation
    RasterTile ndsm;    // DSM minus terrain
    RasterTile labels;  // ClassId per pixel
};

/// Deterministic function of `spec`. Impervious ground; buildings are
/// rectangles that look like ground optically but stand well above it; low
/// vegetation and trees share one optical (and NDVI) distribution and differ
/// only in height; cars are small, optically distinctive rectangles whose
/// height is lost in the DSM noise.
Scene synth_scene(const SceneSpec& spec);

}  // namespace segfuse::data
