#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segfuse/checkpoint.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/modality.hpp"
#include "segfuse/synth.hpp"
#include "segfuse/train.hpp"

namespace segfuse::pipeline {

// Both modalities arrive in [0, 1]; networks see 4 * (v - 0.5).
inline constexpr float kInputCenter = 0.5f;
inline constexpr float kInputScale = 4.0f;

/// C,H,W network input for a [0, 1] raster.
Tensor network_input(const data::RasterTile& tile);

enum class Split { train, validation };

struct ManifestEntry {
    std::string id;
    Split split = Split::train;
};

/// Tile i is a validation tile iff i % 4 == 3 (three train tiles per
/// validation tile).
Split split_for_index(std::size_t index);

/// Writes tiles/<id>_{irrg,dsm,ndsm,labels}.rast and manifest.csv under
/// `dir`. Tile seeds derive from `seed`; every other scene field comes from
/// `scene`.
std::vector<ManifestEntry> generate_dataset(const std::filesystem::path& dir, std::size_t tiles,
                                            const data::SceneSpec& scene, std::uint64_t seed);

/// Throws DataError when the manifest is missing or malformed.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);
std::string manifest_csv(const std::vector<ManifestEntry>& entries);

struct TileData {
    data::RasterTile irrg;
    data::RasterTile dsm;
    data::RasterTile ndsm;
    data::RasterTile labels;  // empty when not required and absent
};

/// Sibling files of `prefix` (".../tiles/<id>"). Throws DataError naming the
/// first missing modality file.
TileData load_tile(const std::filesystem::path& prefix, bool need_labels = true);
/// Accepts "<prefix>", "<prefix>_irrg.rast" or any other "<prefix>_<kind>.rast".
std::filesystem::path tile_prefix(const std::filesystem::path& path);
std::filesystem::path tile_prefix(const std::filesystem::path& dir, const std::string& id);

/// IRRG tile, or the DSM/NDSM/NDVI composite derived on load.
data::RasterTile modality_tile(const TileData& tile, data::Modality modality);

nn::LabeledPatches stream_patches(const std::filesystem::path& dir, Split split, data::Modality modality,
                                  std::size_t window, std::size_t stride);
fusion::FusionPatches fusion_patches(const std::filesystem::path& dir, Split split, data::Modality a,
                                     data::Modality b, std::size_t window, std::size_t stride);

/// Softmax probabilities of every window, stitched into K,H,W.
Tensor predict_stream(nn::Network<float>& net, const Tensor& chw, std::size_t window, std::size_t stride,
                      std::size_t batch_size = 16);
/// Fused scores of every window (P' in correction mode, P_avg in average
/// mode), stitched into K,H,W.
Tensor predict_fusion(fusion::FusionModel<float>& model, const Tensor& chw_a, const Tensor& chw_b,
                      std::size_t window, std::size_t stride, std::size_t batch_size = 16);

/// A stream or fusion checkpoint, loaded by content.
class Model {
public:
    static Model load(const std::filesystem::path& path);
    explicit Model(ckpt::StreamCheckpoint stream);
    explicit Model(ckpt::FusionCheckpoint fused);

    bool is_fusion() const { return fused_.has_value(); }
    std::size_t window() const;
    std::size_t num_classes() const;
    /// K,H,W stitched per-pixel scores for one tile.
    Tensor predict(const TileData& tile, std::size_t stride, std::size_t batch_size = 16);

private:
    std::optional<ckpt::StreamCheckpoint> stream_;
    std::optional<ckpt::FusionCheckpoint> fused_;
};

/// Per-pixel argmax labels of a K,H,W score map as an H x W label raster.
data::RasterTile label_raster(const Tensor& scores);

/// Predicts every tile of `split` and scores the predictions against
/// boundary-eroded ground truth, accumulating one confusion matrix.
metrics::EvalReport evaluate_split(Model& model, const std::filesystem::path& dir, Split split, std::size_t stride,
                                   int erode_radius = 3);

}  // namespace segfuse::pipeline
