#include "segfuse/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include "segfuse/ops.hpp"
#include "segfuse/patches.hpp"
#include "byte_io.hpp"

namespace segfuse::pipeline {

namespace fs = std::filesystem;

Tensor network_input(const data::RasterTile& tile) {
    Tensor t = data::to_tensor(tile);
    for (auto& v : t.values()) v = (v - kInputCenter) * kInputScale;
    return t;
}

Split split_for_index(std::size_t index) { return index % 4 == 3 ? Split::validation : Split::train; }

std::string manifest_csv(const std::vector<ManifestEntry>& entries) {
    std::string out = "tile,split\n";
    for (const auto& e : entries) out += e.id + (e.split == Split::train ? ",train\n" : ",validation\n");
    return out;
}

std::vector<ManifestEntry> generate_dataset(const fs::path& dir, std::size_t tiles, const data::SceneSpec& scene,
                                            std::uint64_t seed) {
    if (tiles == 0) throw ConfigError("at least one tile is required");
    scene.validate();
    std::error_code ec;
    fs::create_directories(dir / "tiles", ec);
    if (ec) throw IoError("cannot create " + (dir / "tiles").string() + ": " + ec.message());

    std::mt19937_64 seeds(seed);
    std::vector<ManifestEntry> entries;
    for (std::size_t i = 0; i < tiles; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "tile%03zu", i);
        data::SceneSpec spec = scene;
        spec.seed = seeds();
        const data::Scene s = data::synth_scene(spec);
        const fs::path prefix = tile_prefix(dir, id);
        data::write_raster(s.irrg, prefix.string() + "_irrg.rast");
        data::write_raster(s.dsm, prefix.string() + "_dsm.rast");
        data::write_raster(s.ndsm, prefix.string() + "_ndsm.rast");
        data::write_raster(s.labels, prefix.string() + "_labels.rast");
        entries.push_back({id, split_for_index(i)});
    }
    std::ofstream out(dir / "manifest.csv", std::ios::binary);
    out << manifest_csv(entries);
    if (!out) throw IoError("cannot write " + (dir / "manifest.csv").string());
    return entries;
}

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
    std::ifstream in(dir / "manifest.csv");
    if (!in) throw DataError("no manifest.csv in " + dir.string());
    std::string line;
    std::getline(in, line);
    if (line != "tile,split") throw DataError("manifest.csv: unexpected header '" + line + "'");
    std::vector<ManifestEntry> entries;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError("manifest.csv: malformed line '" + line + "'");
        const std::string split = line.substr(comma + 1);
        if (split != "train" && split != "validation") throw DataError("manifest.csv: unknown split '" + split + "'");
        entries.push_back({line.substr(0, comma), split == "train" ? Split::train : Split::validation});
    }
    if (entries.empty()) throw DataError("manifest.csv lists no tiles");
    return entries;
}

fs::path tile_prefix(const fs::path& dir, const std::string& id) { return dir / "tiles" / id; }

fs::path tile_prefix(const fs::path& path) {
    const std::string s = path.string();
    for (const char* suffix : {"_irrg.rast", "_dsm.rast", "_ndsm.rast", "_labels.rast"}) {
        const std::string suf(suffix);
        if (s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0) {
            return s.substr(0, s.size() - suf.size());
        }
    }
    return path;
}

TileData load_tile(const fs::path& prefix, bool need_labels) {
    auto load = [&](const char* kind, bool required) {
        const fs::path p = prefix.string() + "_" + kind + ".rast";
        if (!fs::exists(p)) {
            if (required) throw DataError("missing modality file " + p.string());
            return data::RasterTile{};
        }
        return data::read_raster(p);
    };
    TileData t;
    t.irrg = load("irrg", true);
    t.dsm = load("dsm", true);
    t.ndsm = load("ndsm", true);
    t.labels = load("labels", need_labels);
    if (t.irrg.channels != 3 || t.irrg.dtype != data::DType::real32) throw DataError("IRRG raster must have 3 real channels");
    if (!t.labels.labels.empty() && (t.labels.height != t.irrg.height || t.labels.width != t.irrg.width)) {
        throw DataError("label raster does not match the IRRG tile");
    }
    return t;
}

data::RasterTile modality_tile(const TileData& tile, data::Modality modality) {
    if (modality == data::Modality::irrg) return tile.irrg;
    return data::build_composite(tile.dsm, tile.ndsm, data::ndvi(tile.irrg));
}

namespace {

std::vector<fs::path> split_prefixes(const fs::path& dir, Split split) {
    std::vector<fs::path> out;
    for (const auto& e : read_manifest(dir)) {
        if (e.split == split) out.push_back(tile_prefix(dir, e.id));
    }
    return out;
}

}  // namespace

nn::LabeledPatches stream_patches(const fs::path& dir, Split split, data::Modality modality, std::size_t window,
                                  std::size_t stride) {
    nn::LabeledPatches set;
    for (const auto& prefix : split_prefixes(dir, split)) {
        const TileData tile = load_tile(prefix);
        const auto p = data::extract_patches(network_input(modality_tile(tile, modality)), window, stride);
        set.append(p.values, data::extract_label_patches(tile.labels, p.grid));
    }
    return set;
}

fusion::FusionPatches fusion_patches(const fs::path& dir, Split split, data::Modality a, data::Modality b,
                                     std::size_t window, std::size_t stride) {
    nn::LabeledPatches pa, pb;
    for (const auto& prefix : split_prefixes(dir, split)) {
        const TileData tile = load_tile(prefix);
        const auto xa = data::extract_patches(network_input(modality_tile(tile, a)), window, stride);
        const auto xb = data::extract_patches(network_input(modality_tile(tile, b)), window, stride);
        const auto labels = data::extract_label_patches(tile.labels, xa.grid);
        pa.append(xa.values, labels);
        pb.append(xb.values, labels);
    }
    return {std::move(pa.images), std::move(pb.images), std::move(pa.labels)};
}

namespace {

template <typename Forward>
Tensor predict_windows(const data::Patches& patches, std::size_t batch_size, Forward forward) {
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    const std::size_t count = patches.grid.count();
    Tensor all;
    std::size_t per = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < count; start += batch_size) {
        rows.clear();
        for (std::size_t i = start; i < std::min(count, start + batch_size); ++i) rows.push_back(i);
        const Tensor out = forward(rows);
        if (all.empty()) {
            per = out.size() / rows.size();
            all = Tensor({count, out.dim(1), out.dim(2), out.dim(3)});
        }
        std::copy(out.values().begin(), out.values().end(), all.data() + start * per);
    }
    return data::stitch(all, patches.grid);
}

}  // namespace

Tensor predict_stream(nn::Network<float>& net, const Tensor& chw, std::size_t window, std::size_t stride,
                      std::size_t batch_size) {
    const auto patches = data::extract_patches(chw, window, stride);
    return predict_windows(patches, batch_size, [&](std::span<const std::size_t> rows) {
        Tape<float> tape(false);
        auto out = net.forward(tape, tape.constant(nn::gather(patches.values, rows)));
        return ops::softmax_channels(out.logits.value());
    });
}

Tensor predict_fusion(fusion::FusionModel<float>& model, const Tensor& chw_a, const Tensor& chw_b,
                      std::size_t window, std::size_t stride, std::size_t batch_size) {
    if (chw_a.ndim() != 3 || chw_b.ndim() != 3 || chw_a.dim(1) != chw_b.dim(1) || chw_a.dim(2) != chw_b.dim(2)) {
        throw ShapeError("fusion inputs are not aligned");
    }
    const auto pa = data::extract_patches(chw_a, window, stride);
    const auto pb = data::extract_patches(chw_b, window, stride);
    return predict_windows(pa, batch_size, [&](std::span<const std::size_t> rows) {
        Tape<float> tape(false);
        auto out = model.forward(tape, tape.constant(nn::gather(pa.values, rows)),
                                 tape.constant(nn::gather(pb.values, rows)));
        return out.scores.value();
    });
}

Model Model::load(const fs::path& path) {
    const auto bytes = detail::read_file(path);
    if (ckpt::detect_kind(bytes) == ckpt::Kind::fusion) return Model(ckpt::decode_fusion(bytes));
    return Model(ckpt::decode_stream(bytes));
}

Model::Model(ckpt::StreamCheckpoint stream) : stream_(std::move(stream)) {}
Model::Model(ckpt::FusionCheckpoint fused) : fused_(std::move(fused)) {}

std::size_t Model::window() const { return fused_ ? fused_->a.window : stream_->info.window; }

std::size_t Model::num_classes() const {
    return fused_ ? fused_->model.num_classes() : stream_->net.config().num_classes;
}

Tensor Model::predict(const TileData& tile, std::size_t stride, std::size_t batch_size) {
    if (fused_) {
        return predict_fusion(fused_->model, network_input(modality_tile(tile, fused_->a.modality)),
                              network_input(modality_tile(tile, fused_->b.modality)), window(), stride, batch_size);
    }
    return predict_stream(stream_->net, network_input(modality_tile(tile, stream_->info.modality)), window(), stride,
                          batch_size);
}

data::RasterTile label_raster(const Tensor& scores) {
    if (scores.ndim() != 3) throw ShapeError("label_raster expects K,H,W scores");
    auto out = data::RasterTile::make_labels(static_cast<std::uint32_t>(scores.dim(1)),
                                             static_cast<std::uint32_t>(scores.dim(2)));
    out.labels = ops::argmax_channels(scores);
    return out;
}

metrics::EvalReport evaluate_split(Model& model, const fs::path& dir, Split split, std::size_t stride,
                                   int erode_radius) {
    const auto prefixes = split_prefixes(dir, split);
    if (prefixes.empty()) throw DataError("no tiles in the requested split");
    metrics::ConfusionMatrix cm(model.num_classes());
    std::uint64_t pixels = 0;
    for (const auto& prefix : prefixes) {
        const TileData tile = load_tile(prefix);
        const auto pred = label_raster(model.predict(tile, stride));
        cm += metrics::confusion(pred.labels, tile.labels.labels, metrics::erode_gt(tile.labels, erode_radius),
                                 model.num_classes());
        pixels += tile.labels.labels.size();
    }
    auto report = metrics::scores(cm);
    report.ignored = pixels - report.evaluated;
    return report;
}

}  // namespace segfuse::pipeline
