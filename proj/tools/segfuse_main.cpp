// segfuse command-line driver: gen, train, fuse, predict, eval, gradcheck, stats.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "segfuse/checkpoint.hpp"
#include "segfuse/gradsuite.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/ops.hpp"
#include "segfuse/pipeline.hpp"

namespace fs = std::filesystem;
using namespace segfuse;

namespace {

enum Exit : int {
    kOk = 0,
    kFailure = 1,
    kIo = 2,
    kData = 3,
    kMismatch = 4,
    kGradcheck = 5,
};

constexpr std::uint64_t kDefaultSeed = 2017;

struct GenArgs {
    std::string out;
    std::size_t tiles = 16;
    std::uint32_t size = 256;
    std::uint64_t seed = kDefaultSeed;
    std::size_t window = 64;
};

struct TrainArgs {
    std::string data, stream = "irrg", out;
    std::size_t epochs = 10, decay_epoch = 5, batch = 4, window = 64, stride = 32;
    double lr = 0.1, decay_factor = 10.0;
    std::uint64_t seed = kDefaultSeed;
};

struct FuseArgs {
    std::string data, stream_a, stream_b, mode = "correction", out;
    std::size_t epochs = 1, batch = 4, stride = 32, hidden = fusion::kDefaultHiddenWidth;
    double lr = 0.01;
    std::uint64_t seed = kDefaultSeed;
};

struct PredictArgs {
    std::string model, tile, out, probs;
    std::size_t stride = 32, batch = 16;
};

struct EvalArgs {
    std::string pred, gt;
    int erode = 3;
    std::size_t classes = data::kNumClasses;
};

struct GradcheckArgs {
    std::uint64_t seed = 7;
    std::string mutate;
    double factor = 2.0;
};

struct StatsArgs {
    std::string model, data, split = "validation";
    std::size_t stride = 0, batch = 16;
};

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw IoError("cannot write " + path.string());
}

fs::path history_path(const fs::path& ckpt) {
    fs::path p = ckpt;
    return p.replace_extension(".history.csv");
}

int cmd_gen(const GenArgs& a) {
    data::SceneSpec scene;
    scene.size = a.size;
    if (a.size < 2 * a.window) {
        std::cerr << "warning: tile size " << a.size << " is below twice the window " << a.window
                  << "; patch extraction with that window will fail\n";
    }
    const auto entries = pipeline::generate_dataset(a.out, a.tiles, scene, a.seed);
    std::cout << pipeline::manifest_csv(entries);
    return kOk;
}

int cmd_train(const TrainArgs& a) {
    const auto modality = data::parse_modality(a.stream);
    nn::TrainSchedule schedule;
    schedule.epochs = a.epochs;
    schedule.base_lr = a.lr;
    schedule.decay_epoch = a.decay_epoch;
    schedule.decay_factor = a.decay_factor;
    schedule.batch_size = a.batch;
    schedule.seed = a.seed;
    schedule.validate();

    const auto train = pipeline::stream_patches(a.data, pipeline::Split::train, modality, a.window, a.stride);
    const auto val = pipeline::stream_patches(a.data, pipeline::Split::validation, modality, a.window, a.window);
    std::cerr << "training " << a.stream << " stream on " << train.count() << " patches\n";

    nn::Network<float> net(nn::NetworkConfig{}, a.seed + static_cast<std::uint64_t>(modality));
    std::cout << "epoch,loss,val_oa\n" << std::flush;
    const auto history = nn::train_stream(net, train, val, schedule, [](const nn::EpochRecord& r) {
        std::printf("%zu,%.6f,%.6f\n", r.epoch, r.loss, r.val_oa);
        std::fflush(stdout);
    });
    ckpt::save_stream(net, {modality, static_cast<std::uint32_t>(a.window)}, a.out);
    write_text(history_path(a.out), nn::history_csv(history));
    return kOk;
}

int cmd_fuse(const FuseArgs& a) {
    const auto mode = fusion::parse_mode(a.mode);
    auto sa = ckpt::load_stream(a.stream_a);
    auto sb = ckpt::load_stream(a.stream_b);
    if (sa.info.window != sb.info.window) {
        throw ModelMismatchError("stream windows differ: " + std::to_string(sa.info.window) + " vs " +
                                 std::to_string(sb.info.window));
    }
    fusion::FusionModel<float> model(std::move(sa.net), std::move(sb.net), mode, a.hidden, a.seed);
    if (mode == fusion::FusionMode::correction) {
        const auto train = pipeline::fusion_patches(a.data, pipeline::Split::train, sa.info.modality,
                                                    sb.info.modality, sa.info.window, a.stride);
        fusion::FusionSchedule schedule;
        schedule.epochs = a.epochs;
        schedule.lr = a.lr;
        schedule.batch_size = a.batch;
        schedule.seed = a.seed;
        std::cerr << "fine-tuning correction on " << train.count() << " patches\n";
        std::cout << "epoch,loss\n" << std::flush;
        fusion::train_fusion(model, train, schedule, [](const nn::EpochRecord& r) {
            std::printf("%zu,%.6f\n", r.epoch, r.loss);
            std::fflush(stdout);
        });
    }
    ckpt::save_fusion(model, sa.info, sb.info, a.out);
    return kOk;
}

int cmd_predict(const PredictArgs& a) {
    auto model = pipeline::Model::load(a.model);
    const auto tile = pipeline::load_tile(pipeline::tile_prefix(a.tile), false);
    const Tensor scores = model.predict(tile, a.stride, a.batch);
    data::write_raster(pipeline::label_raster(scores), a.out);
    if (!a.probs.empty()) data::write_raster(data::from_tensor(scores), a.probs);
    std::cerr << "wrote " << a.out << "\n";
    return kOk;
}

int cmd_eval(const EvalArgs& a) {
    const auto pred = data::read_raster(a.pred);
    const auto gt = data::read_raster(a.gt);
    if (pred.dtype != data::DType::label8 || gt.dtype != data::DType::label8) {
        throw DataError("eval needs two label rasters");
    }
    if (pred.height != gt.height || pred.width != gt.width) throw DataError("prediction and ground truth differ in size");
    std::cout << metrics::report_csv(metrics::evaluate(pred.labels, gt, a.classes, a.erode));
    return kOk;
}

int cmd_gradcheck(const GradcheckArgs& a) {
    if (!a.mutate.empty()) {
        static const std::pair<const char*, ops::testing::Rule> rules[] = {
            {"conv2d", ops::testing::Rule::conv2d},
            {"relu", ops::testing::Rule::relu},
            {"maxpool2", ops::testing::Rule::maxpool2},
            {"maxunpool2", ops::testing::Rule::maxunpool2},
            {"softmax_channels", ops::testing::Rule::softmax_channels},
            {"cross_entropy", ops::testing::Rule::cross_entropy},
        };
        bool found = false;
        for (const auto& [name, rule] : rules) {
            if (a.mutate == name) {
                ops::testing::mutate_backward(rule, a.factor);
                found = true;
            }
        }
        if (!found) throw ConfigError("unknown backward rule '" + a.mutate + "'");
        std::cerr << "backward rule " << a.mutate << " scaled by " << a.factor << "\n";
    }
    const auto results = gradsuite::run(a.seed);
    std::cout << gradsuite::report_csv(results);
    return gradsuite::all_passed(results) ? kOk : kGradcheck;
}

int cmd_stats(const StatsArgs& a) {
    auto fused = ckpt::load_fusion(a.model);
    if (a.split != "train" && a.split != "validation") throw ConfigError("split must be train or validation");
    const auto split = a.split == "train" ? pipeline::Split::train : pipeline::Split::validation;
    const std::size_t window = fused.a.window;
    const auto patches = pipeline::fusion_patches(a.data, split, fused.a.modality, fused.b.modality, window,
                                                  a.stride ? a.stride : window);
    std::cout << fusion::stats_csv(fusion::residual_stats(fused.model, patches.images_a, patches.images_b, a.batch));
    return kOk;
}

template <typename Fn>
int guarded(Fn&& fn) {
    try {
        return fn();
    } catch (const ModelMismatchError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kMismatch;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kIo;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dual-stream segmentation with residual-correction fusion"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a synthetic multimodal dataset");
    g->add_option("--out", gen.out, "Output directory")->required();
    g->add_option("--tiles", gen.tiles, "Number of tiles")->check(CLI::PositiveNumber);
    g->add_option("--size", gen.size, "Tile side in pixels")->check(CLI::PositiveNumber);
    g->add_option("--seed", gen.seed, "Dataset seed");
    g->add_option("--window", gen.window, "Window used downstream (size check only)")->check(CLI::PositiveNumber);

    TrainArgs train;
    auto* t = app.add_subcommand("train", "Train one stream");
    t->add_option("--data", train.data, "Dataset directory")->required();
    t->add_option("--stream", train.stream, "irrg or composite")->check(CLI::IsMember({"irrg", "composite"}));
    t->add_option("--out", train.out, "Checkpoint path")->required();
    t->add_option("--epochs", train.epochs)->check(CLI::PositiveNumber);
    t->add_option("--lr", train.lr)->check(CLI::NonNegativeNumber);
    t->add_option("--decay-epoch", train.decay_epoch)->check(CLI::PositiveNumber);
    t->add_option("--decay-factor", train.decay_factor)->check(CLI::PositiveNumber);
    t->add_option("--batch", train.batch)->check(CLI::PositiveNumber);
    t->add_option("--window", train.window)->check(CLI::PositiveNumber);
    t->add_option("--stride", train.stride, "Training patch stride")->check(CLI::PositiveNumber);
    t->add_option("--seed", train.seed);

    FuseArgs fuse;
    auto* f = app.add_subcommand("fuse", "Combine two trained streams");
    f->add_option("--data", fuse.data, "Dataset directory (correction mode)");
    f->add_option("--stream-a", fuse.stream_a, "Optical stream checkpoint")->required();
    f->add_option("--stream-b", fuse.stream_b, "Composite stream checkpoint")->required();
    f->add_option("--mode", fuse.mode, "average or correction")->check(CLI::IsMember({"average", "correction"}));
    f->add_option("--out", fuse.out, "Fusion checkpoint path")->required();
    f->add_option("--epochs", fuse.epochs)->check(CLI::PositiveNumber);
    f->add_option("--lr", fuse.lr)->check(CLI::NonNegativeNumber);
    f->add_option("--batch", fuse.batch)->check(CLI::PositiveNumber);
    f->add_option("--stride", fuse.stride, "Training patch stride")->check(CLI::PositiveNumber);
    f->add_option("--hidden", fuse.hidden, "Correction hidden width")->check(CLI::PositiveNumber);
    f->add_option("--seed", fuse.seed);

    PredictArgs predict;
    auto* p = app.add_subcommand("predict", "Label one tile with a sliding window");
    p->add_option("--model", predict.model, "Stream or fusion checkpoint")->required();
    p->add_option("--tile", predict.tile, "<id>_irrg.rast path or tile prefix")->required();
    p->add_option("--out", predict.out, "Label raster path")->required();
    p->add_option("--probs", predict.probs, "Optional score raster path");
    p->add_option("--stride", predict.stride)->check(CLI::PositiveNumber);
    p->add_option("--batch", predict.batch)->check(CLI::PositiveNumber);

    EvalArgs eval;
    auto* e = app.add_subcommand("eval", "Score a prediction against eroded ground truth");
    e->add_option("--pred", eval.pred)->required();
    e->add_option("--gt", eval.gt)->required();
    e->add_option("--erode", eval.erode, "Erosion radius in pixels")->check(CLI::NonNegativeNumber);
    e->add_option("--classes", eval.classes)->check(CLI::Range(2, 255));

    GradcheckArgs gc;
    auto* c = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
    c->add_option("--seed", gc.seed);
    c->add_option("--mutate", gc.mutate, "Scale one backward rule (test hook)");
    c->add_option("--factor", gc.factor, "Scale used with --mutate");

    StatsArgs stats;
    auto* s = app.add_subcommand("stats", "Mean and spread of averaged predictions and corrections");
    s->add_option("--model", stats.model, "Correction fusion checkpoint")->required();
    s->add_option("--data", stats.data, "Dataset directory")->required();
    s->add_option("--split", stats.split)->check(CLI::IsMember({"train", "validation"}));
    s->add_option("--stride", stats.stride, "Patch stride (default: window)");
    s->add_option("--batch", stats.batch)->check(CLI::PositiveNumber);

    CLI11_PARSE(app, argc, argv);

    if (g->parsed()) return guarded([&] { return cmd_gen(gen); });
    if (t->parsed()) return guarded([&] { return cmd_train(train); });
    if (f->parsed()) {
        if (fuse.mode == "correction" && fuse.data.empty()) {
            std::cerr << "error: --data is required in correction mode\n";
            return kData;
        }
        return guarded([&] { return cmd_fuse(fuse); });
    }
    if (p->parsed()) return guarded([&] { return cmd_predict(predict); });
    if (e->parsed()) return guarded([&] { return cmd_eval(eval); });
    if (c->parsed()) return guarded([&] { return cmd_gradcheck(gc); });
    if (s->parsed()) return guarded([&] { return cmd_stats(stats); });
    return kFailure;
}
