// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits nonzero if any criterion fails.
//
// usage: acceptance [WORK_DIR]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cli_runner.hpp"
#include "oracles.hpp"
#include "segfuse/checkpoint.hpp"
#include "segfuse/fusion.hpp"
#include "segfuse/gradsuite.hpp"
#include "segfuse/metrics.hpp"
#include "segfuse/ops.hpp"
#include "segfuse/patches.hpp"
#include "segfuse/pipeline.hpp"
#include "segfuse/raster.hpp"

using namespace segfuse;
using cli_runner::quote;
using cli_runner::slurp;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradBudgetSec = 120;
constexpr double kProtocolBudgetSec = 15 * 60;
constexpr double kOracleBudgetSec = 60;
constexpr double kAverageSlack = 0.005;     // avg >= best stream - 0.5 points
constexpr double kCorrectionGain = 0.010;   // corr >= best stream + 1.0 point
constexpr double kStrideSlack = 0.003;      // stride w/4 >= stride w - 0.3 points
constexpr double kOracleTol = 1e-6;
constexpr double kScoreTol = 1e-12;
constexpr double kSimplexTol = 1e-6;

// Protocol settings.
constexpr std::size_t kTiles = 16;
constexpr std::size_t kTileSize = 256;
constexpr std::uint64_t kSeed = 2017;
constexpr std::size_t kWindow = 64;
constexpr std::size_t kEvalStride = kWindow / 4;
constexpr const char* kProbeTile = "tile003";

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void report(int n, bool ok, const std::string& what) {
    std::printf("%s criterion %d: %s\n", ok ? "PASS" : "FAIL", n, what.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

// Outputs of one gen -> train x2 -> fuse x2 -> predict -> eval run.
struct Run {
    fs::path dir;
    bool ok = true;
    std::string failed_step;
    double seconds = 0;

    fs::path data() const { return dir / "data"; }
    fs::path irrg() const { return dir / "irrg.ckpt"; }
    fs::path composite() const { return dir / "composite.ckpt"; }
    fs::path average() const { return dir / "average.ckpt"; }
    fs::path correction() const { return dir / "correction.ckpt"; }
    fs::path pred() const { return dir / "pred.rast"; }
    fs::path probs() const { return dir / "probs.rast"; }
    fs::path metrics() const { return dir / "metrics.csv"; }
    fs::path stats() const { return dir / "stats.csv"; }
};

Run protocol(const fs::path& dir) {
    Run r;
    r.dir = dir;
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto q = [&](const fs::path& p) { return quote(p.string()); };
    const std::string log = (dir / "log.txt").string();
    const auto step = [&](const std::string& name, const std::string& args, const fs::path& capture = {}) {
        if (!r.ok) return;
        std::fprintf(stderr, "[%s] %s\n", dir.filename().c_str(), name.c_str());
        const auto res = cli_runner::run(args, dir, log);
        if (res.code != 0) {
            r.ok = false;
            r.failed_step = name + " (exit " + std::to_string(res.code) + ")";
            return;
        }
        if (!capture.empty()) {
            std::FILE* f = std::fopen(capture.c_str(), "wb");
            std::fwrite(res.out.data(), 1, res.out.size(), f);
            std::fclose(f);
        }
    };

    const auto t0 = Clock::now();
    step("gen", "gen --out " + q(r.data()) + " --tiles " + std::to_string(kTiles) + " --size " +
                    std::to_string(kTileSize) + " --seed " + std::to_string(kSeed));
    step("train irrg", "train --data " + q(r.data()) + " --stream irrg --out " + q(r.irrg()));
    step("train composite", "train --data " + q(r.data()) + " --stream composite --out " + q(r.composite()));
    step("fuse average", "fuse --mode average --stream-a " + q(r.irrg()) + " --stream-b " + q(r.composite()) +
                             " --out " + q(r.average()));
    step("fuse correction", "fuse --mode correction --data " + q(r.data()) + " --stream-a " + q(r.irrg()) +
                                " --stream-b " + q(r.composite()) + " --out " + q(r.correction()));
    const fs::path tile = r.data() / "tiles" / (std::string(kProbeTile) + "_irrg.rast");
    const fs::path gt = r.data() / "tiles" / (std::string(kProbeTile) + "_labels.rast");
    step("predict", "predict --model " + q(r.correction()) + " --tile " + q(tile) + " --stride " +
                        std::to_string(kEvalStride) + " --out " + q(r.pred()) + " --probs " + q(r.probs()));
    step("eval", "eval --pred " + q(r.pred()) + " --gt " + q(gt), r.metrics());
    step("stats", "stats --model " + q(r.correction()) + " --data " + q(r.data()), r.stats());
    r.seconds = seconds_since(t0);
    return r;
}

double split_oa(const fs::path& model, const fs::path& data, std::size_t stride) {
    auto m = pipeline::Model::load(model);
    return pipeline::evaluate_split(m, data, pipeline::Split::validation, stride).overall_accuracy;
}

void criterion_gradients() {
    const auto t0 = Clock::now();
    const auto results = gradsuite::run();
    const double secs = seconds_since(t0);
    double worst = 0;
    for (const auto& r : results) worst = std::max(worst, r.max_error);
    std::fputs(gradsuite::report_csv(results).c_str(), stderr);
    report(1, gradsuite::all_passed(results) && secs < kGradBudgetSec,
           fmt("%.0f checks, worst relative error %.2e (< 1e-4), %.2fs (< 120s)", static_cast<double>(results.size()),
               worst, secs));
}

void criteria_accuracy(const Run& run, double protocol_secs) {
    if (!run.ok) {
        report(2, false, "protocol step failed: " + run.failed_step);
        report(3, false, "protocol step failed: " + run.failed_step);
        return;
    }
    const auto t0 = Clock::now();
    const double irrg = split_oa(run.irrg(), run.data(), kEvalStride);
    const double irrg_coarse = split_oa(run.irrg(), run.data(), kWindow);
    const double comp = split_oa(run.composite(), run.data(), kEvalStride);
    const double avg = split_oa(run.average(), run.data(), kEvalStride);
    const double corr = split_oa(run.correction(), run.data(), kEvalStride);
    const double total = protocol_secs + seconds_since(t0);
    std::fprintf(stderr, "validation OA (stride %zu): irrg %.4f composite %.4f average %.4f correction %.4f\n",
                 kEvalStride, irrg, comp, avg, corr);

    const double best = std::max(irrg, comp);
    const bool order = corr >= avg && avg >= best - kAverageSlack && corr >= best + kCorrectionGain;
    report(2, order && total < kProtocolBudgetSec,
           fmt("OA corr %.4f >= avg %.4f >= best stream %.4f - 0.005, corr >= best + 0.01", corr, avg, best) +
               fmt(" (%.0fs < 900s)", total));

    report(3, irrg >= irrg_coarse - kStrideSlack,
           fmt("IRRG OA stride %.0f: %.4f >= stride %.0f: %.4f - 0.003", static_cast<double>(kEvalStride), irrg,
               static_cast<double>(kWindow), irrg_coarse));

}

void criterion_identity(const Run& run) {
    if (!run.ok) {
        report(4, false, "protocol step failed: " + run.failed_step);
        return;
    }
    auto a = ckpt::load_stream(run.irrg());
    auto b = ckpt::load_stream(run.composite());
    fusion::FusionModel<float> corr(a.net, b.net, fusion::FusionMode::correction, fusion::kDefaultHiddenWidth, 11);
    fusion::FusionModel<float> avg(std::move(a.net), std::move(b.net), fusion::FusionMode::average);
    std::mt19937_64 rng(4);
    constexpr std::size_t kInputs = 1000, kBatch = 8;
    std::size_t identical = 0;
    for (std::size_t done = 0; done < kInputs; done += kBatch) {
        const Tensor xa = oracle::random_tensor<float>({kBatch, 3, 32, 32}, rng, -2, 2);
        const Tensor xb = oracle::random_tensor<float>({kBatch, 3, 32, 32}, rng, -2, 2);
        Tape<float> t(false);
        const auto lc = ops::argmax_channels(corr.forward(t, t.constant(xa), t.constant(xb)).scores.value());
        const auto la = ops::argmax_channels(avg.forward(t, t.constant(xa), t.constant(xb)).scores.value());
        for (std::size_t i = 0; i < kBatch; ++i) {
            const auto off = static_cast<std::ptrdiff_t>(i * 32 * 32);
            identical += std::equal(lc.begin() + off, lc.begin() + off + 32 * 32, la.begin() + off);
        }
    }
    report(4, identical == kInputs,
           fmt("fresh correction argmax identical to averaging on %.0f / %.0f random inputs",
               static_cast<double>(identical), static_cast<double>(kInputs)));
}

void criterion_residuals(const Run& run) {
    if (!run.ok) {
        report(5, false, "protocol step failed: " + run.failed_step);
        return;
    }
    // stats.csv: header line then "m_avg,s_avg,m_corr,s_corr".
    double m_avg = 0, s_avg = 0, m_corr = 0, s_corr = 0;
    const auto text = slurp(run.stats());
    const std::string s(text.begin(), text.end());
    const bool parsed = std::sscanf(s.c_str(), "m_avg,s_avg,m_corr,s_corr\n%lf,%lf,%lf,%lf", &m_avg, &s_avg, &m_corr,
                                    &s_corr) == 4;
    report(5, parsed && std::abs(m_corr) < 0.5 * m_avg && s_corr < s_avg,
           fmt("|m_corr| %.4f < 0.5 * m_avg %.4f; s_corr %.4f < s_avg %.4f", std::abs(m_corr), m_avg, s_corr,
               s_avg));
}

void criterion_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(6);
    std::size_t conv_ok = 0, cm_ok = 0, erode_ok = 0;
    for (int i = 0; i < 50; ++i) {
        const std::size_t n = 1 + rng() % 2, cin = 1 + rng() % 4, cout = 1 + rng() % 4;
        const std::size_t h = 1 + rng() % 9, w = 1 + rng() % 9;
        // 64-bit path, so the comparison measures the op rather than float rounding.
        const Tensor64 x = oracle::random_tensor<double>({n, cin, h, w}, rng);
        const Tensor64 k = oracle::random_tensor<double>({cout, cin, 3, 3}, rng);
        const Tensor64 bias = oracle::random_tensor<double>({cout}, rng);
        Tape<double> t(false);
        const Tensor64 got = ops::conv2d(t.constant(x), t.constant(k), t.constant(bias)).value();
        const Tensor64 want = oracle::conv2d(x, k, bias);
        bool same = got.shape() == want.shape();
        for (std::size_t j = 0; same && j < got.size(); ++j) same = std::abs(got[j] - want[j]) < kOracleTol;
        conv_ok += same;
    }
    for (int i = 0; i < 100; ++i) {
        const std::size_t k = 2 + rng() % 5, n = 64 * 64;
        std::vector<std::uint8_t> pred(n), truth(n), ignore(n);
        for (std::size_t j = 0; j < n; ++j) {
            truth[j] = rng() % 50 == 0 ? 255 : static_cast<std::uint8_t>(rng() % k);
            pred[j] = rng() % 3 == 0 ? static_cast<std::uint8_t>(rng() % k) : (truth[j] == 255 ? 0 : truth[j]);
            ignore[j] = rng() % 9 == 0;
        }
        const auto cm = metrics::confusion(pred, truth, ignore, k);
        const auto want = oracle::confusion(pred, truth, ignore, k);
        bool same = true;
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b) same = same && cm.at(a, b) == want.at(a, b);
        double oa = 0;
        const auto ws = oracle::scores(want, &oa);
        const auto rep = metrics::scores(cm);
        same = same && std::abs(rep.overall_accuracy - oa) < kScoreTol;
        for (std::size_t c = 0; c < k; ++c) {
            same = same && std::abs(rep.classes[c].precision - ws[c].precision) < kScoreTol &&
                   std::abs(rep.classes[c].recall - ws[c].recall) < kScoreTol &&
                   std::abs(rep.classes[c].f1 - ws[c].f1) < kScoreTol;
        }
        cm_ok += same;
    }
    for (int i = 0; i < 20; ++i) {
        // Blocky maps so that erosion leaves something to compare.
        const std::size_t cell = 3 + rng() % 6;
        std::vector<std::uint8_t> coarse(64);
        for (auto& c : coarse) c = static_cast<std::uint8_t>(rng() % 5);
        std::vector<std::uint8_t> map(32 * 32);
        for (std::size_t y = 0; y < 32; ++y)
            for (std::size_t x = 0; x < 32; ++x) map[y * 32 + x] = coarse[(y / cell % 8) * 8 + x / cell % 8];
        map[rng() % map.size()] = 255;
        erode_ok += metrics::erode_gt(map, 32, 32, 3) == oracle::erode(map, 32, 32, 3);
    }
    const double secs = seconds_since(t0);
    report(6, conv_ok == 50 && cm_ok == 100 && erode_ok == 20 && secs < kOracleBudgetSec,
           fmt("conv2d %.0f/50, confusion+scores %.0f/100, erode r=3 %.0f/20 match oracles", static_cast<double>(conv_ok),
               static_cast<double>(cm_ok), static_cast<double>(erode_ok)) +
               fmt(" (%.2fs < 60s)", secs));
}

void criterion_pipeline(const Run& run) {
    if (!run.ok) {
        report(7, false, "protocol step failed: " + run.failed_step);
        return;
    }
    const fs::path scratch = run.dir / "identities";
    fs::create_directories(scratch);
    std::vector<std::string> broken;

    // Raster round trips on every file kind of one tile plus the prediction outputs.
    for (const char* kind : {"irrg", "dsm", "ndsm", "labels"}) {
        const fs::path src = run.data() / "tiles" / (std::string(kProbeTile) + "_" + kind + ".rast");
        data::write_raster(data::read_raster(src), scratch / "copy.rast");
        if (slurp(src) != slurp(scratch / "copy.rast")) broken.push_back(std::string("raster ") + kind);
    }
    for (const fs::path& src : {run.pred(), run.probs()}) {
        data::write_raster(data::read_raster(src), scratch / "copy.rast");
        if (slurp(src) != slurp(scratch / "copy.rast")) broken.push_back("raster " + src.filename().string());
    }

    // Checkpoint save -> load -> save.
    {
        const auto s = ckpt::load_stream(run.irrg());
        ckpt::save_stream(s.net, s.info, scratch / "s.ckpt");
        if (slurp(run.irrg()) != slurp(scratch / "s.ckpt")) broken.push_back("stream checkpoint");
        for (const fs::path& src : {run.average(), run.correction()}) {
            const auto f = ckpt::load_fusion(src);
            ckpt::save_fusion(f.model, f.a, f.b, scratch / "f.ckpt");
            if (slurp(src) != slurp(scratch / "f.ckpt")) broken.push_back("checkpoint " + src.filename().string());
        }
    }

    std::mt19937_64 rng(8);
    // Constant field through extract then stitch, several strides.
    {
        Tensor field({5, 96, 80});
        for (std::size_t c = 0; c < 5; ++c)
            for (std::size_t i = 0; i < 96 * 80; ++i) field[c * 96 * 80 + i] = 0.1f * static_cast<float>(c + 1);
        for (std::size_t stride : {4, 7, 16, 32}) {
            const auto p = data::extract_patches(field, 32, stride);
            if (data::stitch(p.values, p.grid) != field) broken.push_back("constant stitch s=" + std::to_string(stride));
        }
    }
    // Non-overlapping stitch equals block placement.
    {
        const Tensor img = oracle::random_tensor<float>({3, 64, 96}, rng);
        const auto p = data::extract_patches(img, 32, 32);
        if (data::stitch(p.values, p.grid) != img) broken.push_back("block stitch");
    }
    // Stitched stream probabilities are per-pixel simplices.
    double worst = 0;
    {
        auto model = pipeline::Model::load(run.irrg());
        const auto tile = pipeline::load_tile(pipeline::tile_prefix(run.data(), kProbeTile));
        for (std::size_t stride : {kWindow, kEvalStride, std::size_t{24}}) {
            const Tensor probs = model.predict(tile, stride);
            const std::size_t k = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
            for (std::size_t i = 0; i < plane; ++i) {
                double s = 0;
                for (std::size_t c = 0; c < k; ++c) s += probs[c * plane + i];
                worst = std::max(worst, std::abs(s - 1.0));
            }
        }
        if (worst >= kSimplexTol) broken.push_back("simplex sums");
    }

    std::string detail = "raster/checkpoint round trips byte-exact, stitch identities hold, simplex error " +
                         fmt("%.1e", worst);
    if (!broken.empty()) {
        detail = "broken:";
        for (const auto& b : broken) detail += " " + b + ";";
    }
    report(7, broken.empty(), detail);
}

void criterion_determinism(const Run& a, const Run& b) {
    if (!a.ok || !b.ok) {
        report(8, false, "protocol step failed: " + (a.ok ? b.failed_step : a.failed_step));
        return;
    }
    std::vector<std::string> differ;
    const std::pair<const char*, fs::path (Run::*)() const> outputs[] = {
        {"irrg.ckpt", &Run::irrg},         {"composite.ckpt", &Run::composite}, {"average.ckpt", &Run::average},
        {"correction.ckpt", &Run::correction}, {"pred.rast", &Run::pred},       {"probs.rast", &Run::probs},
        {"metrics.csv", &Run::metrics},
    };
    for (const auto& [name, path] : outputs) {
        const auto x = slurp((a.*path)()), y = slurp((b.*path)());
        if (x.empty() || x != y) differ.push_back(name);
    }
    std::string detail = "checkpoints, prediction rasters and metric CSV byte-identical across two runs";
    if (!differ.empty()) {
        detail = "differ:";
        for (const auto& d : differ) detail += " " + d;
    }
    report(8, differ.empty(), detail);
}

}  // namespace

int main(int argc, char** argv) {
    const fs::path work = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "segfuse_acceptance";
    fs::create_directories(work);

    criterion_gradients();

    const Run first = protocol(work / "run1");
    std::fprintf(stderr, "protocol run 1: %.1fs\n", first.seconds);
    criteria_accuracy(first, first.seconds);
    criterion_identity(first);
    criterion_residuals(first);
    criterion_oracles();
    criterion_pipeline(first);

    const Run second = protocol(work / "run2");
    std::fprintf(stderr, "protocol run 2: %.1fs\n", second.seconds);
    criterion_determinism(first, second);

    std::printf("%d of 8 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
