#include "segfuse/metrics.hpp"

#include <cstdio>
#include <string>
#include <utility>

namespace segfuse::metrics {

std::vector<std::uint8_t> erode_gt(std::span<const std::uint8_t> labels, std::size_t height, std::size_t width,
                                   int radius) {
    if (labels.size() != height * width) throw ShapeError("erode_gt: label count does not match shape");
    if (radius < 0) throw ConfigError("erode_gt: radius must be nonnegative");
    std::vector<std::pair<int, int>> disk;
    for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) {
            if ((dy != 0 || dx != 0) && dy * dy + dx * dx <= radius * radius) disk.emplace_back(dy, dx);
        }
    }
    const int h = static_cast<int>(height), w = static_cast<int>(width);
    std::vector<std::uint8_t> ignore(labels.size(), 0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x);
            const std::uint8_t own = labels[i];
            if (own == data::kVoidLabel) {
                ignore[i] = 1;
                continue;
            }
            for (const auto& [dy, dx] : disk) {
                const int yy = y + dy, xx = x + dx;
                if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
                if (labels[static_cast<std::size_t>(yy) * width + static_cast<std::size_t>(xx)] != own) {
                    ignore[i] = 1;
                    break;
                }
            }
        }
    }
    return ignore;
}

std::vector<std::uint8_t> erode_gt(const data::RasterTile& labels, int radius) {
    if (labels.dtype != data::DType::label8) throw ShapeError("erode_gt needs a label raster");
    return erode_gt(labels.labels, labels.height, labels.width, radius);
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::size_t j = 0; j < k_; ++j) t += at(c, j);
    return t;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t c) const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += at(i, c);
    return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw ShapeError("cannot add confusion matrices of different class counts");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
}

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                          std::span<const std::uint8_t> ignore, std::size_t num_classes) {
    if (pred.size() != truth.size() || (!ignore.empty() && ignore.size() != truth.size())) {
        throw ShapeError("confusion: prediction, truth and ignore mask differ in size");
    }
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const std::uint8_t t = truth[i], p = pred[i];
        if (t != data::kVoidLabel && t >= num_classes) {
            throw DataError("confusion: ground-truth class " + std::to_string(t) + " outside [0," +
                            std::to_string(num_classes) + ")");
        }
        if (p >= num_classes) {
            throw DataError("confusion: predicted class " + std::to_string(p) + " outside [0," +
                            std::to_string(num_classes) + ")");
        }
        if (t == data::kVoidLabel || (!ignore.empty() && ignore[i] != 0)) continue;
        ++cm.at(t, p);
    }
    return cm;
}

namespace {
double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

EvalReport scores(const ConfusionMatrix& cm) {
    const std::uint64_t total = cm.total();
    if (total == 0) throw DataError("scores: no evaluated pixels");
    EvalReport r;
    r.evaluated = total;
    std::uint64_t trace = 0;
    for (std::size_t c = 0; c < cm.num_classes(); ++c) {
        const std::uint64_t tp = cm.true_positives(c);
        trace += tp;
        ClassScores s;
        s.recall = ratio(tp, cm.row_sum(c));
        s.precision = ratio(tp, cm.column_sum(c));
        s.f1 = (s.precision + s.recall) > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
        r.classes.push_back(s);
    }
    r.overall_accuracy = ratio(trace, total);
    return r;
}

EvalReport evaluate(std::span<const std::uint8_t> pred, const data::RasterTile& truth, std::size_t num_classes,
                    int radius) {
    const auto ignore = erode_gt(truth, radius);
    EvalReport r = scores(confusion(pred, truth.labels, ignore, num_classes));
    r.ignored = truth.labels.size() - r.evaluated;
    return r;
}

std::string report_csv(const EvalReport& report) {
    std::string out = "class,precision,recall,f1\n";
    char line[128];
    for (std::size_t c = 0; c < report.classes.size(); ++c) {
        const auto& s = report.classes[c];
        std::snprintf(line, sizeof line, "%zu,%.4f,%.4f,%.4f\n", c, s.precision, s.recall, s.f1);
        out += line;
    }
    std::snprintf(line, sizeof line, "OA,%.4f\n", report.overall_accuracy);
    out += line;
    return out;
}

}  // namespace segfuse::metrics
