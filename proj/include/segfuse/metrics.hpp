#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "segfuse/raster.hpp"

namespace segfuse::metrics {

/// Ignore mask (1 = ignored) for boundary-eroded ground truth: a pixel is
/// ignored iff it is void, or a pixel of another class or void lies within
/// Euclidean distance <= radius of it. Pixels outside the tile do not count.
std::vector<std::uint8_t> erode_gt(std::span<const std::uint8_t> labels, std::size_t height, std::size_t width,
                                   int radius = 3);
std::vector<std::uint8_t> erode_gt(const data::RasterTile& labels, int radius = 3);

/// counts(i, j) = evaluated pixels of true class i predicted as j.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t num_classes = 0) : k_(num_classes), counts_(num_classes * num_classes, 0) {}

    std::size_t num_classes() const { return k_; }
    std::uint64_t& at(std::size_t truth, std::size_t pred) { return counts_[truth * k_ + pred]; }
    std::uint64_t at(std::size_t truth, std::size_t pred) const { return counts_[truth * k_ + pred]; }

    std::uint64_t total() const;
    std::uint64_t true_positives(std::size_t c) const { return at(c, c); }
    std::uint64_t row_sum(std::size_t c) const;     // pixels belonging to class c
    std::uint64_t column_sum(std::size_t c) const;  // pixels attributed to class c

    ConfusionMatrix& operator+=(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t k_;
    std::vector<std::uint64_t> counts_;
};

/// Counts non-ignored pixels. Void ground truth (255) is always skipped.
/// Throws ShapeError on length mismatch and DataError on classes >= k.
ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                          std::span<const std::uint8_t> ignore, std::size_t num_classes);

struct ClassScores {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
};

struct EvalReport {
    double overall_accuracy = 0;
    std::vector<ClassScores> classes;
    std::uint64_t evaluated = 0;
    std::uint64_t ignored = 0;
};

/// recall = tp / row, precision = tp / column, F1 = harmonic mean, OA =
/// trace / total; any 0/0 is 0. Throws DataError on an empty matrix.
EvalReport scores(const ConfusionMatrix& cm);

/// Erodes `truth` by `radius`, builds the confusion matrix and scores it.
EvalReport evaluate(std::span<const std::uint8_t> pred, const data::RasterTile& truth, std::size_t num_classes,
                    int radius = 3);

/// "class,precision,recall,f1" rows with four decimals, then "OA,<value>".
std::string report_csv(const EvalReport& report);

}  // namespace segfuse::metrics
