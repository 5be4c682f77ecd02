#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "segfuse/network.hpp"

namespace segfuse::nn {

/// Step schedule: base_lr for epochs 1..decay_epoch, base_lr / decay_factor
/// afterwards (one decay only).
struct TrainSchedule {
    std::size_t epochs = 10;
    double base_lr = 0.1;
    double decay_factor = 10.0;
    std::size_t decay_epoch = 5;
    std::size_t batch_size = 4;
    std::uint64_t seed = 20170101;

    void validate() const;
    /// `epoch` counts from 1.
    double lr_at(std::size_t epoch) const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // from 1
    double loss = 0;        // mean batch loss over the epoch
    double val_oa = 0;      // pixel accuracy on the validation patches
};

/// Images P,C,w,w with P*w*w labels (255 = void).
struct LabeledPatches {
    Tensor images;
    std::vector<std::uint8_t> labels;

    std::size_t count() const { return images.empty() ? 0 : images.dim(0); }
    std::size_t pixels_per_patch() const { return images.dim(2) * images.dim(3); }
    void append(const Tensor& more, std::span<const std::uint8_t> more_labels);
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Plain minibatch SGD on the softmax cross-entropy loss. Batch order comes
/// from a Fisher-Yates shuffle seeded by schedule.seed, so the run is a pure
/// function of its inputs.
std::vector<EpochRecord> train_stream(Network<float>& net, const LabeledPatches& train, const LabeledPatches& val,
                                      const TrainSchedule& schedule, const EpochCallback& on_epoch = {});

/// Fraction of non-void pixels whose argmax score matches the label.
double patch_accuracy(Network<float>& net, const LabeledPatches& set, std::size_t batch_size = 16);

/// "epoch,loss,val_oa" header plus one line per record.
std::string history_csv(const std::vector<EpochRecord>& history);

// Batching helpers shared with fusion training.
std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng);
Tensor gather(const Tensor& images, std::span<const std::size_t> rows);
std::vector<std::uint8_t> gather_labels(std::span<const std::uint8_t> labels, std::size_t per_row,
                                        std::span<const std::size_t> rows);

}  // namespace segfuse::nn
