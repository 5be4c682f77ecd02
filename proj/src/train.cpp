#include "segfuse/train.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "segfuse/ops.hpp"

namespace segfuse::nn {

void TrainSchedule::validate() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (!(base_lr >= 0)) throw ConfigError("learning rate must be nonnegative");
    if (!(decay_factor > 0)) throw ConfigError("decay factor must be positive");
    // decay_epoch >= epochs is accepted and simply means no decay within the run.
    if (decay_epoch == 0) throw ConfigError("decay_epoch must be at least 1");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
}

double TrainSchedule::lr_at(std::size_t epoch) const { return epoch > decay_epoch ? base_lr / decay_factor : base_lr; }

void LabeledPatches::append(const Tensor& more, std::span<const std::uint8_t> more_labels) {
    if (more.ndim() != 4) throw ShapeError("patches must be P,C,w,w");
    if (more_labels.size() != more.dim(0) * more.dim(2) * more.dim(3)) throw ShapeError("label count does not match patches");
    if (images.empty()) {
        images = more;
        labels.assign(more_labels.begin(), more_labels.end());
        return;
    }
    if (more.dim(1) != images.dim(1) || more.dim(2) != images.dim(2) || more.dim(3) != images.dim(3)) {
        throw ShapeError("appended patches differ in shape");
    }
    std::vector<float> values(images.values().begin(), images.values().end());
    values.insert(values.end(), more.values().begin(), more.values().end());
    images = Tensor({images.dim(0) + more.dim(0), images.dim(1), images.dim(2), images.dim(3)}, std::move(values));
    labels.insert(labels.end(), more_labels.begin(), more_labels.end());
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::mt19937_64& rng) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(order[i - 1], order[j]);
    }
    return order;
}

Tensor gather(const Tensor& images, std::span<const std::size_t> rows) {
    const std::size_t per = images.size() / images.dim(0);
    Shape shape = images.shape();
    shape[0] = rows.size();
    Tensor out(shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(images.data() + rows[r] * per, per, out.data() + r * per);
    }
    return out;
}

std::vector<std::uint8_t> gather_labels(std::span<const std::uint8_t> labels, std::size_t per_row,
                                        std::span<const std::size_t> rows) {
    std::vector<std::uint8_t> out(rows.size() * per_row);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        std::copy_n(labels.data() + rows[r] * per_row, per_row, out.data() + r * per_row);
    }
    return out;
}

double patch_accuracy(Network<float>& net, const LabeledPatches& set, std::size_t batch_size) {
    if (set.count() == 0) throw DataError("accuracy on an empty patch set");
    const std::size_t per = set.pixels_per_patch();
    std::uint64_t correct = 0, total = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < set.count(); start += batch_size) {
        rows.clear();
        for (std::size_t i = start; i < std::min(set.count(), start + batch_size); ++i) rows.push_back(i);
        Tape<float> tape(false);
        auto out = net.forward(tape, tape.constant(gather(set.images, rows)));
        const auto pred = ops::argmax_channels(out.logits.value());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            for (std::size_t p = 0; p < per; ++p) {
                const std::uint8_t lab = set.labels[rows[r] * per + p];
                if (lab == 255) continue;
                ++total;
                correct += pred[r * per + p] == lab;
            }
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

std::vector<EpochRecord> train_stream(Network<float>& net, const LabeledPatches& train, const LabeledPatches& val,
                                      const TrainSchedule& schedule, const EpochCallback& on_epoch) {
    schedule.validate();
    if (train.count() == 0) throw DataError("train_stream: empty training set");
    if (val.count() == 0) throw DataError("train_stream: empty validation set");
    if (train.images.dim(1) != net.config().in_channels) {
        throw ShapeError("train_stream: patches have " + std::to_string(train.images.dim(1)) + " channels, network expects " +
                         std::to_string(net.config().in_channels));
    }
    std::mt19937_64 rng(schedule.seed);
    const std::size_t per = train.pixels_per_patch();
    std::vector<EpochRecord> history;
    for (auto& p : net.parameters()) p.zero_grad();

    for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
        const float lr = static_cast<float>(schedule.lr_at(epoch));
        const auto order = shuffled_order(train.count(), rng);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
            const std::span<const std::size_t> rows(order.data() + start,
                                                    std::min(schedule.batch_size, order.size() - start));
            const auto labels = gather_labels(train.labels, per, rows);
            if (std::all_of(labels.begin(), labels.end(), [](std::uint8_t l) { return l == 255; })) continue;
            Tape<float> tape;
            auto out = net.forward(tape, tape.constant(gather(train.images, rows)));
            Var<float> loss = ops::cross_entropy(out.logits, labels);
            loss_sum += loss.value()[0];
            ++batches;
            tape.backward(loss);
            sgd_step<float>(net.parameters(), lr);
        }
        EpochRecord rec{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0,
                        patch_accuracy(net, val, schedule.batch_size)};
        history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return history;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,loss,val_oa\n";
    char line[96];
    for (const auto& r : history) {
        std::snprintf(line, sizeof line, "%zu,%.6f,%.6f\n", r.epoch, r.loss, r.val_oa);
        out += line;
    }
    return out;
}

}  // namespace segfuse::nn
