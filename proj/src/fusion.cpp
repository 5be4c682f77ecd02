#include "segfuse/fusion.hpp"

#include <cmath>
#include <cstdio>

#include "segfuse/ops.hpp"

namespace segfuse::fusion {

std::string_view mode_name(FusionMode mode) { return mode == FusionMode::average ? "average" : "correction"; }

FusionMode parse_mode(std::string_view text) {
    if (text == "average") return FusionMode::average;
    if (text == "correction") return FusionMode::correction;
    throw ConfigError("unknown fusion mode '" + std::string(text) + "'");
}

template <typename T>
CorrectionNet<T>::CorrectionNet(std::size_t in_channels, std::size_t hidden, std::size_t num_classes,
                                std::uint64_t seed, nn::Init init)
    : in_channels_(in_channels), hidden_(hidden), num_classes_(num_classes) {
    if (in_channels == 0 || hidden == 0 || num_classes < 2) throw ConfigError("invalid correction net shape");
    std::mt19937_64 rng(seed);
    const std::size_t cin[3] = {in_channels, hidden, hidden};
    const std::size_t cout[3] = {hidden, hidden, num_classes};
    params_.resize(6);
    for (std::size_t i = 0; i < 3; ++i) {
        auto& w = params_[2 * i];
        auto& b = params_[2 * i + 1];
        w.name = "correction.conv" + std::to_string(i) + ".weight";
        b.name = "correction.conv" + std::to_string(i) + ".bias";
        nn::init_conv(w, b, cout[i], cin[i], i == 2 ? nn::Init::zero : init, rng);
    }
}

template <typename T>
Var<T> CorrectionNet<T>::forward(Tape<T>& tape, Var<T> features) {
    Var<T> x = features;
    for (std::size_t i = 0; i < 3; ++i) {
        x = ops::conv2d(x, tape.parameter(params_[2 * i]), tape.parameter(params_[2 * i + 1]));
        if (i < 2) x = ops::relu(x);
    }
    return x;
}

template <typename T>
Var<T> average_fusion(std::span<const Var<T>> probs) {
    return ops::mean_of(probs);
}

template <typename T>
BasicTensor<T> average_fusion(std::span<const BasicTensor<T>> probs) {
    if (probs.empty()) throw ShapeError("average_fusion: empty input list");
    BasicTensor<T> out(probs.front().shape());
    for (const auto& p : probs) {
        if (p.shape() != out.shape()) throw ShapeError("average_fusion: shape mismatch");
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += p[i];
    }
    const T inv = T(1) / static_cast<T>(probs.size());
    for (auto& v : out.values()) v *= inv;
    return out;
}

template <typename T>
Var<T> fuse_correct(Var<T> p_avg, Var<T> tap_a, Var<T> tap_b, CorrectionNet<T>& corr) {
    const Shape& p = p_avg.shape();
    for (const Shape* t : {&tap_a.shape(), &tap_b.shape()}) {
        if (t->size() != 4 || p.size() != 4 || (*t)[0] != p[0] || (*t)[2] != p[2] || (*t)[3] != p[3]) {
            throw ShapeError("fuse_correct: tap " + shape_str(*t) + " not aligned with prediction " + shape_str(p));
        }
    }
    Var<T> c = corr.forward(*p_avg.tape(), ops::concat_channels(tap_a, tap_b));
    return ops::add(p_avg, c);
}

template <typename T>
FusionModel<T>::FusionModel(nn::Network<T> stream_a, nn::Network<T> stream_b, FusionMode mode, std::size_t hidden,
                            std::uint64_t seed)
    : a_(std::move(stream_a)), b_(std::move(stream_b)), mode_(mode) {
    const auto& ca = a_.config();
    const auto& cb = b_.config();
    if (ca.num_classes != cb.num_classes) {
        throw ModelMismatchError("streams predict " + std::to_string(ca.num_classes) + " and " +
                                 std::to_string(cb.num_classes) + " classes");
    }
    if (mode == FusionMode::correction) {
        if (ca.tap_stage != 0 || cb.tap_stage != 0) {
            throw ModelMismatchError("correction fusion needs full-resolution taps (tap_stage 0)");
        }
        corr_.emplace(ca.tap_channels() + cb.tap_channels(), hidden, ca.num_classes, seed);
    }
    a_.set_frozen(true);
    b_.set_frozen(true);
}

template <typename T>
CorrectionNet<T>& FusionModel<T>::correction() {
    if (!corr_) throw ConfigError("average fusion has no correction net");
    return *corr_;
}

template <typename T>
const CorrectionNet<T>& FusionModel<T>::correction() const {
    if (!corr_) throw ConfigError("average fusion has no correction net");
    return *corr_;
}

template <typename T>
FusionOutput<T> FusionModel<T>::forward(Tape<T>& tape, Var<T> input_a, Var<T> input_b) {
    auto out_a = a_.forward(tape, input_a);
    auto out_b = b_.forward(tape, input_b);
    const Var<T> probs[2] = {ops::softmax_channels(out_a.logits), ops::softmax_channels(out_b.logits)};
    FusionOutput<T> out;
    out.p_avg = average_fusion<T>(probs);
    if (mode_ == FusionMode::average) {
        out.scores = out.p_avg;
        return out;
    }
    Var<T> c = corr_->forward(tape, ops::concat_channels(out_a.tap, out_b.tap));
    out.correction = c;
    out.scores = ops::add(out.p_avg, c);
    return out;
}

void FusionPatches::validate() const {
    if (images_a.ndim() != 4 || images_b.ndim() != 4) throw ShapeError("fusion patches must be P,C,w,w");
    if (images_a.dim(0) != images_b.dim(0) || images_a.dim(2) != images_b.dim(2) ||
        images_a.dim(3) != images_b.dim(3)) {
        throw ShapeError("fusion patches of the two modalities are not aligned");
    }
    if (labels.size() != images_a.dim(0) * images_a.dim(2) * images_a.dim(3)) {
        throw ShapeError("fusion label count does not match patches");
    }
}

std::vector<nn::EpochRecord> train_fusion(FusionModel<float>& model, const FusionPatches& train,
                                          const FusionSchedule& schedule, const nn::EpochCallback& on_epoch) {
    if (model.mode() != FusionMode::correction) throw ConfigError("train_fusion requires correction mode");
    for (const auto* net : {&model.stream_a(), &model.stream_b()}) {
        for (const auto& p : net->parameters()) {
            if (!p.frozen) throw ConfigError("train_fusion: stream parameter " + p.name + " is not frozen");
        }
    }
    if (schedule.epochs == 0 || schedule.batch_size == 0) throw ConfigError("fusion epochs and batch size must be positive");
    if (!(schedule.lr >= 0)) throw ConfigError("fusion learning rate must be nonnegative");
    if (train.count() == 0) throw DataError("train_fusion: empty training set");
    train.validate();

    auto& params = model.correction().parameters();
    for (auto& p : params) p.zero_grad();
    std::mt19937_64 rng(schedule.seed);
    const std::size_t per = train.images_a.dim(2) * train.images_a.dim(3);
    std::vector<nn::EpochRecord> history;
    for (std::size_t epoch = 1; epoch <= schedule.epochs; ++epoch) {
        const auto order = nn::shuffled_order(train.count(), rng);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += schedule.batch_size) {
            const std::span<const std::size_t> rows(order.data() + start,
                                                    std::min(schedule.batch_size, order.size() - start));
            const auto labels = nn::gather_labels(train.labels, per, rows);
            if (std::all_of(labels.begin(), labels.end(), [](std::uint8_t l) { return l == 255; })) continue;
            Tape<float> tape;
            auto out = model.forward(tape, tape.constant(nn::gather(train.images_a, rows)),
                                     tape.constant(nn::gather(train.images_b, rows)));
            Var<float> loss = ops::cross_entropy(out.scores, labels);
            loss_sum += loss.value()[0];
            ++batches;
            tape.backward(loss);
            nn::sgd_step<float>(params, static_cast<float>(schedule.lr));
        }
        nn::EpochRecord rec{epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0, 0.0};
        history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return history;
}

namespace {

struct Moments {
    double sum = 0, sum_sq = 0;
    std::uint64_t n = 0;

    void add(const Tensor& t) {
        for (float v : t.values()) {
            sum += v;
            sum_sq += static_cast<double>(v) * v;
        }
        n += t.size();
    }
    double mean() const { return sum / static_cast<double>(n); }
    double stddev() const {
        const double m = mean();
        return std::sqrt(std::max(0.0, sum_sq / static_cast<double>(n) - m * m));
    }
};

}  // namespace

ResidualStats residual_stats(FusionModel<float>& model, const Tensor& images_a, const Tensor& images_b,
                             std::size_t batch_size) {
    if (model.mode() != FusionMode::correction) throw ConfigError("residual_stats requires correction mode");
    if (images_a.empty() || images_a.dim(0) == 0) throw DataError("residual_stats: no patches");
    if (images_b.empty() || images_b.dim(0) != images_a.dim(0)) throw ShapeError("residual_stats: unaligned patches");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    Moments avg, corr;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < images_a.dim(0); start += batch_size) {
        rows.clear();
        for (std::size_t i = start; i < std::min(images_a.dim(0), start + batch_size); ++i) rows.push_back(i);
        Tape<float> tape(false);
        auto out = model.forward(tape, tape.constant(nn::gather(images_a, rows)),
                                 tape.constant(nn::gather(images_b, rows)));
        avg.add(out.p_avg.value());
        corr.add(out.correction.value());
    }
    return {avg.mean(), avg.stddev(), corr.mean(), corr.stddev()};
}

std::string stats_csv(const ResidualStats& s) {
    char line[160];
    std::snprintf(line, sizeof line, "m_avg,s_avg,m_corr,s_corr\n%.6f,%.6f,%.6f,%.6f\n", s.m_avg, s.s_avg, s.m_corr,
                  s.s_corr);
    return line;
}

template class CorrectionNet<float>;
template class CorrectionNet<double>;
template class FusionModel<float>;
template class FusionModel<double>;
template Var<float> average_fusion<float>(std::span<const Var<float>>);
template Var<double> average_fusion<double>(std::span<const Var<double>>);
template Tensor average_fusion<float>(std::span<const Tensor>);
template Tensor64 average_fusion<double>(std::span<const Tensor64>);
template Var<float> fuse_correct<float>(Var<float>, Var<float>, Var<float>, CorrectionNet<float>&);
template Var<double> fuse_correct<double>(Var<double>, Var<double>, Var<double>, CorrectionNet<double>&);

}  // namespace segfuse::fusion
