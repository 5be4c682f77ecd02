#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segfuse/network.hpp"
#include "segfuse/train.hpp"

namespace segfuse::fusion {

enum class FusionMode : std::uint8_t { average = 1, correction = 2 };

std::string_view mode_name(FusionMode mode);
/// "average" or "correction"; throws ConfigError otherwise.
FusionMode parse_mode(std::string_view text);

inline constexpr std::size_t kDefaultHiddenWidth = 32;

/// Three 3x3 convolutions (relu after the first two) mapping concatenated
/// stream taps to a K-channel correction. The last layer starts at zero, so a
/// fresh net outputs exactly zero.
template <typename T>
class CorrectionNet {
public:
    CorrectionNet(std::size_t in_channels, std::size_t hidden, std::size_t num_classes, std::uint64_t seed,
                  nn::Init init = nn::Init::glorot);

    std::size_t in_channels() const { return in_channels_; }
    std::size_t hidden() const { return hidden_; }
    std::size_t num_classes() const { return num_classes_; }

    std::vector<Parameter<T>>& parameters() { return params_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }

    Var<T> forward(Tape<T>& tape, Var<T> features);

    template <typename U>
    CorrectionNet<U> cast() const {
        CorrectionNet<U> out(in_channels_, hidden_, num_classes_, 0, nn::Init::zero);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out.parameters()[i].value = params_[i].value.template cast<U>();
            out.parameters()[i].frozen = params_[i].frozen;
        }
        return out;
    }

private:
    std::size_t in_channels_, hidden_, num_classes_;
    std::vector<Parameter<T>> params_;
};

/// Elementwise mean of R probability maps. Throws ShapeError on an empty list
/// or mismatched shapes.
template <typename T>
Var<T> average_fusion(std::span<const Var<T>> probs);
template <typename T>
BasicTensor<T> average_fusion(std::span<const BasicTensor<T>> probs);

/// p_avg + corr(concat(tap_a, tap_b)). Throws ShapeError when the taps are not
/// aligned with p_avg.
template <typename T>
Var<T> fuse_correct(Var<T> p_avg, Var<T> tap_a, Var<T> tap_b, CorrectionNet<T>& corr);

template <typename T>
struct FusionOutput {
    Var<T> scores;      // p_avg in average mode, p_avg + c in correction mode
    Var<T> p_avg;
    Var<T> correction;  // invalid in average mode
};

/// Two streams (A optical, B composite) plus the fusion head. Construction
/// freezes both streams.
template <typename T>
class FusionModel {
public:
    /// Throws ModelMismatchError when the streams disagree on the class count
    /// or produce taps of different spatial scale.
    FusionModel(nn::Network<T> stream_a, nn::Network<T> stream_b, FusionMode mode,
                std::size_t hidden = kDefaultHiddenWidth, std::uint64_t seed = 1);

    FusionMode mode() const { return mode_; }
    std::size_t num_classes() const { return a_.config().num_classes; }
    nn::Network<T>& stream_a() { return a_; }
    nn::Network<T>& stream_b() { return b_; }
    const nn::Network<T>& stream_a() const { return a_; }
    const nn::Network<T>& stream_b() const { return b_; }
    bool has_correction() const { return corr_.has_value(); }
    /// Throws ConfigError in average mode.
    CorrectionNet<T>& correction();
    const CorrectionNet<T>& correction() const;

    FusionOutput<T> forward(Tape<T>& tape, Var<T> input_a, Var<T> input_b);

    template <typename U>
    FusionModel<U> cast() const {
        FusionModel<U> out(a_.template cast<U>(), b_.template cast<U>(), mode_, corr_ ? corr_->hidden() : 0, 0);
        if (corr_) out.correction() = corr_->template cast<U>();
        return out;
    }

private:
    nn::Network<T> a_, b_;
    FusionMode mode_;
    std::optional<CorrectionNet<T>> corr_;
};

/// Aligned patches of both modalities with their labels.
struct FusionPatches {
    Tensor images_a;
    Tensor images_b;
    std::vector<std::uint8_t> labels;

    std::size_t count() const { return images_a.empty() ? 0 : images_a.dim(0); }
    void validate() const;
};

struct FusionSchedule {
    std::size_t epochs = 1;
    double lr = 0.01;
    std::size_t batch_size = 4;
    std::uint64_t seed = 20170101;
};

/// Fine-tunes the correction net on cross_entropy(P', labels). Throws
/// ConfigError outside correction mode or if a stream parameter is trainable.
std::vector<nn::EpochRecord> train_fusion(FusionModel<float>& model, const FusionPatches& train,
                                          const FusionSchedule& schedule, const nn::EpochCallback& on_epoch = {});

/// Mean and population standard deviation of the averaged probabilities and
/// of the correction output over all samples, channels and pixels.
struct ResidualStats {
    double m_avg = 0, s_avg = 0, m_corr = 0, s_corr = 0;
};

/// Throws ConfigError outside correction mode and DataError on no patches.
ResidualStats residual_stats(FusionModel<float>& model, const Tensor& images_a, const Tensor& images_b,
                             std::size_t batch_size = 16);

/// "m_avg,s_avg,m_corr,s_corr" header and one value line.
std::string stats_csv(const ResidualStats& stats);

}  // namespace segfuse::fusion
