#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segfuse/tape.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse::nn {

/// Shape of one encoder-decoder stream. Each encoder stage is
/// `convs_per_stage` x (conv3x3 + relu) followed by a 2x2 max pool; the
/// decoder mirrors it with max unpooling, and a final conv3x3 maps to
/// `num_classes` scores.
struct NetworkConfig {
    std::size_t in_channels = 3;
    std::size_t num_classes = 5;
    std::vector<std::size_t> stage_widths{16, 32};
    std::size_t convs_per_stage = 2;
    // Decoder stage whose output is exported as the fusion tap, indexed by the
    // encoder stage it mirrors. 0 is the last, full-resolution decoder stage.
    std::size_t tap_stage = 0;

    void validate() const;
    std::size_t stages() const { return stage_widths.size(); }
    /// Channel count of the tap tensor.
    std::size_t tap_channels() const;
    /// Input height and width must be multiples of this.
    std::size_t spatial_multiple() const { return std::size_t{1} << stages(); }

    bool operator==(const NetworkConfig&) const = default;
};

enum class Init {
    glorot,  // uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases
    zero,    // every parameter zero (test hook)
};

template <typename T>
struct StreamOutput {
    Var<T> logits;
    Var<T> tap;
};

template <typename T>
class Network {
public:
    Network(NetworkConfig cfg, std::uint64_t seed, Init init = Init::glorot);

    const NetworkConfig& config() const { return cfg_; }

    std::vector<Parameter<T>>& parameters() { return params_; }
    const std::vector<Parameter<T>>& parameters() const { return params_; }
    Parameter<T>& parameter(std::string_view name);

    /// Total number of scalar weights and biases.
    std::size_t scalar_count() const;

    void set_frozen(bool frozen);

    /// Taped forward pass of an N,C,H,W batch.
    StreamOutput<T> forward(Tape<T>& tape, Var<T> input);

    template <typename U>
    Network<U> cast() const {
        Network<U> out(cfg_, 0, Init::zero);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            out.parameters()[i].value = params_[i].value.template cast<U>();
            out.parameters()[i].frozen = params_[i].frozen;
        }
        return out;
    }

private:
    NetworkConfig cfg_;
    std::vector<Parameter<T>> params_;
};

template <typename T>
Network<T> build_stream(const NetworkConfig& cfg, std::uint64_t seed, Init init = Init::glorot) {
    return Network<T>(cfg, seed, init);
}

/// Conv layer shapes of a stream in parameter order, (cout, cin) per layer.
std::vector<std::pair<std::size_t, std::size_t>> conv_layout(const NetworkConfig& cfg);

/// Weight shape [cout, cin, 3, 3] plus bias [cout], initialized per `init`.
template <typename T>
void init_conv(Parameter<T>& weight, Parameter<T>& bias, std::size_t cout, std::size_t cin, Init init,
               std::mt19937_64& rng);

/// p <- p - lr * g for every non-frozen parameter, then zero the gradients.
/// Throws Error if a trainable parameter has no gradient.
template <typename T>
void sgd_step(std::span<Parameter<T>> params, T lr);

}  // namespace segfuse::nn
