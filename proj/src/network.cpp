#include "segfuse/network.hpp"

#include <cmath>
#include <memory>

#include "segfuse/ops.hpp"
#include "segfuse/simd/kernels.hpp"

namespace segfuse::nn {

void NetworkConfig::validate() const {
    if (in_channels == 0) throw ConfigError("in_channels must be positive");
    if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must be in [2, 255]");
    if (stage_widths.empty()) throw ConfigError("at least one encoder stage is required");
    for (std::size_t w : stage_widths) {
        if (w == 0) throw ConfigError("stage widths must be positive");
    }
    if (convs_per_stage == 0) throw ConfigError("convs_per_stage must be positive");
    if (tap_stage >= stage_widths.size()) throw ConfigError("tap_stage out of range");
}

std::size_t NetworkConfig::tap_channels() const {
    return tap_stage > 0 ? stage_widths[tap_stage - 1] : stage_widths[0];
}

std::vector<std::pair<std::size_t, std::size_t>> conv_layout(const NetworkConfig& cfg) {
    std::vector<std::pair<std::size_t, std::size_t>> layers;
    const auto& w = cfg.stage_widths;
    for (std::size_t s = 0; s < w.size(); ++s) {
        for (std::size_t j = 0; j < cfg.convs_per_stage; ++j) {
            const std::size_t cin = j > 0 ? w[s] : (s > 0 ? w[s - 1] : cfg.in_channels);
            layers.emplace_back(w[s], cin);
        }
    }
    for (std::size_t s = w.size(); s-- > 0;) {
        for (std::size_t j = 0; j < cfg.convs_per_stage; ++j) {
            const bool last = j + 1 == cfg.convs_per_stage;
            const std::size_t cout = last ? (s > 0 ? w[s - 1] : w[0]) : w[s];
            layers.emplace_back(cout, w[s]);
        }
    }
    layers.emplace_back(cfg.num_classes, w[0]);
    return layers;
}

template <typename T>
void init_conv(Parameter<T>& weight, Parameter<T>& bias, std::size_t cout, std::size_t cin, Init init,
               std::mt19937_64& rng) {
    weight.value = BasicTensor<T>({cout, cin, 3, 3});
    bias.value = BasicTensor<T>({cout});
    weight.grad = BasicTensor<T>();
    bias.grad = BasicTensor<T>();
    if (init == Init::zero) return;
    const double limit = std::sqrt(6.0 / static_cast<double>(cin * 9 + cout * 9));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (auto& v : weight.value.values()) v = static_cast<T>(dist(rng));
}

template <typename T>
Network<T>::Network(NetworkConfig cfg, std::uint64_t seed, Init init) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const auto layout = conv_layout(cfg_);
    std::vector<std::string> names;
    const std::size_t stages = cfg_.stages();
    for (std::size_t s = 0; s < stages; ++s) {
        for (std::size_t j = 0; j < cfg_.convs_per_stage; ++j) {
            names.push_back("enc" + std::to_string(s) + ".conv" + std::to_string(j));
        }
    }
    for (std::size_t s = stages; s-- > 0;) {
        for (std::size_t j = 0; j < cfg_.convs_per_stage; ++j) {
            names.push_back("dec" + std::to_string(s) + ".conv" + std::to_string(j));
        }
    }
    names.push_back("classifier");

    std::mt19937_64 rng(seed);
    params_.resize(2 * layout.size());
    for (std::size_t i = 0; i < layout.size(); ++i) {
        Parameter<T>& w = params_[2 * i];
        Parameter<T>& b = params_[2 * i + 1];
        w.name = names[i] + ".weight";
        b.name = names[i] + ".bias";
        init_conv(w, b, layout[i].first, layout[i].second, init, rng);
    }
}

template <typename T>
Parameter<T>& Network<T>::parameter(std::string_view name) {
    for (auto& p : params_) {
        if (p.name == name) return p;
    }
    throw Error("no parameter named " + std::string(name));
}

template <typename T>
std::size_t Network<T>::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
}

template <typename T>
void Network<T>::set_frozen(bool frozen) {
    for (auto& p : params_) p.frozen = frozen;
}

template <typename T>
StreamOutput<T> Network<T>::forward(Tape<T>& tape, Var<T> input) {
    const Shape& in = input.shape();
    if (in.size() != 4 || in[1] != cfg_.in_channels) {
        throw ShapeError("stream expects N," + std::to_string(cfg_.in_channels) + ",H,W input, got " + shape_str(in));
    }
    const std::size_t mult = cfg_.spatial_multiple();
    if (in[2] % mult != 0 || in[3] % mult != 0) {
        throw ShapeError("stream input height and width must be multiples of " + std::to_string(mult));
    }

    std::size_t next = 0;
    auto conv = [&](Var<T> x, bool activate) {
        Var<T> w = tape.parameter(params_[next++]);
        Var<T> b = tape.parameter(params_[next++]);
        Var<T> y = ops::conv2d(x, w, b);
        return activate ? ops::relu(y) : y;
    };

    const std::size_t stages = cfg_.stages();
    std::vector<std::shared_ptr<const ops::PoolIndices>> pools(stages);
    std::vector<std::pair<std::size_t, std::size_t>> sizes(stages);
    Var<T> x = input;
    for (std::size_t s = 0; s < stages; ++s) {
        for (std::size_t j = 0; j < cfg_.convs_per_stage; ++j) x = conv(x, true);
        sizes[s] = {x.shape()[2], x.shape()[3]};
        auto pooled = ops::maxpool2(x);
        pools[s] = pooled.indices;
        x = pooled.values;
    }
    Var<T> tap;
    for (std::size_t s = stages; s-- > 0;) {
        x = ops::maxunpool2(x, pools[s], sizes[s].first, sizes[s].second);
        for (std::size_t j = 0; j < cfg_.convs_per_stage; ++j) x = conv(x, true);
        if (s == cfg_.tap_stage) tap = x;
    }
    Var<T> logits = conv(x, false);
    return {logits, tap};
}

template <typename T>
void sgd_step(std::span<Parameter<T>> params, T lr) {
    for (auto& p : params) {
        if (p.frozen) continue;
        if (p.grad.shape() != p.value.shape()) throw Error("sgd_step: parameter " + p.name + " has no gradient");
    }
    const auto& k = simd::kernels<T>();
    for (auto& p : params) {
        if (p.frozen) continue;
        if (lr != T(0)) k.axpy(p.value.size(), -lr, p.grad.data(), p.value.data());
        p.grad.fill(T(0));
    }
}

template class Network<float>;
template class Network<double>;
template void init_conv<float>(Parameter<float>&, Parameter<float>&, std::size_t, std::size_t, Init,
                               std::mt19937_64&);
template void init_conv<double>(Parameter<double>&, Parameter<double>&, std::size_t, std::size_t, Init,
                                std::mt19937_64&);
template void sgd_step<float>(std::span<Parameter<float>>, float);
template void sgd_step<double>(std::span<Parameter<double>>, double);

}  // namespace segfuse::nn
