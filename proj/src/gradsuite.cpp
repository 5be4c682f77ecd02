#include "segfuse/gradsuite.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "segfuse/fusion.hpp"
#include "segfuse/gradcheck.hpp"
#include "segfuse/network.hpp"
#include "segfuse/ops.hpp"

namespace segfuse::gradsuite {

namespace {

using V = Var<double>;
using T64 = Tensor64;

T64 uniform(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    T64 t(shape);
    for (auto& v : t.values()) v = d(rng);
    return t;
}

std::vector<std::uint8_t> random_labels(std::size_t n, std::size_t k, std::mt19937_64& rng) {
    std::vector<std::uint8_t> out(n);
    for (auto& l : out) l = static_cast<std::uint8_t>(rng() % k);
    return out;
}

class Suite {
public:
    explicit Suite(std::uint64_t seed) : rng_(seed) {}

    void input(const std::string& name, const ScalarFn& fn, const T64& x, std::size_t want = 0) {
        const auto coords = smooth_coordinates(fn, x, kKinkMargin, want ? want : x.size(), rng_);
        add(name, coords.size(), coords.empty() ? 0.0 : grad_check(fn, x, kEps, coords));
    }

    // Checks up to `per_tensor` smooth coordinates of every parameter and
    // reports them as one entry.
    void parameters(const std::string& name, const ClosedScalarFn& fn, std::vector<Parameter<double>*> params,
                    std::size_t per_tensor) {
        std::size_t count = 0;
        double worst = 0;
        for (auto* p : params) {
            const auto coords = smooth_coordinates(fn, *p, kKinkMargin, per_tensor, rng_);
            if (coords.empty()) continue;
            count += coords.size();
            worst = std::max(worst, grad_check_parameter(fn, *p, kEps, coords));
        }
        add(name, count, worst);
    }

    std::mt19937_64& rng() { return rng_; }
    std::vector<CheckResult> take() { return std::move(results_); }

private:
    void add(const std::string& name, std::size_t coords, double err) {
        results_.push_back({name, coords, err, coords > 0 && err < kTolerance});
    }

    std::mt19937_64 rng_;
    std::vector<CheckResult> results_;
};

// Each 2x2 window holds a random permutation of four values 0.25 apart, so
// no perturbation below 0.125 can change an argmax.
T64 untied_pool_input(const Shape& shape, std::mt19937_64& rng) {
    T64 x(shape);
    const std::size_t planes = shape[0] * shape[1], h = shape[2], w = shape[3];
    std::uniform_real_distribution<double> offset(-1.0, 1.0);
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t y = 0; y < h; y += 2) {
            for (std::size_t xx = 0; xx < w; xx += 2) {
                double vals[4] = {0.0, 0.25, 0.5, 0.75};
                std::shuffle(vals, vals + 4, rng);
                const double base = offset(rng);
                double* p0 = x.data() + (p * h + y) * w + xx;
                p0[0] = base + vals[0];
                p0[1] = base + vals[1];
                p0[w] = base + vals[2];
                p0[w + 1] = base + vals[3];
            }
        }
    }
    return x;
}

void op_checks(Suite& s) {
    auto& rng = s.rng();

    {
        const T64 x = uniform({2, 3, 5, 5}, rng);
        const T64 w = uniform({4, 3, 3, 3}, rng);
        const T64 b = uniform({4}, rng);
        const T64 r = uniform({2, 4, 5, 5}, rng);
        s.input("conv2d.input",
                [&](Tape<double>& t, V v) { return ops::dot(ops::conv2d(v, t.constant(w), t.constant(b)), r); }, x);
        s.input("conv2d.weight",
                [&](Tape<double>& t, V v) { return ops::dot(ops::conv2d(t.constant(x), v, t.constant(b)), r); }, w);
        s.input("conv2d.bias",
                [&](Tape<double>& t, V v) { return ops::dot(ops::conv2d(t.constant(x), t.constant(w), v), r); }, b);
    }
    {
        // |x| in [0.1, 1] with random sign.
        T64 x = uniform({2, 3, 4, 4}, rng, 0.1, 1.0);
        for (auto& v : x.values()) v = (rng() & 1) ? v : -v;
        const T64 r = uniform(x.shape(), rng);
        s.input("relu", [&](Tape<double>&, V v) { return ops::dot(ops::relu(v), r); }, x);
    }
    {
        const T64 x = untied_pool_input({2, 2, 4, 4}, rng);
        const T64 r = uniform({2, 2, 2, 2}, rng);
        s.input("maxpool2", [&](Tape<double>&, V v) { return ops::dot(ops::maxpool2(v).values, r); }, x);

        Tape<double> pt(false);
        const auto pooled = ops::maxpool2(pt.constant(x));
        const T64 y = uniform({2, 2, 2, 2}, rng);
        const T64 ru = uniform(x.shape(), rng);
        s.input("maxunpool2",
                [&](Tape<double>&, V v) { return ops::dot(ops::maxunpool2(v, pooled.indices, 4, 4), ru); }, y);
    }
    {
        const T64 x = uniform({2, 5, 3, 3}, rng, -2.0, 2.0);
        const T64 r = uniform(x.shape(), rng);
        s.input("softmax_channels", [&](Tape<double>&, V v) { return ops::dot(ops::softmax_channels(v), r); }, x);
    }
    {
        const T64 x = uniform({1, 5, 4, 4}, rng, -2.0, 2.0);
        auto labels = random_labels(16, 5, rng);
        labels[3] = 255;
        std::vector<std::uint8_t> ignore(16, 0);
        ignore[7] = 1;
        s.input("cross_entropy", [&](Tape<double>&, V v) { return ops::cross_entropy(v, labels, ignore); }, x);
    }
    {
        const T64 a = uniform({1, 2, 3, 3}, rng);
        const T64 b = uniform({1, 3, 3, 3}, rng);
        const T64 r = uniform({1, 5, 3, 3}, rng);
        s.input("concat_channels",
                [&](Tape<double>& t, V v) { return ops::dot(ops::concat_channels(v, t.constant(b)), r); }, a);
        const T64 c = uniform({1, 2, 3, 3}, rng);
        const T64 r2 = uniform(c.shape(), rng);
        s.input("add", [&](Tape<double>& t, V v) { return ops::dot(ops::add(t.constant(c), v), r2); }, a);
        s.input("mean_of", [&](Tape<double>& t, V v) {
            const V xs[3] = {v, t.constant(c), v};
            return ops::dot(ops::mean_of<double>(xs), r2);
        }, a);
        s.input("sum", [&](Tape<double>&, V v) { return ops::sum(v); }, a);
    }
}

nn::NetworkConfig tiny_stream() {
    nn::NetworkConfig cfg;
    cfg.in_channels = 3;
    cfg.num_classes = 4;
    cfg.stage_widths = {3, 4};
    cfg.convs_per_stage = 2;
    return cfg;
}

std::vector<Parameter<double>*> pointers(std::vector<Parameter<double>>& params) {
    std::vector<Parameter<double>*> out;
    for (auto& p : params) out.push_back(&p);
    return out;
}

void stream_checks(Suite& s) {
    auto& rng = s.rng();
    nn::Network<double> net(tiny_stream(), rng());
    const T64 x = uniform({2, 3, 8, 8}, rng);
    const auto labels = random_labels(2 * 64, 4, rng);
    s.parameters("stream.parameters",
                 [&](Tape<double>& t) { return ops::cross_entropy(net.forward(t, t.constant(x)).logits, labels); },
                 pointers(net.parameters()), 3);
    s.input("stream.input",
            [&](Tape<double>& t, V v) { return ops::cross_entropy(net.forward(t, v).logits, labels); }, x, 12);
}

void fusion_checks(Suite& s) {
    auto& rng = s.rng();
    nn::NetworkConfig cfg_b = tiny_stream();
    cfg_b.stage_widths = {2, 3};
    fusion::FusionModel<double> model(nn::Network<double>(tiny_stream(), rng()), nn::Network<double>(cfg_b, rng()),
                                      fusion::FusionMode::correction, 3, rng());
    // The zero last layer would make earlier correction gradients vanish.
    auto& last = model.correction().parameters()[4];
    last.value = uniform(last.value.shape(), rng, -0.5, 0.5);

    const T64 xa = uniform({1, 3, 8, 8}, rng);
    const T64 xb = uniform({1, 3, 8, 8}, rng);
    const auto labels = random_labels(64, 4, rng);
    auto loss = [&](Tape<double>& t) {
        return ops::cross_entropy(model.forward(t, t.constant(xa), t.constant(xb)).scores, labels);
    };
    s.parameters("fusion.correction", loss, pointers(model.correction().parameters()), 3);
    auto streams = pointers(model.stream_a().parameters());
    for (auto* p : pointers(model.stream_b().parameters())) streams.push_back(p);
    s.parameters("fusion.streams", loss, streams, 2);
    s.input("fusion.input_a", [&](Tape<double>& t, V v) {
        return ops::cross_entropy(model.forward(t, v, t.constant(xb)).scores, labels);
    }, xa, 12);
    s.input("fusion.input_b", [&](Tape<double>& t, V v) {
        return ops::cross_entropy(model.forward(t, t.constant(xa), v).scores, labels);
    }, xb, 12);
}

}  // namespace

std::vector<CheckResult> run(std::uint64_t seed) {
    Suite s(seed);
    op_checks(s);
    stream_checks(s);
    fusion_checks(s);
    return s.take();
}

bool all_passed(const std::vector<CheckResult>& results) {
    return !results.empty() && std::all_of(results.begin(), results.end(), [](const auto& r) { return r.passed; });
}

std::string report_csv(const std::vector<CheckResult>& results) {
    std::string out = "check,coordinates,max_rel_error,status\n";
    char line[160];
    for (const auto& r : results) {
        std::snprintf(line, sizeof line, "%s,%zu,%.3e,%s\n", r.name.c_str(), r.coordinates, r.max_error,
                      r.passed ? "ok" : "FAIL");
        out += line;
    }
    return out;
}

}  // namespace segfuse::gradsuite
