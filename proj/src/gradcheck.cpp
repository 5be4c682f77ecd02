#include "segfuse/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "segfuse/ops.hpp"

namespace segfuse {
namespace {

std::vector<std::size_t> all_or(std::span<const std::size_t> coords, std::size_t n) {
    if (!coords.empty()) return {coords.begin(), coords.end()};
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
}

double eval_at(const ScalarFn& fn, const Tensor64& x) {
    Tape<double> tape(false);
    return fn(tape, tape.constant(x)).value()[0];
}

double eval_closed(const ClosedScalarFn& fn) {
    Tape<double> tape(false);
    return fn(tape).value()[0];
}

template <typename Eval>
std::vector<std::size_t> smooth_impl(std::size_t n, double radius, std::size_t want, std::mt19937_64& rng,
                                     Eval pattern_with_offset) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const std::uint64_t base = pattern_with_offset(0, 0.0);
    std::vector<std::size_t> out;
    for (std::size_t i : order) {
        if (out.size() == want) break;
        // Midpoints too, so a kink crossed and recrossed is still caught.
        bool same = true;
        for (double t : {-1.0, -0.5, 0.5, 1.0}) {
            if (pattern_with_offset(i, t * radius) != base) {
                same = false;
                break;
            }
        }
        if (same) out.push_back(i);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

std::vector<std::size_t> smooth_coordinates(const ScalarFn& fn, const Tensor64& x, double radius, std::size_t want,
                                            std::mt19937_64& rng) {
    Tensor64 probe = x;
    return smooth_impl(x.size(), radius, want, rng, [&](std::size_t i, double offset) {
        const double orig = probe[i];
        probe[i] = orig + offset;
        ops::testing::begin_pattern_probe();
        eval_at(fn, probe);
        probe[i] = orig;
        return ops::testing::end_pattern_probe();
    });
}

std::vector<std::size_t> smooth_coordinates(const ClosedScalarFn& fn, Parameter<double>& p, double radius,
                                            std::size_t want, std::mt19937_64& rng) {
    return smooth_impl(p.value.size(), radius, want, rng, [&](std::size_t i, double offset) {
        const double orig = p.value[i];
        p.value[i] = orig + offset;
        ops::testing::begin_pattern_probe();
        eval_closed(fn);
        p.value[i] = orig;
        return ops::testing::end_pattern_probe();
    });
}

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

double grad_check(const ScalarFn& fn, const Tensor64& x, double eps, std::span<const std::size_t> coords) {
    Tape<double> tape;
    const Var<double> xv = tape.variable(x);
    tape.backward(fn(tape, xv));
    Tensor64 analytic = tape.grad(xv);
    if (analytic.empty()) analytic = Tensor64(x.shape());

    double worst = 0;
    Tensor64 probe = x;
    for (const std::size_t i : all_or(coords, x.size())) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double fp = eval_at(fn, probe);
        probe[i] = orig - eps;
        const double fm = eval_at(fn, probe);
        probe[i] = orig;
        worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2 * eps)));
    }
    return worst;
}

double grad_check_parameter(const ClosedScalarFn& fn, Parameter<double>& p, double eps,
                            std::span<const std::size_t> coords) {
    const bool was_frozen = p.frozen;
    p.frozen = false;
    p.grad = Tensor64(p.value.shape());
    {
        Tape<double> tape;
        tape.backward(fn(tape));
    }
    const Tensor64 analytic = p.grad;

    double worst = 0;
    for (const std::size_t i : all_or(coords, p.value.size())) {
        const double orig = p.value[i];
        p.value[i] = orig + eps;
        const double fp = eval_closed(fn);
        p.value[i] = orig - eps;
        const double fm = eval_closed(fn);
        p.value[i] = orig;
        worst = std::max(worst, relative_error(analytic[i], (fp - fm) / (2 * eps)));
    }
    p.grad.fill(0.0);
    p.frozen = was_frozen;
    return worst;
}

}  // namespace segfuse
