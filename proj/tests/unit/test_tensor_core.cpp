#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "../oracles.hpp"
#include "segfuse/gradcheck.hpp"
#include "segfuse/network.hpp"
#include "segfuse/ops.hpp"
#include "segfuse/simd/kernels.hpp"

using namespace segfuse;
using T64 = Tensor64;
using V = Var<double>;

namespace {

struct MutationGuard {
    ~MutationGuard() { ops::testing::reset_mutations(); }
};

Tensor conv_once(const Tensor& x, const Tensor& w, const Tensor& b) {
    Tape<float> t(false);
    return ops::conv2d(t.constant(x), t.constant(w), t.constant(b)).value();
}

}  // namespace

TEST_SUITE("tensor-core") {
    TEST_CASE("tensor construction and shape contract") {
        Tensor t({2, 3, 4});
        CHECK(t.size() == 24);
        CHECK(t.ndim() == 3);
        CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);
        CHECK(t.reshaped({4, 6}).dim(1) == 6);
        CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
        Tensor bad({2}, std::vector<float>{1, std::numeric_limits<float>::quiet_NaN()});
        CHECK_THROWS_AS(require_finite(bad, "bad"), Error);
        CHECK_NOTHROW(require_finite(t, "t"));
    }

    TEST_CASE("conv2d all-ones input and kernel counts overlaps") {
        const Tensor out = conv_once(Tensor({1, 1, 3, 3}, 1.0f), Tensor({1, 1, 3, 3}, 1.0f), Tensor({1}));
        const float expect[] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
        for (int i = 0; i < 9; ++i) CHECK(out[i] == expect[i]);
    }

    TEST_CASE("conv2d with zero weights yields the bias everywhere") {
        std::mt19937_64 rng(1);
        const Tensor x = oracle::random_tensor<float>({2, 3, 4, 5}, rng);
        const Tensor out = conv_once(x, Tensor({2, 3, 3, 3}), Tensor({2}, std::vector<float>{0.5f, -2.0f}));
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t y = 0; y < 4; ++y)
                for (std::size_t xx = 0; xx < 5; ++xx) {
                    CHECK(out.at(n, 0, y, xx) == 0.5f);
                    CHECK(out.at(n, 1, y, xx) == -2.0f);
                }
    }

    TEST_CASE("conv2d matches the nested-loop oracle") {
        std::mt19937_64 rng(2);
        const Tensor x = oracle::random_tensor<float>({1, 2, 5, 5}, rng);
        const Tensor w = oracle::random_tensor<float>({3, 2, 3, 3}, rng);
        const Tensor b = oracle::random_tensor<float>({3}, rng);
        const Tensor got = conv_once(x, w, b);
        const Tensor want = oracle::conv2d(x, w, b);
        for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - want[i]) < 1e-6);
    }

    TEST_CASE("conv2d agrees across kernel variants") {
        const simd::Isa before = simd::active_isa();
        std::mt19937_64 rng(4);
        const Tensor x = oracle::random_tensor<float>({2, 5, 12, 10}, rng);
        const Tensor w = oracle::random_tensor<float>({7, 5, 3, 3}, rng);
        const Tensor b = oracle::random_tensor<float>({7}, rng);
        simd::set_active_isa(simd::Isa::scalar);
        const Tensor ref = conv_once(x, w, b);
        simd::set_active_isa(simd::detected_isa());
        const Tensor fast = conv_once(x, w, b);
        simd::set_active_isa(before);
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(ref[i] - fast[i]) < 1e-5);
    }

    TEST_CASE("conv2d errors") {
        Tape<float> t;
        CHECK_THROWS_AS(ops::conv2d(t.constant(Tensor({1, 2, 4, 4})), t.constant(Tensor({1, 3, 3, 3})),
                                    t.constant(Tensor({1}))),
                        ShapeError);
        CHECK_THROWS_AS(ops::conv2d(t.constant(Tensor({1, 2, 4, 4})), t.constant(Tensor({1, 2, 5, 5})),
                                    t.constant(Tensor({1}))),
                        ShapeError);
        CHECK_THROWS_AS(ops::conv2d(t.constant(Tensor({1, 2, 4, 4})), t.constant(Tensor({1, 2, 3, 3})),
                                    t.constant(Tensor({2}))),
                        ShapeError);
    }

    TEST_CASE("relu forward") {
        Tape<float> t;
        const auto y = ops::relu(t.constant(Tensor({3}, std::vector<float>{-1, 0, 2}))).value();
        CHECK(y == Tensor({3}, std::vector<float>{0, 0, 2}));
        const auto z = ops::relu(t.constant(Tensor({4}, -3.0f))).value();
        CHECK(z == Tensor({4}, 0.0f));
    }

    TEST_CASE("relu gradient matches finite differences away from the kink") {
        std::mt19937_64 rng(5);
        T64 x = oracle::random_tensor<double>({40}, rng, 0.1, 2.0);
        for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
        const T64 r = oracle::random_tensor<double>({40}, rng);
        CHECK(grad_check([&](Tape<double>&, V v) { return ops::dot(ops::relu(v), r); }, x) < 1e-4);
    }

    TEST_CASE("maxpool2 picks the maximum and records its position") {
        Tape<float> t;
        const auto p = ops::maxpool2(t.constant(Tensor({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4})));
        CHECK(p.values.value()[0] == 4);
        CHECK(p.indices->argmax[0] == 3);
        const auto tie = ops::maxpool2(t.constant(Tensor({1, 1, 2, 2}, 7.0f)));
        CHECK(tie.indices->argmax[0] == 0);
    }

    TEST_CASE("maxpool2 matches the exhaustive window scan") {
        std::mt19937_64 rng(6);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor x = oracle::random_tensor<float>({1, 1, 4, 4}, rng);
            // Quantize so ties actually occur.
            for (auto& v : x.values()) v = std::round(v * 2) / 2;
            Tape<float> t;
            const auto p = ops::maxpool2(t.constant(x));
            const auto want = oracle::maxpool2(x);
            for (std::size_t i = 0; i < 4; ++i) {
                CHECK(p.values.value()[i] == want.values[i]);
                CHECK(p.indices->argmax[i] == want.argmax[i]);
            }
        }
    }

    TEST_CASE("maxpool2 rejects odd sizes") {
        Tape<float> t;
        CHECK_THROWS_AS(ops::maxpool2(t.constant(Tensor({1, 1, 3, 4}))), ShapeError);
        CHECK_THROWS_AS(ops::maxpool2(t.constant(Tensor({1, 1, 4, 5}))), ShapeError);
    }

    TEST_CASE("maxunpool2 inverts pooling at the argmax positions") {
        Tape<float> t;
        const auto p = ops::maxpool2(t.constant(Tensor({1, 1, 2, 2}, std::vector<float>{1, 2, 3, 4})));
        const auto u = ops::maxunpool2(p.values, p.indices, 2, 2).value();
        CHECK(u == Tensor({1, 1, 2, 2}, std::vector<float>{0, 0, 0, 4}));
    }

    TEST_CASE("maxunpool2 round trip keeps exactly the argmax entries") {
        std::mt19937_64 rng(7);
        for (int trial = 0; trial < 10; ++trial) {
            const Tensor x = oracle::random_tensor<float>({2, 3, 6, 8}, rng);
            Tape<float> t;
            const auto p = ops::maxpool2(t.constant(x));
            const auto u = ops::maxunpool2(p.values, p.indices, 6, 8).value();
            REQUIRE(u.shape() == x.shape());
            const auto scan = oracle::maxpool2(x);
            std::size_t o = 0;
            for (std::size_t n = 0; n < 2; ++n)
                for (std::size_t c = 0; c < 3; ++c)
                    for (std::size_t y = 0; y < 6; y += 2)
                        for (std::size_t xx = 0; xx < 8; xx += 2, ++o)
                            for (std::uint8_t k = 0; k < 4; ++k) {
                                const float got = u.at(n, c, y + k / 2, xx + k % 2);
                                if (k == scan.argmax[o]) {
                                    CHECK(got == x.at(n, c, y + k / 2, xx + k % 2));
                                } else {
                                    CHECK(got == 0.0f);
                                }
                            }
        }
    }

    TEST_CASE("maxunpool2 errors") {
        Tape<float> t;
        const auto p = ops::maxpool2(t.constant(Tensor({1, 1, 4, 4})));
        CHECK_THROWS_AS(ops::maxunpool2(p.values, p.indices, 2, 2), ShapeError);
        CHECK_THROWS_AS(ops::maxunpool2(t.constant(Tensor({1, 2, 2, 2})), p.indices, 4, 4), ShapeError);
    }

    TEST_CASE("pooling gradients match finite differences on untied windows") {
        std::mt19937_64 rng(8);
        T64 x({1, 2, 4, 4});
        for (std::size_t i = 0; i < x.size(); ++i) x[i] = 0.2 * static_cast<double>((i * 7) % 16);
        const T64 r = oracle::random_tensor<double>({1, 2, 2, 2}, rng);
        CHECK(grad_check([&](Tape<double>&, V v) { return ops::dot(ops::maxpool2(v).values, r); }, x) < 1e-4);
    }

    TEST_CASE("softmax_channels is a per-pixel simplex") {
        Tape<float> t;
        const auto u = ops::softmax_channels(t.constant(Tensor({1, 5, 2, 2}))).value();
        for (float v : u.values()) CHECK(v == doctest::Approx(0.2f));

        std::mt19937_64 rng(9);
        const Tensor x = oracle::random_tensor<float>({2, 5, 3, 4}, rng, -10, 10);
        const auto p = ops::softmax_channels(t.constant(x)).value();
        Tensor shifted = x;
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t y = 0; y < 3; ++y)
                for (std::size_t xx = 0; xx < 4; ++xx) {
                    const float c = static_cast<float>(n * 12 + y * 4 + xx) * 3.0f - 20.0f;
                    for (std::size_t k = 0; k < 5; ++k) shifted.at(n, k, y, xx) += c;
                }
        const auto q = ops::softmax_channels(t.constant(shifted)).value();
        for (std::size_t i = 0; i < p.size(); ++i) {
            CHECK(p[i] >= 0.0f);
            CHECK(std::abs(p[i] - q[i]) < 1e-6);
        }
        for (std::size_t n = 0; n < 2; ++n)
            for (std::size_t y = 0; y < 3; ++y)
                for (std::size_t xx = 0; xx < 4; ++xx) {
                    double s = 0;
                    for (std::size_t k = 0; k < 5; ++k) s += p.at(n, k, y, xx);
                    CHECK(std::abs(s - 1.0) < 1e-6);
                }
        CHECK_THROWS_AS(ops::softmax_channels(t.constant(Tensor({1, 1, 2, 2}))), ShapeError);
    }

    TEST_CASE("softmax_channels gradient") {
        std::mt19937_64 rng(10);
        const T64 x = oracle::random_tensor<double>({2, 4, 3, 3}, rng, -3, 3);
        const T64 r = oracle::random_tensor<double>(x.shape(), rng);
        CHECK(grad_check([&](Tape<double>&, V v) { return ops::dot(ops::softmax_channels(v), r); }, x) < 1e-4);
    }

    TEST_CASE("cross_entropy values") {
        Tape<double> t;
        const std::vector<std::uint8_t> labels(4, 2);
        CHECK(ops::cross_entropy(t.constant(T64({1, 5, 2, 2})), labels).value()[0] ==
              doctest::Approx(std::log(5.0)).epsilon(1e-12));
        T64 sat({1, 5, 1, 1});
        sat[3] = 1000;
        CHECK(ops::cross_entropy(t.constant(sat), std::vector<std::uint8_t>{3}).value()[0] < 1e-6);
    }

    TEST_CASE("cross_entropy ignores void and masked pixels") {
        std::mt19937_64 rng(11);
        const T64 x = oracle::random_tensor<double>({1, 3, 1, 4}, rng);
        Tape<double> t;
        const double full =
            ops::cross_entropy(t.constant(x), std::vector<std::uint8_t>{0, 1, 255, 2}).value()[0];
        const double masked = ops::cross_entropy(t.constant(x), std::vector<std::uint8_t>{0, 1, 1, 2},
                                                 std::vector<std::uint8_t>{0, 0, 1, 0})
                                  .value()[0];
        CHECK(full == doctest::Approx(masked).epsilon(1e-14));
    }

    TEST_CASE("cross_entropy errors") {
        Tape<double> t;
        const auto x = t.constant(T64({1, 3, 1, 2}));
        CHECK_THROWS_AS(ops::cross_entropy(x, std::vector<std::uint8_t>{255, 255}), DataError);
        CHECK_THROWS_AS(ops::cross_entropy(x, std::vector<std::uint8_t>{0, 1}, std::vector<std::uint8_t>{1, 1}),
                        DataError);
        CHECK_THROWS_AS(ops::cross_entropy(x, std::vector<std::uint8_t>{0, 3}), DataError);
        CHECK_THROWS_AS(ops::cross_entropy(x, std::vector<std::uint8_t>{0}), ShapeError);
    }

    TEST_CASE("cross_entropy gradient") {
        std::mt19937_64 rng(12);
        const T64 x = oracle::random_tensor<double>({1, 5, 4, 4}, rng, -2, 2);
        std::vector<std::uint8_t> labels(16);
        for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 5);
        CHECK(grad_check([&](Tape<double>&, V v) { return ops::cross_entropy(v, labels); }, x) < 1e-4);
    }

    TEST_CASE("backward basics") {
        Tape<double> t;
        const V x = t.variable(T64({1}, 3.0));
        const V y = ops::dot(x, T64({1}, 2.0));
        t.backward(y);
        CHECK(t.grad(x)[0] == 2.0);

        Tape<double> r;
        const V xr = r.variable(T64({3}, std::vector<double>{-1, -2, -0.5}));
        r.backward(ops::sum(ops::relu(xr)));
        for (double g : r.grad(xr).values()) CHECK(g == 0.0);

        Tape<double> empty;
        Tape<double> other;
        CHECK_THROWS_AS(empty.backward(other.constant(T64({1}))), Error);
        CHECK_THROWS_AS(other.backward(other.variable(T64({2}))), ShapeError);
    }

    TEST_CASE("repeated backward accumulates parameter gradients") {
        Parameter<double> p{"p", T64({2}, std::vector<double>{1, 2}), {}, false};
        Tape<double> t;
        const V loss = ops::dot(t.parameter(p), T64({2}, std::vector<double>{3, 4}));
        t.backward(loss);
        CHECK(p.grad == T64({2}, std::vector<double>{3, 4}));
        t.backward(loss);
        CHECK(p.grad == T64({2}, std::vector<double>{6, 8}));
        p.zero_grad();
        CHECK(p.grad == T64({2}));
    }

    TEST_CASE("clear releases the tape") {
        Tape<float> t;
        ops::relu(t.constant(Tensor({4}, 1.0f)));
        CHECK(t.size() == 2);
        t.clear();
        CHECK(t.empty());
    }

    TEST_CASE("sgd_step") {
        Parameter<float> p{"p", Tensor({1}, 1.0f), Tensor({1}, 0.5f), false};
        std::vector<Parameter<float>> ps{p};
        nn::sgd_step<float>(ps, 0.1f);
        CHECK(ps[0].value[0] == doctest::Approx(0.95f));
        CHECK(ps[0].grad[0] == 0.0f);

        ps[0].grad[0] = 0.7f;
        const Tensor before = ps[0].value;
        nn::sgd_step<float>(ps, 0.0f);
        CHECK(ps[0].value == before);

        ps[0].frozen = true;
        ps[0].grad[0] = 3.0f;
        nn::sgd_step<float>(ps, 0.1f);
        CHECK(ps[0].value == before);

        std::vector<Parameter<float>> missing{{"m", Tensor({2}, 1.0f), {}, false}};
        CHECK_THROWS_AS(nn::sgd_step<float>(missing, 0.1f), Error);
        missing[0].frozen = true;
        CHECK_NOTHROW(nn::sgd_step<float>(missing, 0.1f));
    }

    TEST_CASE("grad_check on conv2d plus sum") {
        std::mt19937_64 rng(13);
        const T64 x = oracle::random_tensor<double>({1, 2, 4, 4}, rng);
        const T64 w = oracle::random_tensor<double>({3, 2, 3, 3}, rng);
        const T64 b = oracle::random_tensor<double>({3}, rng);
        CHECK(grad_check([&](Tape<double>& t, V v) { return ops::sum(ops::conv2d(v, t.constant(w), t.constant(b))); },
                         x, 1e-5) < 1e-4);
        CHECK(grad_check([&](Tape<double>& t, V v) { return ops::sum(ops::conv2d(t.constant(x), v, t.constant(b))); },
                         w, 1e-5) < 1e-4);
    }

    TEST_CASE("grad_check is exact on linear maps") {
        std::mt19937_64 rng(14);
        const T64 x = oracle::random_tensor<double>({12}, rng);
        const T64 r = oracle::random_tensor<double>({12}, rng);
        // No truncation error on a linear map, so a larger step only shrinks rounding.
        CHECK(grad_check([&](Tape<double>&, V v) { return ops::dot(v, r); }, x, 1e-3) < 1e-10);
    }

    TEST_CASE("grad_check detects a doubled backward rule") {
        MutationGuard guard;
        std::mt19937_64 rng(15);
        const T64 x = oracle::random_tensor<double>({1, 2, 4, 4}, rng);
        const T64 w = oracle::random_tensor<double>({2, 2, 3, 3}, rng);
        const T64 b = oracle::random_tensor<double>({2}, rng);
        auto fn = [&](Tape<double>& t, V v) { return ops::sum(ops::conv2d(v, t.constant(w), t.constant(b))); };
        ops::testing::mutate_backward(ops::testing::Rule::conv2d, 2.0);
        // |2n - n| / max(|2n|, |n|) = 0.5 under the max-denominator formula.
        CHECK(grad_check(fn, x) == doctest::Approx(0.5).epsilon(1e-6));
        ops::testing::reset_mutations();
        CHECK(grad_check(fn, x) < 1e-4);
    }

    TEST_CASE("relative_error uses a floored max denominator") {
        CHECK(relative_error(2.0, 1.0) == 0.5);
        CHECK(relative_error(0.0, 0.0) == 0.0);
        CHECK(relative_error(1e-9, 0.0) == doctest::Approx(0.1));
    }

    TEST_CASE("smooth_coordinates avoids kinks") {
        const T64 x({4}, std::vector<double>{-1.0, 0.05, 0.5, -0.02});
        std::mt19937_64 rng(1);
        const auto coords =
            smooth_coordinates([](Tape<double>&, V v) { return ops::sum(ops::relu(v)); }, x, 0.1, 4, rng);
        CHECK(coords == std::vector<std::size_t>{0, 2});
    }

    TEST_CASE("tape replay is deterministic") {
        auto run = [] {
            std::mt19937_64 rng(16);
            nn::NetworkConfig cfg;
            cfg.stage_widths = {4, 6};
            nn::Network<float> net(cfg, 3);
            const Tensor x = oracle::random_tensor<float>({2, 3, 8, 8}, rng);
            std::vector<std::uint8_t> labels(128);
            for (auto& l : labels) l = static_cast<std::uint8_t>(rng() % 5);
            Tape<float> t;
            const auto loss = ops::cross_entropy(net.forward(t, t.constant(x)).logits, labels);
            t.backward(loss);
            std::vector<Tensor> grads{loss.value()};
            for (auto& p : net.parameters()) grads.push_back(p.grad);
            return grads;
        };
        CHECK(run() == run());
    }

    TEST_CASE("elementwise helpers") {
        Tape<float> t;
        const auto a = t.constant(Tensor({1, 1, 1, 2}, std::vector<float>{1, 2}));
        const auto b = t.constant(Tensor({1, 2, 1, 2}, std::vector<float>{3, 4, 5, 6}));
        CHECK(ops::concat_channels(a, b).value() == Tensor({1, 3, 1, 2}, std::vector<float>{1, 2, 3, 4, 5, 6}));
        CHECK_THROWS_AS(ops::concat_channels(a, t.constant(Tensor({1, 1, 2, 2}))), ShapeError);
        CHECK_THROWS_AS(ops::add(a, b), ShapeError);
        CHECK(ops::argmax_channels(Tensor({1, 3, 1, 2}, std::vector<float>{1, 5, 1, 5, 0, 0})) ==
              std::vector<std::uint8_t>{0, 0});
    }
}
