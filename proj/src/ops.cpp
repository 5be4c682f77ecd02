#include "segfuse/ops.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "segfuse/simd/kernels.hpp"

namespace segfuse {

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* what) {
    for (T v : t.values()) {
        if (!std::isfinite(v)) throw Error(std::string("non-finite value in ") + what);
    }
}

template void require_finite<float>(const BasicTensor<float>&, const char*);
template void require_finite<double>(const BasicTensor<double>&, const char*);

}  // namespace segfuse

namespace segfuse::ops {

namespace testing {
namespace {
std::array<std::atomic<double>, static_cast<std::size_t>(Rule::count_)>& factors() {
    static std::array<std::atomic<double>, static_cast<std::size_t>(Rule::count_)> f;
    static const bool initialized = [] {
        for (auto& v : f) v.store(1.0);
        return true;
    }();
    (void)initialized;
    return f;
}
}  // namespace

void mutate_backward(Rule rule, double factor) { factors()[static_cast<std::size_t>(rule)].store(factor); }

void reset_mutations() {
    for (auto& v : factors()) v.store(1.0);
}

namespace {
struct PatternProbe {
    bool open = false;
    std::uint64_t hash = 1469598103934665603ULL;

    void mix(std::uint64_t v) {
        hash ^= v;
        hash *= 1099511628211ULL;
    }
};
thread_local PatternProbe probe;
}  // namespace

void begin_pattern_probe() { probe = PatternProbe{true}; }

std::uint64_t end_pattern_probe() {
    probe.open = false;
    return probe.hash;
}


}  // namespace testing

namespace {

template <typename T>
T rule_factor(testing::Rule rule) {
    return static_cast<T>(testing::factors()[static_cast<std::size_t>(rule)].load());
}

template <typename T>
void scale_if_mutated(BasicTensor<T>& g, testing::Rule rule) {
    const T f = rule_factor<T>(rule);
    if (f != T(1)) {
        for (auto& v : g.values()) v *= f;
    }
}

void require_4d(const Shape& s, const char* what) {
    if (s.size() != 4) throw ShapeError(std::string(what) + " expects an N,C,H,W tensor, got " + shape_str(s));
}

// cols[(c*9 + ky*3 + kx), y*w + x] = in[c, y+ky-1, x+kx-1], zero outside.
template <typename T>
void im2col3x3(const T* in, std::size_t channels, std::size_t h, std::size_t w, T* cols) {
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c) {
        const T* plane = in + c * hw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                T* row = cols + (c * 9 + ky * 3 + kx) * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    T* dst = row + y * w;
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
                        std::fill(dst, dst + w, T(0));
                        continue;
                    }
                    const T* src = plane + static_cast<std::size_t>(sy) * w;
                    // dst[x] = src[x + kx - 1]
                    if (kx == 0) {
                        dst[0] = T(0);
                        std::copy(src, src + w - 1, dst + 1);
                    } else if (kx == 1) {
                        std::copy(src, src + w, dst);
                    } else {
                        std::copy(src + 1, src + w, dst);
                        dst[w - 1] = T(0);
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im3x3_add(const T* cols, std::size_t channels, std::size_t h, std::size_t w, T* out) {
    const std::size_t hw = h * w;
    for (std::size_t c = 0; c < channels; ++c) {
        T* plane = out + c * hw;
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const T* row = cols + (c * 9 + ky * 3 + kx) * hw;
                for (std::size_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                    if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                    T* dst = plane + static_cast<std::size_t>(sy) * w;
                    const T* src = row + y * w;
                    if (kx == 0) {
                        for (std::size_t x = 1; x < w; ++x) dst[x - 1] += src[x];
                    } else if (kx == 1) {
                        for (std::size_t x = 0; x < w; ++x) dst[x] += src[x];
                    } else {
                        for (std::size_t x = 0; x + 1 < w; ++x) dst[x + 1] += src[x];
                    }
                }
            }
        }
    }
}

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
    constexpr std::size_t tile = 32;
    for (std::size_t r0 = 0; r0 < rows; r0 += tile) {
        for (std::size_t c0 = 0; c0 < cols; c0 += tile) {
            const std::size_t r1 = std::min(rows, r0 + tile);
            const std::size_t c1 = std::min(cols, c0 + tile);
            for (std::size_t r = r0; r < r1; ++r) {
                for (std::size_t c = c0; c < c1; ++c) dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias) {
    const auto& x = input.value();
    const auto& w = weight.value();
    const auto& b = bias.value();
    require_4d(x.shape(), "conv2d input");
    if (w.ndim() != 4 || w.dim(2) != 3 || w.dim(3) != 3) {
        throw ShapeError("conv2d supports 3x3 kernels only, got weight " + shape_str(w.shape()));
    }
    if (w.dim(1) != x.dim(1)) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) + " weight " +
                         shape_str(w.shape()));
    }
    if (b.ndim() != 1 || b.dim(0) != w.dim(0)) {
        throw ShapeError("conv2d bias shape " + shape_str(b.shape()) + " does not match weight");
    }
    const std::size_t n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(0);
    const std::size_t hw = h * wd, kdim = cin * 9;
    const auto& k = simd::kernels<T>();

    BasicTensor<T> out({n, cout, h, wd});
    std::vector<T> cols(kdim * hw);
    for (std::size_t img = 0; img < n; ++img) {
        im2col3x3(x.data() + img * cin * hw, cin, h, wd, cols.data());
        T* o = out.data() + img * cout * hw;
        for (std::size_t oc = 0; oc < cout; ++oc) std::fill(o + oc * hw, o + (oc + 1) * hw, b[oc]);
        k.gemm(cout, hw, kdim, w.data(), kdim, cols.data(), hw, o, hw);
    }

    return input.tape()->record(std::move(out), {input, weight, bias}, [n, cin, h, wd, cout, hw, kdim](Tape<T>& tape, std::size_t self) {
        const auto& kk = simd::kernels<T>();
        const BasicTensor<T>& g = tape.grad_buffer(self);
        const std::size_t in_id = tape.input(self, 0), w_id = tape.input(self, 1), b_id = tape.input(self, 2);
        const auto& xv = tape.value(in_id);
        const auto& wv = tape.value(w_id);
        const bool need_x = tape.requires_grad(in_id);
        const bool need_w = tape.requires_grad(w_id);
        const bool need_b = tape.requires_grad(b_id);

        BasicTensor<T> gx, gw, gb;
        if (need_x) gx = BasicTensor<T>(xv.shape());
        if (need_w) gw = BasicTensor<T>(wv.shape());
        if (need_b) gb = BasicTensor<T>({cout});

        std::vector<T> cols_buf, colsT, dcols, wT;
        if (need_w) {
            cols_buf.resize(kdim * hw);
            colsT.resize(hw * kdim);
        }
        if (need_x) {
            dcols.resize(kdim * hw);
            wT.resize(kdim * cout);
            transpose(wv.data(), cout, kdim, wT.data());
        }
        for (std::size_t img = 0; img < n; ++img) {
            const T* gi = g.data() + img * cout * hw;
            if (need_b) {
                for (std::size_t oc = 0; oc < cout; ++oc) gb[oc] += kk.sum(hw, gi + oc * hw);
            }
            if (need_w) {
                im2col3x3(xv.data() + img * cin * hw, cin, h, wd, cols_buf.data());
                transpose(cols_buf.data(), kdim, hw, colsT.data());
                kk.gemm(cout, kdim, hw, gi, hw, colsT.data(), kdim, gw.data(), kdim);
            }
            if (need_x) {
                std::fill(dcols.begin(), dcols.end(), T(0));
                kk.gemm(kdim, hw, cout, wT.data(), cout, gi, hw, dcols.data(), hw);
                col2im3x3_add(dcols.data(), cin, h, wd, gx.data() + img * cin * hw);
            }
        }
        if (need_x) {
            scale_if_mutated(gx, testing::Rule::conv2d);
            auto& dst = tape.grad_buffer(in_id);
            kk.axpy(gx.size(), T(1), gx.data(), dst.data());
        }
        if (need_w) {
            scale_if_mutated(gw, testing::Rule::conv2d);
            auto& dst = tape.grad_buffer(w_id);
            kk.axpy(gw.size(), T(1), gw.data(), dst.data());
        }
        if (need_b) {
            scale_if_mutated(gb, testing::Rule::conv2d);
            auto& dst = tape.grad_buffer(b_id);
            kk.axpy(gb.size(), T(1), gb.data(), dst.data());
        }
    });
}

template <typename T>
Var<T> relu(Var<T> x) {
    const auto& xv = x.value();
    BasicTensor<T> out(xv.shape());
    simd::kernels<T>().relu(xv.size(), xv.data(), out.data());
    if (testing::probe.open) {
        for (std::size_t i = 0; i < xv.size(); ++i) testing::probe.mix(xv[i] > T(0));
    }
    return x.tape()->record(std::move(out), {x}, [](Tape<T>& tape, std::size_t self) {
        const std::size_t in_id = tape.input(self, 0);
        const auto& xin = tape.value(in_id);
        const auto& g = tape.grad_buffer(self);
        auto& gx = tape.grad_buffer(in_id);
        const T f = rule_factor<T>(testing::Rule::relu);
        if (f == T(1)) {
            simd::kernels<T>().relu_backward(xin.size(), xin.data(), g.data(), gx.data());
        } else {
            for (std::size_t i = 0; i < xin.size(); ++i) {
                if (xin[i] > T(0)) gx[i] += f * g[i];
            }
        }
    });
}

template <typename T>
PoolResult<T> maxpool2(Var<T> x) {
    const auto& xv = x.value();
    require_4d(xv.shape(), "maxpool2");
    const std::size_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2 requires even spatial dimensions, got " + shape_str(xv.shape()));
    }
    const std::size_t oh = h / 2, ow = w / 2;
    auto idx = std::make_shared<PoolIndices>();
    idx->pooled_shape = {n, c, oh, ow};
    idx->argmax.resize(n * c * oh * ow);
    BasicTensor<T> out(idx->pooled_shape);
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const T* src = xv.data() + plane * h * w;
        for (std::size_t y = 0; y < oh; ++y) {
            for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
                const T* p0 = src + (2 * y) * w + 2 * xx;
                const T cand[4] = {p0[0], p0[1], p0[w], p0[w + 1]};
                std::uint8_t best = 0;
                for (std::uint8_t k = 1; k < 4; ++k) {
                    if (cand[k] > cand[best]) best = k;
                }
                out[o] = cand[best];
                idx->argmax[o] = best;
            }
        }
    }
    if (testing::probe.open) {
        for (auto a : idx->argmax) testing::probe.mix(a);
    }
    std::shared_ptr<const PoolIndices> cidx = idx;
    Var<T> v = x.tape()->record(std::move(out), {x}, [cidx, h, w](Tape<T>& tape, std::size_t self) {
        const std::size_t in_id = tape.input(self, 0);
        const auto& g = tape.grad_buffer(self);
        auto& gx = tape.grad_buffer(in_id);
        const T f = rule_factor<T>(testing::Rule::maxpool2);
        const std::size_t oh2 = h / 2, ow2 = w / 2;
        std::size_t o2 = 0;
        for (std::size_t plane = 0; plane < cidx->argmax.size() / (oh2 * ow2); ++plane) {
            T* dst = gx.data() + plane * h * w;
            for (std::size_t y = 0; y < oh2; ++y) {
                for (std::size_t xx = 0; xx < ow2; ++xx, ++o2) {
                    const std::uint8_t a = cidx->argmax[o2];
                    dst[(2 * y + a / 2) * w + 2 * xx + a % 2] += f * g[o2];
                }
            }
        }
    });
    return {v, cidx};
}

template <typename T>
Var<T> maxunpool2(Var<T> y, std::shared_ptr<const PoolIndices> indices, std::size_t out_h, std::size_t out_w) {
    const auto& yv = y.value();
    require_4d(yv.shape(), "maxunpool2");
    if (!indices || indices->pooled_shape != yv.shape()) {
        throw ShapeError("maxunpool2 indices do not match input " + shape_str(yv.shape()));
    }
    const std::size_t n = yv.dim(0), c = yv.dim(1), h = yv.dim(2), w = yv.dim(3);
    std::vector<std::size_t> target(yv.size());
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        for (std::size_t yy = 0; yy < h; ++yy) {
            for (std::size_t xx = 0; xx < w; ++xx, ++o) {
                const std::uint8_t a = indices->argmax[o];
                const std::size_t ty = 2 * yy + a / 2, tx = 2 * xx + a % 2;
                if (a > 3 || ty >= out_h || tx >= out_w) {
                    throw ShapeError("maxunpool2 index out of bounds for " + std::to_string(out_h) + "x" +
                                     std::to_string(out_w));
                }
                target[o] = plane * out_h * out_w + ty * out_w + tx;
            }
        }
    }
    BasicTensor<T> out({n, c, out_h, out_w});
    for (std::size_t i = 0; i < target.size(); ++i) out[target[i]] = yv[i];
    return y.tape()->record(std::move(out), {y}, [target = std::move(target)](Tape<T>& tape, std::size_t self) {
        const std::size_t in_id = tape.input(self, 0);
        const auto& g = tape.grad_buffer(self);
        auto& gy = tape.grad_buffer(in_id);
        const T f = rule_factor<T>(testing::Rule::maxunpool2);
        for (std::size_t i = 0; i < target.size(); ++i) gy[i] += f * g[target[i]];
    });
}

template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& x) {
    if (x.ndim() != 4 && x.ndim() != 3) {
        throw ShapeError("softmax_channels expects N,C,H,W or C,H,W, got " + shape_str(x.shape()));
    }
    const bool batched = x.ndim() == 4;
    const std::size_t n = batched ? x.dim(0) : 1;
    const std::size_t k = x.dim(batched ? 1 : 0);
    const std::size_t hw = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
    if (k < 2) throw ShapeError("softmax_channels needs at least two channels");
    BasicTensor<T> out(x.shape());
    for (std::size_t img = 0; img < n; ++img) {
        const T* src = x.data() + img * k * hw;
        T* dst = out.data() + img * k * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            T m = src[p];
            for (std::size_t c = 1; c < k; ++c) m = std::max(m, src[c * hw + p]);
            T denom = 0;
            for (std::size_t c = 0; c < k; ++c) {
                const T e = std::exp(src[c * hw + p] - m);
                dst[c * hw + p] = e;
                denom += e;
            }
            for (std::size_t c = 0; c < k; ++c) dst[c * hw + p] /= denom;
        }
    }
    return out;
}

template <typename T>
Var<T> softmax_channels(Var<T> x) {
    require_4d(x.shape(), "softmax_channels");
    BasicTensor<T> out = softmax_channels(x.value());
    return x.tape()->record(std::move(out), {x}, [](Tape<T>& tape, std::size_t self) {
        const std::size_t in_id = tape.input(self, 0);
        const auto& y = tape.value(self);
        const auto& g = tape.grad_buffer(self);
        auto& gx = tape.grad_buffer(in_id);
        const T f = rule_factor<T>(testing::Rule::softmax_channels);
        const std::size_t n = y.dim(0), k = y.dim(1), hw = y.dim(2) * y.dim(3);
        for (std::size_t img = 0; img < n; ++img) {
            const std::size_t base = img * k * hw;
            for (std::size_t p = 0; p < hw; ++p) {
                T dotp = 0;
                for (std::size_t c = 0; c < k; ++c) dotp += g[base + c * hw + p] * y[base + c * hw + p];
                for (std::size_t c = 0; c < k; ++c) {
                    const std::size_t i = base + c * hw + p;
                    gx[i] += f * y[i] * (g[i] - dotp);
                }
            }
        }
    });
}

template <typename T>
Var<T> cross_entropy(Var<T> scores, std::span<const std::uint8_t> labels, std::span<const std::uint8_t> ignore) {
    const auto& s = scores.value();
    require_4d(s.shape(), "cross_entropy");
    const std::size_t n = s.dim(0), k = s.dim(1), hw = s.dim(2) * s.dim(3);
    if (labels.size() != n * hw) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for scores " +
                         shape_str(s.shape()));
    }
    if (!ignore.empty() && ignore.size() != labels.size()) {
        throw ShapeError("cross_entropy: ignore mask length does not match labels");
    }
    BasicTensor<T> probs = softmax_channels(s);
    std::vector<std::uint32_t> active;  // flat pixel index img*hw + p
    active.reserve(labels.size());
    double total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::uint8_t lab = labels[i];
        if (lab == 255 || (!ignore.empty() && ignore[i] != 0)) continue;
        if (lab >= k) {
            throw DataError("cross_entropy: label " + std::to_string(lab) + " outside [0," + std::to_string(k) + ")");
        }
        const std::size_t img = i / hw, p = i % hw;
        const T* src = s.data() + img * k * hw + p;
        T m = src[0];
        for (std::size_t c = 1; c < k; ++c) m = std::max(m, src[c * hw]);
        double denom = 0;
        for (std::size_t c = 0; c < k; ++c) denom += std::exp(static_cast<double>(src[c * hw] - m));
        total += std::log(denom) - static_cast<double>(src[lab * hw] - m);
        active.push_back(static_cast<std::uint32_t>(i));
    }
    if (active.empty()) throw DataError("cross_entropy: every pixel is ignored");
    const double count = static_cast<double>(active.size());
    BasicTensor<T> loss({1}, static_cast<T>(total / count));
    std::vector<std::uint8_t> labs(labels.begin(), labels.end());

    return scores.tape()->record(
        std::move(loss), {scores},
        [probs = std::move(probs), active = std::move(active), labs = std::move(labs), k, hw](Tape<T>& tape,
                                                                                                std::size_t self) {
            const std::size_t in_id = tape.input(self, 0);
            const T gl = tape.grad_buffer(self)[0] * rule_factor<T>(testing::Rule::cross_entropy);
            auto& gx = tape.grad_buffer(in_id);
            const T scale = gl / static_cast<T>(active.size());
            for (const std::uint32_t i : active) {
                const std::size_t img = i / hw, p = i % hw;
                const std::size_t base = img * k * hw + p;
                for (std::size_t c = 0; c < k; ++c) gx[base + c * hw] += scale * probs[base + c * hw];
                gx[base + labs[i] * hw] -= scale;
            }
        });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    if (a.shape() != b.shape()) {
        throw ShapeError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    BasicTensor<T> out = a.value();
    simd::kernels<T>().axpy(out.size(), T(1), b.value().data(), out.data());
    return a.tape()->record(std::move(out), {a, b}, [](Tape<T>& tape, std::size_t self) {
        const auto& g = tape.grad_buffer(self);
        for (std::size_t k = 0; k < 2; ++k) {
            const std::size_t id = tape.input(self, k);
            if (!tape.requires_grad(id)) continue;
            auto& gi = tape.grad_buffer(id);
            simd::kernels<T>().axpy(g.size(), T(1), g.data(), gi.data());
        }
    });
}

template <typename T>
Var<T> mean_of(std::span<const Var<T>> xs) {
    if (xs.empty()) throw ShapeError("mean_of: empty input list");
    const Shape& shape = xs.front().shape();
    for (const auto& x : xs) {
        if (x.shape() != shape) {
            throw ShapeError("mean_of: shape mismatch " + shape_str(x.shape()) + " vs " + shape_str(shape));
        }
    }
    const T inv = T(1) / static_cast<T>(xs.size());
    BasicTensor<T> out(shape);
    const auto& k = simd::kernels<T>();
    for (const auto& x : xs) k.axpy(out.size(), T(1), x.value().data(), out.data());
    for (auto& v : out.values()) v *= inv;
    return xs.front().tape()->record(std::move(out), xs, [count = xs.size(), inv](Tape<T>& tape, std::size_t self) {
        const auto& g = tape.grad_buffer(self);
        for (std::size_t k2 = 0; k2 < count; ++k2) {
            const std::size_t id = tape.input(self, k2);
            if (!tape.requires_grad(id)) continue;
            auto& gi = tape.grad_buffer(id);
            simd::kernels<T>().axpy(g.size(), inv, g.data(), gi.data());
        }
    });
}

template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
    const auto& av = a.value();
    const auto& bv = b.value();
    require_4d(av.shape(), "concat_channels");
    require_4d(bv.shape(), "concat_channels");
    if (av.dim(0) != bv.dim(0) || av.dim(2) != bv.dim(2) || av.dim(3) != bv.dim(3)) {
        throw ShapeError("concat_channels: misaligned inputs " + shape_str(av.shape()) + " and " +
                         shape_str(bv.shape()));
    }
    const std::size_t n = av.dim(0), ca = av.dim(1), cb = bv.dim(1), hw = av.dim(2) * av.dim(3);
    BasicTensor<T> out({n, ca + cb, av.dim(2), av.dim(3)});
    for (std::size_t img = 0; img < n; ++img) {
        std::copy_n(av.data() + img * ca * hw, ca * hw, out.data() + img * (ca + cb) * hw);
        std::copy_n(bv.data() + img * cb * hw, cb * hw, out.data() + img * (ca + cb) * hw + ca * hw);
    }
    return a.tape()->record(std::move(out), {a, b}, [n, ca, cb, hw](Tape<T>& tape, std::size_t self) {
        const auto& g = tape.grad_buffer(self);
        const std::size_t a_id = tape.input(self, 0), b_id = tape.input(self, 1);
        const auto& k = simd::kernels<T>();
        for (std::size_t img = 0; img < n; ++img) {
            const T* src = g.data() + img * (ca + cb) * hw;
            if (tape.requires_grad(a_id)) k.axpy(ca * hw, T(1), src, tape.grad_buffer(a_id).data() + img * ca * hw);
            if (tape.requires_grad(b_id)) {
                k.axpy(cb * hw, T(1), src + ca * hw, tape.grad_buffer(b_id).data() + img * cb * hw);
            }
        }
    });
}

template <typename T>
Var<T> sum(Var<T> x) {
    BasicTensor<T> out({1}, simd::kernels<T>().sum(x.value().size(), x.value().data()));
    return x.tape()->record(std::move(out), {x}, [](Tape<T>& tape, std::size_t self) {
        const T g = tape.grad_buffer(self)[0];
        for (auto& v : tape.grad_buffer(tape.input(self, 0)).values()) v += g;
    });
}

template <typename T>
Var<T> dot(Var<T> x, const BasicTensor<T>& w) {
    if (x.shape() != w.shape()) throw ShapeError("dot: shape mismatch");
    T acc = 0;
    for (std::size_t i = 0; i < w.size(); ++i) acc += x.value()[i] * w[i];
    return x.tape()->record(BasicTensor<T>({1}, acc), {x}, [w](Tape<T>& tape, std::size_t self) {
        const T g = tape.grad_buffer(self)[0];
        auto& gx = tape.grad_buffer(tape.input(self, 0));
        simd::kernels<T>().axpy(w.size(), g, w.data(), gx.data());
    });
}

template <typename T>
std::vector<std::uint8_t> argmax_channels(const BasicTensor<T>& x) {
    if (x.ndim() != 4 && x.ndim() != 3) throw ShapeError("argmax_channels expects N,C,H,W or C,H,W");
    const bool batched = x.ndim() == 4;
    const std::size_t n = batched ? x.dim(0) : 1;
    const std::size_t k = x.dim(batched ? 1 : 0);
    const std::size_t hw = x.dim(batched ? 2 : 1) * x.dim(batched ? 3 : 2);
    if (k > 255) throw ShapeError("argmax_channels supports at most 255 classes");
    std::vector<std::uint8_t> out(n * hw);
    for (std::size_t img = 0; img < n; ++img) {
        const T* src = x.data() + img * k * hw;
        for (std::size_t p = 0; p < hw; ++p) {
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c) {
                if (src[c * hw + p] > src[best * hw + p]) best = c;
            }
            out[img * hw + p] = static_cast<std::uint8_t>(best);
        }
    }
    return out;
}

#define SEGFUSE_INSTANTIATE_OPS(T)                                                                          \
    template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>);                                                       \
    template Var<T> relu<T>(Var<T>);                                                                         \
    template PoolResult<T> maxpool2<T>(Var<T>);                                                              \
    template Var<T> maxunpool2<T>(Var<T>, std::shared_ptr<const PoolIndices>, std::size_t, std::size_t);     \
    template Var<T> softmax_channels<T>(Var<T>);                                                             \
    template BasicTensor<T> softmax_channels<T>(const BasicTensor<T>&);                                      \
    template Var<T> cross_entropy<T>(Var<T>, std::span<const std::uint8_t>, std::span<const std::uint8_t>);  \
    template Var<T> add<T>(Var<T>, Var<T>);                                                                  \
    template Var<T> mean_of<T>(std::span<const Var<T>>);                                                     \
    template Var<T> concat_channels<T>(Var<T>, Var<T>);                                                      \
    template Var<T> sum<T>(Var<T>);                                                                          \
    template Var<T> dot<T>(Var<T>, const BasicTensor<T>&);                                                   \
    template std::vector<std::uint8_t> argmax_channels<T>(const BasicTensor<T>&);

SEGFUSE_INSTANTIATE_OPS(float)
SEGFUSE_INSTANTIATE_OPS(double)

#undef SEGFUSE_INSTANTIATE_OPS

}  // namespace segfuse::ops
