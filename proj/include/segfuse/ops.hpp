#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "segfuse/tape.hpp"
#include "segfuse/tensor.hpp"

namespace segfuse::ops {

/// Within-window argmax positions of a 2x2 max pooling, row-major in the
/// window: 0 top-left, 1 top-right, 2 bottom-left, 3 bottom-right.
struct PoolIndices {
    Shape pooled_shape;  // N,C,H/2,W/2
    std::vector<std::uint8_t> argmax;
};

template <typename T>
struct PoolResult {
    Var<T> values;
    std::shared_ptr<const PoolIndices> indices;
};

// 3x3 kernel, stride 1, one pixel of zero padding.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> relu(Var<T> x);

/// Throws ShapeError on odd spatial dimensions. Ties go to the first position
/// in row-major order.
template <typename T>
PoolResult<T> maxpool2(Var<T> x);

/// Scatters y into a zero tensor of spatial size out_h x out_w at the recorded
/// argmax positions.
template <typename T>
Var<T> maxunpool2(Var<T> y, std::shared_ptr<const PoolIndices> indices, std::size_t out_h,
                  std::size_t out_w);

template <typename T>
Var<T> softmax_channels(Var<T> x);

/// Mean over non-ignored pixels of -log softmax(scores)[label]. `labels` holds
/// N*H*W class indices; `ignore` (same length, or empty) marks pixels left
/// out with a nonzero byte. Label 255 is always ignored.
template <typename T>
Var<T> cross_entropy(Var<T> scores, std::span<const std::uint8_t> labels,
                     std::span<const std::uint8_t> ignore = {});

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

/// Elementwise mean of equally shaped inputs.
template <typename T>
Var<T> mean_of(std::span<const Var<T>> xs);

/// Channel-wise concatenation of two N,C,H,W tensors with equal N, H, W.
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b);

template <typename T>
Var<T> sum(Var<T> x);

/// Scalar <x, w> for a constant w of the same shape.
template <typename T>
Var<T> dot(Var<T> x, const BasicTensor<T>& w);

// Untaped forward helpers used by inference paths.
template <typename T>
BasicTensor<T> softmax_channels(const BasicTensor<T>& x);

/// Per-pixel argmax over channels of an N,C,H,W (or C,H,W) tensor. Ties go to
/// the lowest channel.
template <typename T>
std::vector<std::uint8_t> argmax_channels(const BasicTensor<T>& x);

namespace testing {

enum class Rule { conv2d, relu, maxpool2, maxunpool2, softmax_channels, cross_entropy, count_ };

/// Scales the gradient produced by one backward rule. Used to check that the
/// gradient checker notices a corrupted rule. Factor 1 restores the rule.
void mutate_backward(Rule rule, double factor);
void reset_mutations();

/// While a probe is open, relu and maxpool2 fold their activation pattern
/// (relu on/off mask, pool argmax) into a hash on the calling thread. Two
/// forward passes with equal hashes took the same piecewise-linear branch.
void begin_pattern_probe();
std::uint64_t end_pattern_probe();

}  // namespace testing

}  // namespace segfuse::ops
