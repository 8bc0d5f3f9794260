#pragma once

#include <cstddef>
#include <vector>

#include "fad/autograd.hpp"

// Differentiable operations over Graph/Var. Convolution and normalization ops
// take an optional leading batch dimension: conv1d/group_norm accept [C, L] or
// [N, C, L]; conv2d and spatial_softmax accept [C, H, W] or [N, C, H, W].
// Convolutions are cross-correlations (no kernel flip).
namespace fad::nn {

template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T s);
// Multiplies item n (slice along dim 0) by the constant factors[n].
template <typename T> Var<T> scale_items(Var<T> a, const std::vector<T>& factors);

template <typename T> Var<T> relu(Var<T> x);
template <typename T> Var<T> silu(Var<T> x);

// x [N, in], weight [out, in], bias [out] -> [N, out]
template <typename T> Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

// Adds bias [N, C] (or [C]) to x [N, C, ...] broadcast over trailing dims.
template <typename T> Var<T> add_channel_bias(Var<T> x, Var<T> bias);

template <typename T> Var<T> softmax(Var<T> x, std::size_t axis);

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride,
              std::size_t padding);
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride,
              std::size_t padding);

template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gamma, Var<T> beta,
                  T eps = T(1e-5));

// Nearest-neighbour x2 along the last axis of [C, L] / [N, C, L].
template <typename T> Var<T> upsample_nearest1d(Var<T> x);

template <typename T> Var<T> concat(Var<T> a, Var<T> b, std::size_t axis);
// Swaps the last two axes.
template <typename T> Var<T> transpose_last2(Var<T> x);
template <typename T> Var<T> reshape(Var<T> x, Shape shape);
// Rows of a rank-2 tensor selected by index (repeats allowed).
template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<std::size_t>& rows);

// Per-channel softmax over the H*W cells, then the expected cell-centre
// coordinate (x, y) in [-1, 1]; output [2C] / [N, 2C].
template <typename T> Var<T> spatial_softmax(Var<T> x, T temperature = T{1});

template <typename T> Var<T> sum(Var<T> x);
template <typename T> Var<T> mean(Var<T> x);
template <typename T> Var<T> mse(Var<T> a, Var<T> b);

namespace detail {
// Plain forward kernels shared with the FLOP and latency paths.
std::size_t conv_out_len(std::size_t len, std::size_t k, std::size_t stride,
                         std::size_t padding);
} // namespace detail

} // namespace fad::nn
