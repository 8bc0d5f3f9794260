#include "fad/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <type_traits>

namespace fad::nn {
namespace {

// ---------------------------------------------------------------------------
// Dense kernels. The 32-bit path goes through Eigen's blocked GEMM; the 64-bit
// verification path sums in plain index order so results are reproducible by
// an explicit-loop oracle.

template <typename T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// C[M,N] += A[M,K] * B[K,N]
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
             T* c) {
    if constexpr (std::is_same_v<T, float>) {
        Eigen::Map<const MatR<T>> A(a, m, k);
        Eigen::Map<const MatR<T>> B(b, k, n);
        Eigen::Map<MatR<T>> C(c, m, n);
        C.noalias() += A * B;
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                T acc = c[i * n + j];
                for (std::size_t p = 0; p < k; ++p) {
                    acc += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
    }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
             T* c) {
    if constexpr (std::is_same_v<T, float>) {
        Eigen::Map<const MatR<T>> A(a, m, k);
        Eigen::Map<const MatR<T>> B(b, n, k);
        Eigen::Map<MatR<T>> C(c, m, n);
        C.noalias() += A * B.transpose();
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                T acc = c[i * n + j];
                for (std::size_t p = 0; p < k; ++p) {
                    acc += a[i * k + p] * b[j * k + p];
                }
                c[i * n + j] = acc;
            }
        }
    }
}

// C[M,N] += A[K,M]^T * B[K,N]
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b,
             T* c) {
    if constexpr (std::is_same_v<T, float>) {
        Eigen::Map<const MatR<T>> A(a, k, m);
        Eigen::Map<const MatR<T>> B(b, k, n);
        Eigen::Map<MatR<T>> C(c, m, n);
        C.noalias() += A.transpose() * B;
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                T acc = c[i * n + j];
                for (std::size_t p = 0; p < k; ++p) {
                    acc += a[p * m + i] * b[p * n + j];
                }
                c[i * n + j] = acc;
            }
        }
    }
}

template <typename T>
void accumulate(Graph<T>& g, Var<T> v, const Tensor<T>& delta) {
    if (!v.requires_grad()) {
        return;
    }
    Tensor<T>& buf = g.grad_buffer(v.id());
    T* dst = buf.ptr();
    const T* src = delta.ptr();
    for (std::size_t i = 0; i < buf.size(); ++i) {
        dst[i] += src[i];
    }
}

template <typename T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
    require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " +
                                        shape_str(a.shape()) + " vs " +
                                        shape_str(b.shape()));
}

template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D df) {
    Graph<T>& g = x.graph();
    const Tensor<T>& xv = x.value();
    Tensor<T> out(xv.shape());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        out[i] = f(xv[i]);
    }
    return g.record(std::move(out), {x}, [&g, x, df](const Tensor<T>& go) {
        const Tensor<T>& xv = x.value();
        Tensor<T> dx(xv.shape());
        for (std::size_t i = 0; i < xv.size(); ++i) {
            dx[i] = go[i] * df(xv[i]);
        }
        accumulate(g, x, dx);
    });
}

// Geometry of a (possibly 1-D) convolution expressed in 2-D terms.
struct ConvGeom {
    std::size_t n, c, h, w;     // input
    std::size_t o, kh, kw;      // kernel
    std::size_t stride, pad_h, pad_w;
    std::size_t ho, wo;
    std::size_t kdim() const { return c * kh * kw; }
    std::size_t spatial() const { return ho * wo; }
};

template <typename T>
void im2col(const ConvGeom& cg, const T* x, T* col) {
    const std::size_t p = cg.spatial();
    const std::size_t cols = cg.n * p;
    for (std::size_t ci = 0; ci < cg.c; ++ci) {
        for (std::size_t i = 0; i < cg.kh; ++i) {
            for (std::size_t j = 0; j < cg.kw; ++j) {
                T* row = col + ((ci * cg.kh + i) * cg.kw + j) * cols;
                for (std::size_t b = 0; b < cg.n; ++b) {
                    const T* plane = x + (b * cg.c + ci) * cg.h * cg.w;
                    T* dst = row + b * p;
                    for (std::size_t oh = 0; oh < cg.ho; ++oh) {
                        const long ih = static_cast<long>(oh * cg.stride + i) -
                                        static_cast<long>(cg.pad_h);
                        for (std::size_t ow = 0; ow < cg.wo; ++ow) {
                            const long iw = static_cast<long>(ow * cg.stride + j) -
                                            static_cast<long>(cg.pad_w);
                            const bool inside = ih >= 0 && iw >= 0 &&
                                                ih < static_cast<long>(cg.h) &&
                                                iw < static_cast<long>(cg.w);
                            dst[oh * cg.wo + ow] = inside ? plane[ih * cg.w + iw] : T{0};
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const ConvGeom& cg, const T* col, T* dx) {
    const std::size_t p = cg.spatial();
    const std::size_t cols = cg.n * p;
    for (std::size_t ci = 0; ci < cg.c; ++ci) {
        for (std::size_t i = 0; i < cg.kh; ++i) {
            for (std::size_t j = 0; j < cg.kw; ++j) {
                const T* row = col + ((ci * cg.kh + i) * cg.kw + j) * cols;
                for (std::size_t b = 0; b < cg.n; ++b) {
                    T* plane = dx + (b * cg.c + ci) * cg.h * cg.w;
                    const T* src = row + b * p;
                    for (std::size_t oh = 0; oh < cg.ho; ++oh) {
                        const long ih = static_cast<long>(oh * cg.stride + i) -
                                        static_cast<long>(cg.pad_h);
                        if (ih < 0 || ih >= static_cast<long>(cg.h)) {
                            continue;
                        }
                        for (std::size_t ow = 0; ow < cg.wo; ++ow) {
                            const long iw = static_cast<long>(ow * cg.stride + j) -
                                            static_cast<long>(cg.pad_w);
                            if (iw >= 0 && iw < static_cast<long>(cg.w)) {
                                plane[ih * cg.w + iw] += src[oh * cg.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

// Items are processed in chunks whose column matrix stays cache-sized; the
// backward pass rebuilds the columns instead of keeping them alive.
inline std::size_t conv_chunk(const ConvGeom& cg) {
    const std::size_t target = std::max<std::size_t>(1, (1u << 16) / std::max<std::size_t>(1, cg.kdim()));
    return std::clamp<std::size_t>(target / cg.spatial(), 1, cg.n);
}

template <typename T>
void im2col_range(const ConvGeom& cg, const T* x, std::size_t b0, std::size_t nb, T* col) {
    ConvGeom sub = cg;
    sub.n = nb;
    im2col(sub, x + b0 * cg.c * cg.h * cg.w, col);
}

template <typename T>
Var<T> conv_impl(Var<T> x, Var<T> weight, Var<T> bias, const ConvGeom& cg,
                 Shape out_shape) {
    Graph<T>& g = x.graph();
    const std::size_t kdim = cg.kdim();
    const std::size_t p = cg.spatial();
    const bool pointwise = cg.kh == 1 && cg.kw == 1 && cg.stride == 1 &&
                           cg.pad_h == 0 && cg.pad_w == 0;
    const std::size_t chunk = pointwise ? 1 : conv_chunk(cg);

    Tensor<T> out(std::move(out_shape));
    const T* bv = bias.value().ptr();
    const T* xv = x.value().ptr();
    std::vector<T> col(pointwise ? 0 : kdim * chunk * p);
    std::vector<T> y(chunk == 1 ? 0 : cg.o * chunk * p);
    for (std::size_t b0 = 0; b0 < cg.n; b0 += chunk) {
        const std::size_t nb = std::min(chunk, cg.n - b0);
        const std::size_t cols = nb * p;
        const T* col_ptr = xv + b0 * cg.c * cg.h * cg.w;
        if (!pointwise) {
            im2col_range(cg, xv, b0, nb, col.data());
            col_ptr = col.data();
        }
        // Y[o, q] = bias[o] + sum_k W[o, k] col[k, q]; one item maps straight
        // onto the [o, P] output layout.
        T* dst = nb == 1 ? out.ptr() + b0 * cg.o * p : y.data();
        for (std::size_t o = 0; o < cg.o; ++o) std::fill_n(dst + o * cols, cols, bv[o]);
        gemm_nn(cg.o, cols, kdim, weight.value().ptr(), col_ptr, dst);
        if (nb > 1) {
            for (std::size_t b = 0; b < nb; ++b) {
                for (std::size_t o = 0; o < cg.o; ++o) {
                    std::copy_n(y.data() + o * cols + b * p, p,
                                out.ptr() + ((b0 + b) * cg.o + o) * p);
                }
            }
        }
    }

    return g.record(
        std::move(out), {x, weight, bias},
        [&g, x, weight, bias, cg, pointwise, chunk](const Tensor<T>& go) {
            const std::size_t kdim = cg.kdim();
            const std::size_t p = cg.spatial();
            const T* xv = x.value().ptr();
            const bool need_w = weight.requires_grad();
            const bool need_x = x.requires_grad();
            Tensor<T> dw(weight.shape());
            Tensor<T> dx(need_x ? x.shape() : Shape{});
            std::vector<T> col(pointwise || !need_w ? 0 : kdim * chunk * p);
            std::vector<T> gy(chunk == 1 ? 0 : cg.o * chunk * p);
            std::vector<T> dcol(need_x && !pointwise ? kdim * chunk * p : 0);
            for (std::size_t b0 = 0; b0 < cg.n; b0 += chunk) {
                const std::size_t nb = std::min(chunk, cg.n - b0);
                const std::size_t cols = nb * p;
                const T* gy_ptr = go.ptr() + b0 * cg.o * p;
                if (nb > 1) {
                    for (std::size_t b = 0; b < nb; ++b) {
                        for (std::size_t o = 0; o < cg.o; ++o) {
                            std::copy_n(go.ptr() + ((b0 + b) * cg.o + o) * p, p,
                                        gy.data() + o * cols + b * p);
                        }
                    }
                    gy_ptr = gy.data();
                }
                if (need_w) {
                    const T* col_ptr = xv + b0 * cg.c * cg.h * cg.w;
                    if (!pointwise) {
                        im2col_range(cg, xv, b0, nb, col.data());
                        col_ptr = col.data();
                    }
                    gemm_nt(cg.o, kdim, cols, gy_ptr, col_ptr, dw.ptr());
                }
                if (need_x) {
                    T* dx_item = dx.ptr() + b0 * cg.c * cg.h * cg.w;
                    if (pointwise) {
                        gemm_tn(kdim, cols, cg.o, weight.value().ptr(), gy_ptr, dx_item);
                    } else {
                        std::fill(dcol.begin(), dcol.end(), T{0});
                        gemm_tn(kdim, cols, cg.o, weight.value().ptr(), gy_ptr, dcol.data());
                        ConvGeom sub = cg;
                        sub.n = nb;
                        col2im(sub, dcol.data(), dx_item);
                    }
                }
            }
            if (need_w) accumulate(g, weight, dw);
            if (bias.requires_grad()) {
                Tensor<T> db(bias.shape());
                for (std::size_t b = 0; b < cg.n; ++b) {
                    for (std::size_t o = 0; o < cg.o; ++o) {
                        const T* src = go.ptr() + (b * cg.o + o) * p;
                        T acc = db[o];
                        for (std::size_t q = 0; q < p; ++q) acc += src[q];
                        db[o] = acc;
                    }
                }
                accumulate(g, bias, db);
            }
            if (need_x) accumulate(g, x, dx);
        });
}

} // namespace

namespace detail {
std::size_t conv_out_len(std::size_t len, std::size_t k, std::size_t stride,
                         std::size_t padding) {
    require(stride >= 1, "conv: stride must be >= 1");
    require(k <= len + 2 * padding, "conv: kernel larger than padded input");
    return (len + 2 * padding - k) / stride + 1;
}
} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
    check_same_shape(a, b, "add");
    Graph<T>& g = a.graph();
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] += bv[i];
    }
    return g.record(std::move(out), {a, b}, [&g, a, b](const Tensor<T>& go) {
        accumulate(g, a, go);
        accumulate(g, b, go);
    });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
    check_same_shape(a, b, "sub");
    Graph<T>& g = a.graph();
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] -= bv[i];
    }
    return g.record(std::move(out), {a, b}, [&g, a, b](const Tensor<T>& go) {
        accumulate(g, a, go);
        if (b.requires_grad()) {
            Tensor<T> neg = go;
            for (auto& v : neg.storage()) {
                v = -v;
            }
            accumulate(g, b, neg);
        }
    });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
    check_same_shape(a, b, "mul");
    Graph<T>& g = a.graph();
    Tensor<T> out = a.value();
    const Tensor<T>& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] *= bv[i];
    }
    return g.record(std::move(out), {a, b}, [&g, a, b](const Tensor<T>& go) {
        if (a.requires_grad()) {
            Tensor<T> da = go;
            for (std::size_t i = 0; i < da.size(); ++i) {
                da[i] *= b.value()[i];
            }
            accumulate(g, a, da);
        }
        if (b.requires_grad()) {
            Tensor<T> db = go;
            for (std::size_t i = 0; i < db.size(); ++i) {
                db[i] *= a.value()[i];
            }
            accumulate(g, b, db);
        }
    });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
    return unary(a, [s](T v) { return v * s; }, [s](T) { return s; });
}

template <typename T>
Var<T> scale_items(Var<T> a, const std::vector<T>& factors) {
    require(a.rank() >= 1 && a.dim(0) == factors.size(),
            "scale_items: one factor per leading item required");
    Graph<T>& g = a.graph();
    Tensor<T> out = a.value();
    const std::size_t inner = out.size() / factors.size();
    for (std::size_t n = 0; n < factors.size(); ++n) {
        for (std::size_t i = 0; i < inner; ++i) {
            out[n * inner + i] *= factors[n];
        }
    }
    return g.record(std::move(out), {a}, [&g, a, factors, inner](const Tensor<T>& go) {
        Tensor<T> da = go;
        for (std::size_t n = 0; n < factors.size(); ++n) {
            for (std::size_t i = 0; i < inner; ++i) {
                da[n * inner + i] *= factors[n];
            }
        }
        accumulate(g, a, da);
    });
}

template <typename T>
Var<T> relu(Var<T> x) {
    return unary(x, [](T v) { return v > T{0} ? v : T{0}; },
                 [](T v) { return v > T{0} ? T{1} : T{0}; });
}

template <typename T>
Var<T> silu(Var<T> x) {
    return unary(
        x, [](T v) { return v / (T{1} + std::exp(-v)); },
        [](T v) {
            const T s = T{1} / (T{1} + std::exp(-v));
            return s * (T{1} + v * (T{1} - s));
        });
}

// ---------------------------------------------------------------------------
// Dense layers

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
    require(x.rank() == 2 && weight.rank() == 2 && bias.rank() == 1,
            "linear: expected x [N,in], weight [out,in], bias [out]");
    const std::size_t n = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    require(weight.dim(1) == in && bias.dim(0) == out_dim,
            "linear: shape mismatch " + shape_str(x.shape()) + " x " +
                shape_str(weight.shape()));
    Graph<T>& g = x.graph();
    Tensor<T> out({n, out_dim});
    for (std::size_t r = 0; r < n; ++r) {
        std::copy_n(bias.value().ptr(), out_dim, out.ptr() + r * out_dim);
    }
    gemm_nt(n, out_dim, in, x.value().ptr(), weight.value().ptr(), out.ptr());
    return g.record(std::move(out), {x, weight, bias},
                    [&g, x, weight, bias, n, in, out_dim](const Tensor<T>& go) {
                        if (x.requires_grad()) {
                            Tensor<T> dx(x.shape());
                            gemm_nn(n, in, out_dim, go.ptr(), weight.value().ptr(),
                                    dx.ptr());
                            accumulate(g, x, dx);
                        }
                        if (weight.requires_grad()) {
                            Tensor<T> dw(weight.shape());
                            gemm_tn(out_dim, in, n, go.ptr(), x.value().ptr(), dw.ptr());
                            accumulate(g, weight, dw);
                        }
                        if (bias.requires_grad()) {
                            Tensor<T> db(bias.shape());
                            for (std::size_t r = 0; r < n; ++r) {
                                for (std::size_t o = 0; o < out_dim; ++o) {
                                    db[o] += go[r * out_dim + o];
                                }
                            }
                            accumulate(g, bias, db);
                        }
                    });
}

template <typename T>
Var<T> add_channel_bias(Var<T> x, Var<T> bias) {
    const Shape& xs = x.shape();
    const Shape& bs = bias.shape();
    // Either bias is a leading prefix of x, or bias [C] against x [N, C, ...].
    std::size_t outer = 1, channels = 0, inner = 1;
    bool prefix = bs.size() <= xs.size() && std::equal(bs.begin(), bs.end(), xs.begin());
    if (prefix && !(bs.size() == 1 && xs.size() >= 3)) {
        channels = shape_size(bs);
        inner = x.value().size() / channels;
    } else {
        require(bs.size() == 1 && xs.size() >= 3 && xs[1] == bs[0],
                "add_channel_bias: bias " + shape_str(bs) + " does not match " +
                    shape_str(xs));
        outer = xs[0];
        channels = bs[0];
        inner = x.value().size() / (outer * channels);
    }
    Graph<T>& g = x.graph();
    Tensor<T> out = x.value();
    const Tensor<T>& bv = bias.value();
    for (std::size_t n = 0; n < outer; ++n) {
        for (std::size_t c = 0; c < channels; ++c) {
            T* dst = out.ptr() + (n * channels + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                dst[i] += bv[c];
            }
        }
    }
    return g.record(std::move(out), {x, bias},
                    [&g, x, bias, outer, channels, inner](const Tensor<T>& go) {
                        accumulate(g, x, go);
                        if (bias.requires_grad()) {
                            Tensor<T> db(bias.shape());
                            for (std::size_t n = 0; n < outer; ++n) {
                                for (std::size_t c = 0; c < channels; ++c) {
                                    const T* src = go.ptr() + (n * channels + c) * inner;
                                    T acc{0};
                                    for (std::size_t i = 0; i < inner; ++i) {
                                        acc += src[i];
                                    }
                                    db[c] += acc;
                                }
                            }
                            accumulate(g, bias, db);
                        }
                    });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
    const Shape& s = x.shape();
    require(axis < s.size(), "softmax: axis " + std::to_string(axis) +
                                 " out of range for " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t len = s[axis];
    Graph<T>& g = x.graph();
    Tensor<T> out(s);
    const Tensor<T>& xv = x.value();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * len * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t i = 0; i < len; ++i) mx = std::max(mx, xv[base + i * inner]);
            T z{0};
            for (std::size_t i = 0; i < len; ++i) {
                const T e = std::exp(xv[base + i * inner] - mx);
                out[base + i * inner] = e;
                z += e;
            }
            for (std::size_t i = 0; i < len; ++i) out[base + i * inner] /= z;
        }
    }
    auto y = std::make_shared<Tensor<T>>(out);
    return g.record(std::move(out), {x},
                    [&g, x, y, outer, inner, len](const Tensor<T>& go) {
                        Tensor<T> dx(x.shape());
                        for (std::size_t o = 0; o < outer; ++o) {
                            for (std::size_t in = 0; in < inner; ++in) {
                                const std::size_t base = o * len * inner + in;
                                T dot{0};
                                for (std::size_t i = 0; i < len; ++i) {
                                    dot += go[base + i * inner] * (*y)[base + i * inner];
                                }
                                for (std::size_t i = 0; i < len; ++i) {
                                    const std::size_t k = base + i * inner;
                                    dx[k] = (*y)[k] * (go[k] - dot);
                                }
                            }
                        }
                        accumulate(g, x, dx);
                    });
}

// ---------------------------------------------------------------------------
// Convolutions

template <typename T>
Var<T> conv1d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride,
              std::size_t padding) {
    const bool batched = x.rank() == 3;
    require(x.rank() == 2 || batched, "conv1d: input must be [C,L] or [N,C,L]");
    require(weight.rank() == 3, "conv1d: weight must be [C_out,C_in,k]");
    ConvGeom cg{};
    cg.n = batched ? x.dim(0) : 1;
    cg.c = x.dim(batched ? 1 : 0);
    cg.h = 1;
    cg.w = x.dim(batched ? 2 : 1);
    cg.o = weight.dim(0);
    cg.kh = 1;
    cg.kw = weight.dim(2);
    require(weight.dim(1) == cg.c, "conv1d: input has " + std::to_string(cg.c) +
                                       " channels, weight expects " +
                                       std::to_string(weight.dim(1)));
    require(bias.rank() == 1 && bias.dim(0) == cg.o, "conv1d: bias must be [C_out]");
    cg.stride = stride;
    cg.pad_h = 0;
    cg.pad_w = padding;
    cg.ho = 1;
    cg.wo = detail::conv_out_len(cg.w, cg.kw, stride, padding);
    Shape out_shape = batched ? Shape{cg.n, cg.o, cg.wo} : Shape{cg.o, cg.wo};
    return conv_impl(x, weight, bias, cg, std::move(out_shape));
}

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride,
              std::size_t padding) {
    const bool batched = x.rank() == 4;
    require(x.rank() == 3 || batched, "conv2d: input must be [C,H,W] or [N,C,H,W]");
    require(weight.rank() == 4, "conv2d: weight must be [C_out,C_in,kh,kw]");
    const std::size_t off = batched ? 1 : 0;
    ConvGeom cg{};
    cg.n = batched ? x.dim(0) : 1;
    cg.c = x.dim(off);
    cg.h = x.dim(off + 1);
    cg.w = x.dim(off + 2);
    cg.o = weight.dim(0);
    cg.kh = weight.dim(2);
    cg.kw = weight.dim(3);
    require(weight.dim(1) == cg.c, "conv2d: input has " + std::to_string(cg.c) +
                                       " channels, weight expects " +
                                       std::to_string(weight.dim(1)));
    require(bias.rank() == 1 && bias.dim(0) == cg.o, "conv2d: bias must be [C_out]");
    cg.stride = stride;
    cg.pad_h = padding;
    cg.pad_w = padding;
    cg.ho = detail::conv_out_len(cg.h, cg.kh, stride, padding);
    cg.wo = detail::conv_out_len(cg.w, cg.kw, stride, padding);
    Shape out_shape = batched ? Shape{cg.n, cg.o, cg.ho, cg.wo} : Shape{cg.o, cg.ho, cg.wo};
    return conv_impl(x, weight, bias, cg, std::move(out_shape));
}

// ---------------------------------------------------------------------------
// Normalization

template <typename T>
Var<T> group_norm(Var<T> x, std::size_t groups, Var<T> gamma, Var<T> beta, T eps) {
    const bool batched = x.rank() >= 3;
    require(x.rank() >= 2, "group_norm: input must be [C,...] or [N,C,...]");
    const std::size_t n = batched ? x.dim(0) : 1;
    const std::size_t c = x.dim(batched ? 1 : 0);
    require(groups >= 1 && c % groups == 0,
            "group_norm: channels " + std::to_string(c) + " not divisible by groups " +
                std::to_string(groups));
    require(eps > T{0}, "group_norm: eps must be positive");
    require(gamma.value().size() == c && beta.value().size() == c,
            "group_norm: gamma/beta must be [C]");
    const std::size_t spatial = x.value().size() / (n * c);
    const std::size_t cpg = c / groups;
    const std::size_t m = cpg * spatial;

    Graph<T>& g = x.graph();
    const Tensor<T>& xv = x.value();
    auto xhat = std::make_shared<Tensor<T>>(xv.shape());
    auto inv_std = std::make_shared<std::vector<T>>(n * groups);
    Tensor<T> out(xv.shape());
    for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t gi = 0; gi < groups; ++gi) {
            const std::size_t base = (b * c + gi * cpg) * spatial;
            T mu{0};
            for (std::size_t i = 0; i < m; ++i) mu += xv[base + i];
            mu /= static_cast<T>(m);
            T var{0};
            for (std::size_t i = 0; i < m; ++i) {
                const T d = xv[base + i] - mu;
                var += d * d;
            }
            var /= static_cast<T>(m);
            const T is = T{1} / std::sqrt(var + eps);
            (*inv_std)[b * groups + gi] = is;
            for (std::size_t i = 0; i < m; ++i) {
                const T h = (xv[base + i] - mu) * is;
                (*xhat)[base + i] = h;
                const std::size_t ch = gi * cpg + i / spatial;
                out[base + i] = gamma.value()[ch] * h + beta.value()[ch];
            }
        }
    }
    return g.record(
        std::move(out), {x, gamma, beta},
        [&g, x, gamma, beta, xhat, inv_std, n, c, groups, cpg, spatial,
         m](const Tensor<T>& go) {
            Tensor<T> dgamma(gamma.shape());
            Tensor<T> dbeta(beta.shape());
            Tensor<T> dx(x.shape());
            for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t gi = 0; gi < groups; ++gi) {
                    const std::size_t base = (b * c + gi * cpg) * spatial;
                    T sum_dh{0}, sum_dh_h{0};
                    for (std::size_t i = 0; i < m; ++i) {
                        const std::size_t ch = gi * cpg + i / spatial;
                        const T dy = go[base + i];
                        const T h = (*xhat)[base + i];
                        dgamma[ch] += dy * h;
                        dbeta[ch] += dy;
                        const T dh = dy * gamma.value()[ch];
                        sum_dh += dh;
                        sum_dh_h += dh * h;
                    }
                    const T is = (*inv_std)[b * groups + gi];
                    const T inv_m = T{1} / static_cast<T>(m);
                    for (std::size_t i = 0; i < m; ++i) {
                        const std::size_t ch = gi * cpg + i / spatial;
                        const T dh = go[base + i] * gamma.value()[ch];
                        const T h = (*xhat)[base + i];
                        dx[base + i] = is * (dh - inv_m * sum_dh - h * inv_m * sum_dh_h);
                    }
                }
            }
            accumulate(g, x, dx);
            accumulate(g, gamma, dgamma);
            accumulate(g, beta, dbeta);
        });
}

// ---------------------------------------------------------------------------
// Shape plumbing

template <typename T>
Var<T> upsample_nearest1d(Var<T> x) {
    require(x.rank() == 2 || x.rank() == 3, "upsample_nearest1d: expected [C,L] or [N,C,L]");
    Shape s = x.shape();
    const std::size_t len = s.back();
    const std::size_t rows = x.value().size() / len;
    s.back() = 2 * len;
    Graph<T>& g = x.graph();
    Tensor<T> out(s);
    const Tensor<T>& xv = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < len; ++i) {
            out[r * 2 * len + 2 * i] = xv[r * len + i];
            out[r * 2 * len + 2 * i + 1] = xv[r * len + i];
        }
    }
    return g.record(std::move(out), {x}, [&g, x, rows, len](const Tensor<T>& go) {
        Tensor<T> dx(x.shape());
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < len; ++i) {
                dx[r * len + i] = go[r * 2 * len + 2 * i] + go[r * 2 * len + 2 * i + 1];
            }
        }
        accumulate(g, x, dx);
    });
}

template <typename T>
Var<T> concat(Var<T> a, Var<T> b, std::size_t axis) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    require(axis < as.size() && as.size() == bs.size(), "concat: axis out of range");
    for (std::size_t i = 0; i < as.size(); ++i) {
        require(i == axis || as[i] == bs[i], "concat: shape mismatch " + shape_str(as) +
                                                 " vs " + shape_str(bs));
    }
    std::size_t outer = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= as[i];
    const std::size_t a_in = a.value().size() / outer;
    const std::size_t b_in = b.value().size() / outer;
    Shape s = as;
    s[axis] += bs[axis];
    Graph<T>& g = a.graph();
    Tensor<T> out(s);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(a.value().ptr() + o * a_in, a_in, out.ptr() + o * (a_in + b_in));
        std::copy_n(b.value().ptr() + o * b_in, b_in, out.ptr() + o * (a_in + b_in) + a_in);
    }
    return g.record(std::move(out), {a, b}, [&g, a, b, outer, a_in, b_in](const Tensor<T>& go) {
        if (a.requires_grad()) {
            Tensor<T> da(a.shape());
            for (std::size_t o = 0; o < outer; ++o) {
                std::copy_n(go.ptr() + o * (a_in + b_in), a_in, da.ptr() + o * a_in);
            }
            accumulate(g, a, da);
        }
        if (b.requires_grad()) {
            Tensor<T> db(b.shape());
            for (std::size_t o = 0; o < outer; ++o) {
                std::copy_n(go.ptr() + o * (a_in + b_in) + a_in, b_in, db.ptr() + o * b_in);
            }
            accumulate(g, b, db);
        }
    });
}

template <typename T>
Var<T> transpose_last2(Var<T> x) {
    require(x.rank() >= 2, "transpose_last2: rank must be >= 2");
    Shape s = x.shape();
    const std::size_t r = s[s.size() - 2], c = s.back();
    const std::size_t batch = x.value().size() / (r * c);
    std::swap(s[s.size() - 2], s.back());
    Graph<T>& g = x.graph();
    Tensor<T> out(s);
    const Tensor<T>& xv = x.value();
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < r; ++i) {
            for (std::size_t j = 0; j < c; ++j) {
                out[b * r * c + j * r + i] = xv[b * r * c + i * c + j];
            }
        }
    }
    return g.record(std::move(out), {x}, [&g, x, batch, r, c](const Tensor<T>& go) {
        Tensor<T> dx(x.shape());
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) {
                    dx[b * r * c + i * c + j] = go[b * r * c + j * r + i];
                }
            }
        }
        accumulate(g, x, dx);
    });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
    Graph<T>& g = x.graph();
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return g.record(std::move(out), {x}, [&g, x](const Tensor<T>& go) {
        accumulate(g, x, go.reshaped(x.shape()));
    });
}

template <typename T>
Var<T> gather_rows(Var<T> x, const std::vector<std::size_t>& rows) {
    require(x.rank() == 2, "gather_rows: input must be rank 2");
    const std::size_t nrows = x.dim(0), d = x.dim(1);
    Graph<T>& g = x.graph();
    Tensor<T> out({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] < nrows, "gather_rows: row index out of range");
        std::copy_n(x.value().ptr() + rows[i] * d, d, out.ptr() + i * d);
    }
    return g.record(std::move(out), {x}, [&g, x, rows, d](const Tensor<T>& go) {
        Tensor<T> dx(x.shape());
        for (std::size_t i = 0; i < rows.size(); ++i) {
            T* dst = dx.ptr() + rows[i] * d;
            const T* src = go.ptr() + i * d;
            for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
        }
        accumulate(g, x, dx);
    });
}

// ---------------------------------------------------------------------------
// Spatial softmax

template <typename T>
Var<T> spatial_softmax(Var<T> x, T temperature) {
    const bool batched = x.rank() == 4;
    require(x.rank() == 3 || batched, "spatial_softmax: expected [C,H,W] or [N,C,H,W]");
    require(temperature > T{0}, "spatial_softmax: temperature must be positive");
    require(x.value().all_finite(), "spatial_softmax: non-finite input");
    const std::size_t off = batched ? 1 : 0;
    const std::size_t n = batched ? x.dim(0) : 1;
    const std::size_t c = x.dim(off), h = x.dim(off + 1), w = x.dim(off + 2);
    const std::size_t cells = h * w;
    auto xs = std::make_shared<std::vector<T>>(cells);
    auto ys = std::make_shared<std::vector<T>>(cells);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t q = 0; q < w; ++q) {
            (*xs)[r * w + q] = static_cast<T>(2 * q + 1) / static_cast<T>(w) - T{1};
            (*ys)[r * w + q] = static_cast<T>(2 * r + 1) / static_cast<T>(h) - T{1};
        }
    }
    Graph<T>& g = x.graph();
    const Tensor<T>& xv = x.value();
    auto probs = std::make_shared<std::vector<T>>(n * c * cells);
    Tensor<T> out(batched ? Shape{n, 2 * c} : Shape{2 * c});
    for (std::size_t b = 0; b < n * c; ++b) {
        const T* src = xv.ptr() + b * cells;
        T* p = probs->data() + b * cells;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t i = 0; i < cells; ++i) mx = std::max(mx, src[i] / temperature);
        T z{0};
        for (std::size_t i = 0; i < cells; ++i) {
            p[i] = std::exp(src[i] / temperature - mx);
            z += p[i];
        }
        T ex{0}, ey{0};
        for (std::size_t i = 0; i < cells; ++i) {
            p[i] /= z;
            ex += p[i] * (*xs)[i];
            ey += p[i] * (*ys)[i];
        }
        out[2 * b] = ex;
        out[2 * b + 1] = ey;
    }
    auto expect = std::make_shared<Tensor<T>>(out);
    return g.record(std::move(out), {x},
                    [&g, x, probs, xs, ys, expect, n, c, cells,
                     temperature](const Tensor<T>& go) {
                        Tensor<T> dx(x.shape());
                        for (std::size_t b = 0; b < n * c; ++b) {
                            const T* p = probs->data() + b * cells;
                            const T gx = go[2 * b], gy = go[2 * b + 1];
                            const T ex = (*expect)[2 * b], ey = (*expect)[2 * b + 1];
                            for (std::size_t i = 0; i < cells; ++i) {
                                dx[b * cells + i] =
                                    p[i] * (gx * ((*xs)[i] - ex) + gy * ((*ys)[i] - ey)) /
                                    temperature;
                            }
                        }
                        accumulate(g, x, dx);
                    });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(Var<T> x) {
    Graph<T>& g = x.graph();
    T acc{0};
    for (T v : x.value().data()) acc += v;
    return g.record(Tensor<T>::scalar(acc), {x}, [&g, x](const Tensor<T>& go) {
        accumulate(g, x, Tensor<T>(x.shape(), go[0]));
    });
}

template <typename T>
Var<T> mean(Var<T> x) {
    return scale(sum(x), T{1} / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
    check_same_shape(a, b, "mse");
    Graph<T>& g = a.graph();
    const std::size_t n = a.value().size();
    T acc{0};
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a.value()[i] - b.value()[i];
        acc += d * d;
    }
    return g.record(Tensor<T>::scalar(acc / static_cast<T>(n)), {a, b},
                    [&g, a, b, n](const Tensor<T>& go) {
                        Tensor<T> da(a.shape());
                        const T k = T{2} * go[0] / static_cast<T>(n);
                        for (std::size_t i = 0; i < n; ++i) {
                            da[i] = k * (a.value()[i] - b.value()[i]);
                        }
                        if (a.requires_grad()) accumulate(g, a, da);
                        if (b.requires_grad()) {
                            for (auto& v : da.storage()) v = -v;
                            accumulate(g, b, da);
                        }
                    });
}

#define FAD_INSTANTIATE_OPS(T)                                                         \
    template Var<T> add(Var<T>, Var<T>);                                               \
    template Var<T> sub(Var<T>, Var<T>);                                               \
    template Var<T> mul(Var<T>, Var<T>);                                               \
    template Var<T> scale(Var<T>, T);                                                  \
    template Var<T> scale_items(Var<T>, const std::vector<T>&);                        \
    template Var<T> relu(Var<T>);                                                      \
    template Var<T> silu(Var<T>);                                                      \
    template Var<T> linear(Var<T>, Var<T>, Var<T>);                                    \
    template Var<T> add_channel_bias(Var<T>, Var<T>);                                  \
    template Var<T> softmax(Var<T>, std::size_t);                                      \
    template Var<T> conv1d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);          \
    template Var<T> conv2d(Var<T>, Var<T>, Var<T>, std::size_t, std::size_t);          \
    template Var<T> group_norm(Var<T>, std::size_t, Var<T>, Var<T>, T);                \
    template Var<T> upsample_nearest1d(Var<T>);                                        \
    template Var<T> concat(Var<T>, Var<T>, std::size_t);                               \
    template Var<T> transpose_last2(Var<T>);                                           \
    template Var<T> reshape(Var<T>, Shape);                                            \
    template Var<T> gather_rows(Var<T>, const std::vector<std::size_t>&);              \
    template Var<T> spatial_softmax(Var<T>, T);                                        \
    template Var<T> sum(Var<T>);                                                       \
    template Var<T> mean(Var<T>);                                                      \
    template Var<T> mse(Var<T>, Var<T>);

FAD_INSTANTIATE_OPS(float)
FAD_INSTANTIATE_OPS(double)

} // namespace fad::nn
