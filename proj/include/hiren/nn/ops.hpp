#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>

#include "hiren/nn/graph.hpp"

namespace hiren::nn {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapM = Eigen::Map<const MatRM<T>>;

namespace ops {

// ---------------------------------------------------------------- elementwise

template <typename T>
int add(Graph<T>& g, int a, int b) {
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    check_same_shape(va, vb, "add");
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    return g.node(std::move(out), {a, b}, [a, b](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (gg.needs_grad(a)) {
            Tensor<T>& da = gg.grad(a);
            for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (gg.needs_grad(b)) {
            Tensor<T>& db = gg.grad(b);
            for (int64_t i = 0; i < dy.size(); ++i) db[i] += dy[i];
        }
    });
}

template <typename T>
int sub(Graph<T>& g, int a, int b) {
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    check_same_shape(va, vb, "sub");
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    return g.node(std::move(out), {a, b}, [a, b](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (gg.needs_grad(a)) {
            Tensor<T>& da = gg.grad(a);
            for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i];
        }
        if (gg.needs_grad(b)) {
            Tensor<T>& db = gg.grad(b);
            for (int64_t i = 0; i < dy.size(); ++i) db[i] -= dy[i];
        }
    });
}

template <typename T>
int mul(Graph<T>& g, int a, int b) {
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    check_same_shape(va, vb, "mul");
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    return g.node(std::move(out), {a, b}, [a, b](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        const Tensor<T>& va = gg.value(a);
        const Tensor<T>& vb = gg.value(b);
        if (gg.needs_grad(a)) {
            Tensor<T>& da = gg.grad(a);
            for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * vb[i];
        }
        if (gg.needs_grad(b)) {
            Tensor<T>& db = gg.grad(b);
            for (int64_t i = 0; i < dy.size(); ++i) db[i] += dy[i] * va[i];
        }
    });
}

template <typename T>
int scale(Graph<T>& g, int a, T s) {
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = va[i] * s;
    return g.node(std::move(out), {a}, [a, s](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(a)) return;
        Tensor<T>& da = gg.grad(a);
        for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * s;
    });
}

template <typename T>
int abs_val(Graph<T>& g, int a) {
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::abs(va[i]);
    return g.node(std::move(out), {a}, [a](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        const Tensor<T>& va = gg.value(a);
        if (!gg.needs_grad(a)) return;
        Tensor<T>& da = gg.grad(a);
        for (int64_t i = 0; i < dy.size(); ++i)
            da[i] += dy[i] * (va[i] > T(0) ? T(1) : (va[i] < T(0) ? T(-1) : T(0)));
    });
}

// y = sqrt(x + c), for x >= 0 (Charbonnier-style penalties).
template <typename T>
int sqrt_shift(Graph<T>& g, int a, T c) {
    const auto& va = g.value(a);
    Tensor<T> out(va.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(va[i] + c);
    return g.node(std::move(out), {a}, [a](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        const Tensor<T>& y = gg.value(id);
        if (!gg.needs_grad(a)) return;
        Tensor<T>& da = gg.grad(a);
        for (int64_t i = 0; i < dy.size(); ++i) da[i] += dy[i] * T(0.5) / y[i];
    });
}

// PReLU with a single learnable slope.
template <typename T>
int prelu(Graph<T>& g, int x, int slope) {
    const auto& vx = g.value(x);
    T s = g.value(slope)[0];
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = vx[i] > T(0) ? vx[i] : s * vx[i];
    return g.node(std::move(out), {x, slope}, [x, slope, s](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        const Tensor<T>& vx = gg.value(x);
        if (gg.needs_grad(x)) {
            Tensor<T>& dx = gg.grad(x);
            for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * (vx[i] > T(0) ? T(1) : s);
        }
        if (gg.needs_grad(slope)) {
            T acc = 0;
            for (int64_t i = 0; i < dy.size(); ++i)
                if (vx[i] <= T(0)) acc += dy[i] * vx[i];
            gg.grad(slope)[0] += acc;
        }
    });
}

// Clamp to [0,1]; gradient passes through on the closed interval.
template <typename T>
int clamp01(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    Tensor<T> out(vx.shape());
    for (int64_t i = 0; i < out.size(); ++i) out[i] = std::min(T(1), std::max(T(0), vx[i]));
    return g.node(std::move(out), {x}, [x](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        const Tensor<T>& vx = gg.value(x);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int64_t i = 0; i < dy.size(); ++i)
            if (vx[i] >= T(0) && vx[i] <= T(1)) dx[i] += dy[i];
    });
}

// ---------------------------------------------------------------- reductions

template <typename T>
int sum_all(Graph<T>& g, int a) {
    const auto& va = g.value(a);
    T acc = 0;
    for (int64_t i = 0; i < va.size(); ++i) acc += va[i];
    return g.node(Tensor<T>::scalar(acc), {a}, [a](Graph<T>& gg, int id) {
        T d = gg.grad(id)[0];
        if (!gg.needs_grad(a)) return;
        Tensor<T>& da = gg.grad(a);
        for (int64_t i = 0; i < da.size(); ++i) da[i] += d;
    });
}

template <typename T>
int mean_all(Graph<T>& g, int a) {
    const auto& va = g.value(a);
    T acc = 0;
    for (int64_t i = 0; i < va.size(); ++i) acc += va[i];
    T inv = T(1) / static_cast<T>(va.size());
    return g.node(Tensor<T>::scalar(acc * inv), {a}, [a, inv](Graph<T>& gg, int id) {
        T d = gg.grad(id)[0] * inv;
        if (!gg.needs_grad(a)) return;
        Tensor<T>& da = gg.grad(a);
        for (int64_t i = 0; i < da.size(); ++i) da[i] += d;
    });
}

// (B, ...) -> (B,): mean over all non-batch elements.
template <typename T>
int mean_per_sample(Graph<T>& g, int a) {
    const auto& va = g.value(a);
    int batch = va.dim(0);
    int64_t per = va.size() / batch;
    Tensor<T> out({batch});
    for (int b = 0; b < batch; ++b) {
        T acc = 0;
        const T* p = va.data() + b * per;
        for (int64_t i = 0; i < per; ++i) acc += p[i];
        out[b] = acc / static_cast<T>(per);
    }
    return g.node(std::move(out), {a}, [a, batch, per](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(a)) return;
        Tensor<T>& da = gg.grad(a);
        for (int b = 0; b < batch; ++b) {
            T d = dy[b] / static_cast<T>(per);
            T* p = da.data() + b * per;
            for (int64_t i = 0; i < per; ++i) p[i] += d;
        }
    });
}

// dot(l, w) / B with w a plain constant; the quality-weighted loss kernel.
template <typename T>
int dot_div_count(Graph<T>& g, int l, Tensor<T> w) {
    const auto& vl = g.value(l);
    if (vl.rank() != 1 || !vl.same_shape(w))
        throw ShapeError("dot_div_count: loss vector " + vl.shape_string() + " vs weights " + w.shape_string());
    int n = vl.dim(0);
    T acc = 0;
    for (int i = 0; i < n; ++i) acc += vl[i] * w[i];
    acc /= static_cast<T>(n);
    auto wp = std::make_shared<Tensor<T>>(std::move(w));
    return g.node(Tensor<T>::scalar(acc), {l}, [l, wp, n](Graph<T>& gg, int id) {
        T d = gg.grad(id)[0] / static_cast<T>(n);
        if (!gg.needs_grad(l)) return;
        Tensor<T>& dl = gg.grad(l);
        for (int i = 0; i < n; ++i) dl[i] += d * (*wp)[i];
    });
}

// --------------------------------------------------------------- shape moves

template <typename T>
int concat_channels(Graph<T>& g, int a, int b) {
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    if (va.rank() != 4 || vb.rank() != 4 || va.dim(0) != vb.dim(0) || va.dim(2) != vb.dim(2) ||
        va.dim(3) != vb.dim(3))
        throw ShapeError("concat_channels: " + va.shape_string() + " vs " + vb.shape_string());
    int batch = va.dim(0), c1 = va.dim(1), c2 = vb.dim(1), h = va.dim(2), w = va.dim(3);
    int64_t plane = static_cast<int64_t>(h) * w;
    Tensor<T> out({batch, c1 + c2, h, w});
    for (int n = 0; n < batch; ++n) {
        std::memcpy(out.data() + (static_cast<int64_t>(n) * (c1 + c2)) * plane,
                    va.data() + static_cast<int64_t>(n) * c1 * plane, sizeof(T) * c1 * plane);
        std::memcpy(out.data() + (static_cast<int64_t>(n) * (c1 + c2) + c1) * plane,
                    vb.data() + static_cast<int64_t>(n) * c2 * plane, sizeof(T) * c2 * plane);
    }
    return g.node(std::move(out), {a, b}, [a, b, batch, c1, c2, plane](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (gg.needs_grad(a)) {
            Tensor<T>& da = gg.grad(a);
            for (int n = 0; n < batch; ++n) {
                const T* src = dy.data() + (static_cast<int64_t>(n) * (c1 + c2)) * plane;
                T* dst = da.data() + static_cast<int64_t>(n) * c1 * plane;
                for (int64_t i = 0; i < c1 * plane; ++i) dst[i] += src[i];
            }
        }
        if (gg.needs_grad(b)) {
            Tensor<T>& db = gg.grad(b);
            for (int n = 0; n < batch; ++n) {
                const T* src = dy.data() + (static_cast<int64_t>(n) * (c1 + c2) + c1) * plane;
                T* dst = db.data() + static_cast<int64_t>(n) * c2 * plane;
                for (int64_t i = 0; i < c2 * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

// (B, d) -> (B, d, H, W): tile each code value over the spatial plane.
template <typename T>
int broadcast_spatial(Graph<T>& g, int k, int h, int w) {
    const auto& vk = g.value(k);
    if (vk.rank() != 2) throw ShapeError("broadcast_spatial expects (B,d), got " + vk.shape_string());
    int batch = vk.dim(0), d = vk.dim(1);
    int64_t plane = static_cast<int64_t>(h) * w;
    Tensor<T> out({batch, d, h, w});
    for (int n = 0; n < batch; ++n)
        for (int c = 0; c < d; ++c) {
            T v = vk.at(n, c);
            T* p = out.data() + (static_cast<int64_t>(n) * d + c) * plane;
            for (int64_t i = 0; i < plane; ++i) p[i] = v;
        }
    return g.node(std::move(out), {k}, [k, batch, d, plane](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(k)) return;
        Tensor<T>& dk = gg.grad(k);
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < d; ++c) {
                const T* p = dy.data() + (static_cast<int64_t>(n) * d + c) * plane;
                T acc = 0;
                for (int64_t i = 0; i < plane; ++i) acc += p[i];
                dk.at(n, c) += acc;
            }
    });
}

template <typename T>
int global_avg_pool(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    if (vx.rank() != 4) throw ShapeError("global_avg_pool expects (B,C,H,W), got " + vx.shape_string());
    int batch = vx.dim(0), c = vx.dim(1);
    int64_t plane = static_cast<int64_t>(vx.dim(2)) * vx.dim(3);
    Tensor<T> out({batch, c});
    for (int n = 0; n < batch; ++n)
        for (int j = 0; j < c; ++j) {
            const T* p = vx.data() + (static_cast<int64_t>(n) * c + j) * plane;
            T acc = 0;
            for (int64_t i = 0; i < plane; ++i) acc += p[i];
            out.at(n, j) = acc / static_cast<T>(plane);
        }
    return g.node(std::move(out), {x}, [x, batch, c, plane](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int n = 0; n < batch; ++n)
            for (int j = 0; j < c; ++j) {
                T d = dy.at(n, j) / static_cast<T>(plane);
                T* p = dx.data() + (static_cast<int64_t>(n) * c + j) * plane;
                for (int64_t i = 0; i < plane; ++i) p[i] += d;
            }
    });
}

// (B, r*r*C, H, W) -> (B, C, r*H, r*W); output channel c reads input channel
// c*r*r + sh*r + sw.
template <typename T>
int pixel_shuffle(Graph<T>& g, int x, int r) {
    const auto& vx = g.value(x);
    if (vx.rank() != 4 || vx.dim(1) % (r * r) != 0)
        throw ShapeError("pixel_shuffle: channels not divisible by r^2 in " + vx.shape_string());
    int batch = vx.dim(0), cin = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    int cout = cin / (r * r);
    Tensor<T> out({batch, cout, h * r, w * r});
    for (int n = 0; n < batch; ++n)
        for (int c = 0; c < cout; ++c)
            for (int sh = 0; sh < r; ++sh)
                for (int sw = 0; sw < r; ++sw) {
                    int q = c * r * r + sh * r + sw;
                    for (int i = 0; i < h; ++i) {
                        const T* src = &vx.at(n, q, i, 0);
                        T* dst = &out.at(n, c, i * r + sh, sw);
                        for (int j = 0; j < w; ++j) dst[static_cast<int64_t>(j) * r] = src[j];
                    }
                }
    return g.node(std::move(out), {x}, [x, batch, cout, h, w, r](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int n = 0; n < batch; ++n)
            for (int c = 0; c < cout; ++c)
                for (int sh = 0; sh < r; ++sh)
                    for (int sw = 0; sw < r; ++sw) {
                        int q = c * r * r + sh * r + sw;
                        for (int i = 0; i < h; ++i) {
                            const T* src = &dy.at(n, c, i * r + sh, sw);
                            T* dst = &dx.at(n, q, i, 0);
                            for (int j = 0; j < w; ++j) dst[j] += src[static_cast<int64_t>(j) * r];
                        }
                    }
    });
}

namespace detail {

// 2x bilinear tap: output index -> (lo index, hi index, hi weight).
inline void up2_taps(int out_i, int in_n, int& i0, int& i1, double& w1) {
    double src = (out_i + 0.5) / 2.0 - 0.5;
    double f = std::floor(src);
    i0 = std::max(0, std::min(in_n - 1, static_cast<int>(f)));
    i1 = std::max(0, std::min(in_n - 1, static_cast<int>(f) + 1));
    w1 = src - f;
}

}  // namespace detail

// Bilinear x2 upsampling, align_corners=false convention.
template <typename T>
int upsample2x_bilinear(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    if (vx.rank() != 4) throw ShapeError("upsample2x expects (B,C,H,W), got " + vx.shape_string());
    int batch = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Tensor<T> out({batch, c, 2 * h, 2 * w});
    for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int oy = 0; oy < 2 * h; ++oy) {
                int y0, y1;
                double wy;
                detail::up2_taps(oy, h, y0, y1, wy);
                for (int ox = 0; ox < 2 * w; ++ox) {
                    int x0, x1;
                    double wx;
                    detail::up2_taps(ox, w, x0, x1, wx);
                    double v = (1 - wy) * ((1 - wx) * vx.at(n, ch, y0, x0) + wx * vx.at(n, ch, y0, x1)) +
                               wy * ((1 - wx) * vx.at(n, ch, y1, x0) + wx * vx.at(n, ch, y1, x1));
                    out.at(n, ch, oy, ox) = static_cast<T>(v);
                }
            }
    return g.node(std::move(out), {x}, [x, batch, c, h, w](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int n = 0; n < batch; ++n)
            for (int ch = 0; ch < c; ++ch)
                for (int oy = 0; oy < 2 * h; ++oy) {
                    int y0, y1;
                    double wy;
                    detail::up2_taps(oy, h, y0, y1, wy);
                    for (int ox = 0; ox < 2 * w; ++ox) {
                        int x0, x1;
                        double wx;
                        detail::up2_taps(ox, w, x0, x1, wx);
                        T d = dy.at(n, ch, oy, ox);
                        dx.at(n, ch, y0, x0) += static_cast<T>((1 - wy) * (1 - wx)) * d;
                        dx.at(n, ch, y0, x1) += static_cast<T>((1 - wy) * wx) * d;
                        dx.at(n, ch, y1, x0) += static_cast<T>(wy * (1 - wx)) * d;
                        dx.at(n, ch, y1, x1) += static_cast<T>(wy * wx) * d;
                    }
                }
    });
}

// (B,C,H,W) -> (B*H, W, C): rows are horizontal scanlines, the layout the
// width-direction GRU consumes.
template <typename T>
int image_to_width_rows(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    if (vx.rank() != 4) throw ShapeError("image_to_width_rows expects (B,C,H,W)");
    int batch = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Tensor<T> out({batch * h, w, c});
    for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) out.at(n * h + i, j, ch) = vx.at(n, ch, i, j);
    return g.node(std::move(out), {x}, [x, batch, c, h, w](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int n = 0; n < batch; ++n)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) dx.at(n, ch, i, j) += dy.at(n * h + i, j, ch);
    });
}

// Inverse of image_to_width_rows: (B*H, W, C) -> (B, C, H, W).
template <typename T>
int width_rows_to_image(Graph<T>& g, int x, int batch, int h) {
    const auto& vx = g.value(x);
    if (vx.rank() != 3 || vx.dim(0) != batch * h)
        throw ShapeError("width_rows_to_image: rows " + vx.shape_string());
    int w = vx.dim(1), c = vx.dim(2);
    Tensor<T> out({batch, c, h, w});
    for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) out.at(n, ch, i, j) = vx.at(n * h + i, j, ch);
    return g.node(std::move(out), {x}, [x, batch, c, h, w](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int n = 0; n < batch; ++n)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) dx.at(n * h + i, j, ch) += dy.at(n, ch, i, j);
    });
}

// (B,C,H,W) -> (B, W, C*H): one feature vector per image column.
template <typename T>
int image_to_column_sequence(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    if (vx.rank() != 4) throw ShapeError("image_to_column_sequence expects (B,C,H,W)");
    int batch = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Tensor<T> out({batch, w, c * h});
    for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j) out.at(n, j, ch * h + i) = vx.at(n, ch, i, j);
    return g.node(std::move(out), {x}, [x, batch, c, h, w](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int n = 0; n < batch; ++n)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i < h; ++i)
                    for (int j = 0; j < w; ++j) dx.at(n, ch, i, j) += dy.at(n, j, ch * h + i);
    });
}

// x (B,T,F) + p (T,F), broadcast over the batch axis.
template <typename T>
int add_position_bias(Graph<T>& g, int x, int p) {
    const auto& vx = g.value(x);
    const auto& vp = g.value(p);
    if (vx.rank() != 3 || vp.rank() != 2 || vx.dim(1) != vp.dim(0) || vx.dim(2) != vp.dim(1))
        throw ShapeError("add_position_bias: " + vx.shape_string() + " vs " + vp.shape_string());
    int batch = vx.dim(0);
    int64_t per = vp.size();
    Tensor<T> out(vx.shape());
    for (int n = 0; n < batch; ++n)
        for (int64_t i = 0; i < per; ++i) out[n * per + i] = vx[n * per + i] + vp[i];
    return g.node(std::move(out), {x, p}, [x, p, batch, per](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (gg.needs_grad(x)) {
            Tensor<T>& dx = gg.grad(x);
            for (int64_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
        }
        if (gg.needs_grad(p)) {
            Tensor<T>& dp = gg.grad(p);
            for (int n = 0; n < batch; ++n)
                for (int64_t i = 0; i < per; ++i) dp[i] += dy[n * per + i];
        }
    });
}

// q (L,d) -> (B,L,d) by tiling over the batch axis.
template <typename T>
int tile_batch(Graph<T>& g, int q, int batch) {
    const auto& vq = g.value(q);
    if (vq.rank() != 2) throw ShapeError("tile_batch expects (L,d)");
    int64_t per = vq.size();
    Tensor<T> out({batch, vq.dim(0), vq.dim(1)});
    for (int n = 0; n < batch; ++n) std::memcpy(out.data() + n * per, vq.data(), sizeof(T) * per);
    return g.node(std::move(out), {q}, [q, batch, per](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(q)) return;
        Tensor<T>& dq = gg.grad(q);
        for (int n = 0; n < batch; ++n)
            for (int64_t i = 0; i < per; ++i) dq[i] += dy[n * per + i];
    });
}

// ------------------------------------------------------------------- linear

// x (..., F) @ w(O,F)^T + b(O) -> (..., O). Pass b = -1 to skip the bias.
template <typename T>
int linear_lastdim(Graph<T>& g, int x, int w, int b) {
    const auto& vx = g.value(x);
    const auto& vw = g.value(w);
    if (vw.rank() != 2 || vx.dim(vx.rank() - 1) != vw.dim(1))
        throw ShapeError("linear_lastdim: " + vx.shape_string() + " @ " + vw.shape_string());
    int f = vw.dim(1), o = vw.dim(0);
    int64_t rows = vx.size() / f;
    std::vector<int> oshape = vx.shape();
    oshape.back() = o;
    Tensor<T> out(oshape);
    CMapM<T> xm(vx.data(), rows, f);
    CMapM<T> wm(vw.data(), o, f);
    MapM<T> ym(out.data(), rows, o);
    ym.noalias() = xm * wm.transpose();
    if (b >= 0) {
        const auto& vb = g.value(b);
        if (vb.size() != o) throw ShapeError("linear_lastdim: bias size mismatch");
        for (int64_t r = 0; r < rows; ++r)
            for (int j = 0; j < o; ++j) out[r * o + j] += vb[j];
    }
    auto fn = [x, w, b, rows, f, o](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        CMapM<T> dym(dy.data(), rows, o);
        if (gg.needs_grad(x)) {
            CMapM<T> wm(gg.value(w).data(), o, f);
            MapM<T> dxm(gg.grad(x).data(), rows, f);
            dxm.noalias() += dym * wm;
        }
        if (gg.needs_grad(w)) {
            CMapM<T> xm(gg.value(x).data(), rows, f);
            MapM<T> dwm(gg.grad(w).data(), o, f);
            dwm.noalias() += dym.transpose() * xm;
        }
        if (b >= 0 && gg.needs_grad(b)) {
            Tensor<T>& db = gg.grad(b);
            for (int64_t r = 0; r < rows; ++r)
                for (int j = 0; j < o; ++j) db[j] += dy[r * o + j];
        }
    };
    return b >= 0 ? g.node(std::move(out), {x, w, b}, fn) : g.node(std::move(out), {x, w}, fn);
}

// Batched matmul. trans_b=false: (B,m,k)@(B,k,n); trans_b=true: (B,m,k)@(B,n,k)^T.
template <typename T>
int bmm(Graph<T>& g, int a, int b, bool trans_b = false) {
    const auto& va = g.value(a);
    const auto& vb = g.value(b);
    if (va.rank() != 3 || vb.rank() != 3 || va.dim(0) != vb.dim(0))
        throw ShapeError("bmm: " + va.shape_string() + " vs " + vb.shape_string());
    int batch = va.dim(0), m = va.dim(1), k = va.dim(2);
    int n = trans_b ? vb.dim(1) : vb.dim(2);
    if ((trans_b ? vb.dim(2) : vb.dim(1)) != k)
        throw ShapeError("bmm: inner dim mismatch " + va.shape_string() + " vs " + vb.shape_string());
    Tensor<T> out({batch, m, n});
    for (int i = 0; i < batch; ++i) {
        CMapM<T> am(va.data() + static_cast<int64_t>(i) * m * k, m, k);
        MapM<T> ym(out.data() + static_cast<int64_t>(i) * m * n, m, n);
        if (trans_b) {
            CMapM<T> bm(vb.data() + static_cast<int64_t>(i) * n * k, n, k);
            ym.noalias() = am * bm.transpose();
        } else {
            CMapM<T> bm(vb.data() + static_cast<int64_t>(i) * k * n, k, n);
            ym.noalias() = am * bm;
        }
    }
    return g.node(std::move(out), {a, b}, [a, b, batch, m, k, n, trans_b](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        for (int i = 0; i < batch; ++i) {
            CMapM<T> dym(dy.data() + static_cast<int64_t>(i) * m * n, m, n);
            if (gg.needs_grad(a)) {
                MapM<T> dam(gg.grad(a).data() + static_cast<int64_t>(i) * m * k, m, k);
                if (trans_b) {
                    CMapM<T> bm(gg.value(b).data() + static_cast<int64_t>(i) * n * k, n, k);
                    dam.noalias() += dym * bm;
                } else {
                    CMapM<T> bm(gg.value(b).data() + static_cast<int64_t>(i) * k * n, k, n);
                    dam.noalias() += dym * bm.transpose();
                }
            }
            if (gg.needs_grad(b)) {
                CMapM<T> am(gg.value(a).data() + static_cast<int64_t>(i) * m * k, m, k);
                if (trans_b) {
                    MapM<T> dbm(gg.grad(b).data() + static_cast<int64_t>(i) * n * k, n, k);
                    dbm.noalias() += dym.transpose() * am;
                } else {
                    MapM<T> dbm(gg.grad(b).data() + static_cast<int64_t>(i) * k * n, k, n);
                    dbm.noalias() += am.transpose() * dym;
                }
            }
        }
    });
}

// ------------------------------------------------------------------- softmax

template <typename T>
int softmax_lastdim(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    int n = vx.dim(vx.rank() - 1);
    int64_t rows = vx.size() / n;
    Tensor<T> out(vx.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = vx.data() + r * n;
        T* dst = out.data() + r * n;
        T mx = src[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, src[j]);
        T sum = 0;
        for (int j = 0; j < n; ++j) {
            dst[j] = std::exp(src[j] - mx);
            sum += dst[j];
        }
        T inv = T(1) / sum;
        for (int j = 0; j < n; ++j) dst[j] *= inv;
    }
    return g.node(std::move(out), {x}, [x, rows, n](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        const Tensor<T>& y = gg.value(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int64_t r = 0; r < rows; ++r) {
            const T* yp = y.data() + r * n;
            const T* dp = dy.data() + r * n;
            T* xp = dx.data() + r * n;
            T dot = 0;
            for (int j = 0; j < n; ++j) dot += dp[j] * yp[j];
            for (int j = 0; j < n; ++j) xp[j] += yp[j] * (dp[j] - dot);
        }
    });
}

// -------------------------------------------------------------------- conv2d

namespace detail {

template <typename T>
void im2col(const T* x, int c_in, int h, int w, int kh, int kw, int sh, int sw, int ph, int pw,
            int h_out, int w_out, T* col) {
    for (int c = 0; c < c_in; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                T* row = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * h_out * w_out;
                for (int ho = 0; ho < h_out; ++ho) {
                    int yi = ho * sh - ph + ki;
                    T* dst = row + static_cast<int64_t>(ho) * w_out;
                    if (yi < 0 || yi >= h) {
                        std::fill(dst, dst + w_out, T(0));
                        continue;
                    }
                    const T* src = x + (static_cast<int64_t>(c) * h + yi) * w;
                    if (sw == 1) {
                        int x0 = -pw + kj;  // input column of output 0
                        int lo = std::min(w_out, std::max(0, -x0));
                        int hi = std::min(w_out, w - x0);
                        if (lo > 0) std::fill(dst, dst + lo, T(0));
                        if (hi > lo) std::memcpy(dst + lo, src + x0 + lo, sizeof(T) * (hi - lo));
                        if (hi < w_out) std::fill(dst + std::max(hi, lo), dst + w_out, T(0));
                    } else {
                        for (int wo = 0; wo < w_out; ++wo) {
                            int xj = wo * sw - pw + kj;
                            dst[wo] = (xj >= 0 && xj < w) ? src[xj] : T(0);
                        }
                    }
                }
            }
}

template <typename T>
void col2im_add(const T* col, int c_in, int h, int w, int kh, int kw, int sh, int sw, int ph, int pw,
                int h_out, int w_out, T* dx) {
    for (int c = 0; c < c_in; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = col + ((static_cast<int64_t>(c) * kh + ki) * kw + kj) * h_out * w_out;
                for (int ho = 0; ho < h_out; ++ho) {
                    int yi = ho * sh - ph + ki;
                    if (yi < 0 || yi >= h) continue;
                    T* dst = dx + (static_cast<int64_t>(c) * h + yi) * w;
                    const T* src = row + static_cast<int64_t>(ho) * w_out;
                    for (int wo = 0; wo < w_out; ++wo) {
                        int xj = wo * sw - pw + kj;
                        if (xj >= 0 && xj < w) dst[xj] += src[wo];
                    }
                }
            }
}

}  // namespace detail

// x (B,Cin,H,W), w (Cout,Cin,kh,kw), optional bias b (Cout) (pass -1 to skip).
template <typename T>
int conv2d(Graph<T>& g, int x, int w, int b, int sh, int sw, int ph, int pw) {
    const auto& vx = g.value(x);
    const auto& vw = g.value(w);
    if (vx.rank() != 4 || vw.rank() != 4) throw ShapeError("conv2d expects 4-D input and weights");
    if (vx.dim(1) != vw.dim(1))
        throw ShapeError("conv2d: channel mismatch " + vx.shape_string() + " vs " + vw.shape_string());
    int batch = vx.dim(0), c_in = vx.dim(1), h = vx.dim(2), w_in = vx.dim(3);
    int c_out = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
    int h_out = (h + 2 * ph - kh) / sh + 1;
    int w_out = (w_in + 2 * pw - kw) / sw + 1;
    if (h_out < 1 || w_out < 1) throw ShapeError("conv2d: input " + vx.shape_string() + " too small");
    int64_t k = static_cast<int64_t>(c_in) * kh * kw;
    int64_t npos = static_cast<int64_t>(h_out) * w_out;

    Tensor<T> out({batch, c_out, h_out, w_out});
    {
        std::vector<T> col(static_cast<size_t>(k * npos));
        CMapM<T> wm(vw.data(), c_out, k);
        for (int n = 0; n < batch; ++n) {
            detail::im2col(vx.data() + static_cast<int64_t>(n) * c_in * h * w_in, c_in, h, w_in, kh, kw,
                           sh, sw, ph, pw, h_out, w_out, col.data());
            CMapM<T> cm(col.data(), k, npos);
            MapM<T> ym(out.data() + static_cast<int64_t>(n) * c_out * npos, c_out, npos);
            ym.noalias() = wm * cm;
        }
        if (b >= 0) {
            const auto& vb = g.value(b);
            if (vb.size() != c_out) throw ShapeError("conv2d: bias size mismatch");
            for (int n = 0; n < batch; ++n)
                for (int c = 0; c < c_out; ++c) {
                    T* p = out.data() + (static_cast<int64_t>(n) * c_out + c) * npos;
                    T bv = vb[c];
                    for (int64_t i = 0; i < npos; ++i) p[i] += bv;
                }
        }
    }

    auto fn = [=](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        const Tensor<T>& vx2 = gg.value(x);
        const Tensor<T>& vw2 = gg.value(w);
        bool need_x = gg.needs_grad(x);
        bool need_w = gg.needs_grad(w);
        std::vector<T> col(static_cast<size_t>(k * npos));
        std::vector<T> dcol(need_x ? static_cast<size_t>(k * npos) : 0);
        CMapM<T> wm(vw2.data(), c_out, k);
        for (int n = 0; n < batch; ++n) {
            CMapM<T> dym(dy.data() + static_cast<int64_t>(n) * c_out * npos, c_out, npos);
            if (need_w) {
                detail::im2col(vx2.data() + static_cast<int64_t>(n) * c_in * h * w_in, c_in, h, w_in,
                               kh, kw, sh, sw, ph, pw, h_out, w_out, col.data());
                CMapM<T> cm(col.data(), k, npos);
                MapM<T> dwm(gg.grad(w).data(), c_out, k);
                dwm.noalias() += dym * cm.transpose();
            }
            if (need_x) {
                MapM<T> dcm(dcol.data(), k, npos);
                dcm.noalias() = wm.transpose() * dym;
                detail::col2im_add(dcol.data(), c_in, h, w_in, kh, kw, sh, sw, ph, pw, h_out, w_out,
                                   gg.grad(x).data() + static_cast<int64_t>(n) * c_in * h * w_in);
            }
        }
        if (b >= 0 && gg.needs_grad(b)) {
            Tensor<T>& db = gg.grad(b);
            for (int n = 0; n < batch; ++n)
                for (int c = 0; c < c_out; ++c) {
                    const T* p = dy.data() + (static_cast<int64_t>(n) * c_out + c) * npos;
                    T acc = 0;
                    for (int64_t i = 0; i < npos; ++i) acc += p[i];
                    db[c] += acc;
                }
        }
    };
    return b >= 0 ? g.node(std::move(out), {x, w, b}, fn) : g.node(std::move(out), {x, w}, fn);
}

// -------------------------------------------------------------------- losses

// probs (B,L,A) vs one-hot targets (constant): per-sample summed cross
// entropy, -sum_j log p[target_j], with log clamped at eps.
template <typename T>
int cross_entropy_per_sample(Graph<T>& g, int probs, Tensor<T> onehot, T eps = T(1e-12)) {
    const auto& vp = g.value(probs);
    if (vp.rank() != 3 || !vp.same_shape(onehot))
        throw ShapeError("cross_entropy_per_sample: " + vp.shape_string() + " vs " + onehot.shape_string());
    int batch = vp.dim(0);
    int64_t per = vp.size() / batch;
    Tensor<T> out({batch});
    for (int n = 0; n < batch; ++n) {
        const T* pp = vp.data() + n * per;
        const T* tp = onehot.data() + n * per;
        T acc = 0;
        for (int64_t i = 0; i < per; ++i)
            if (tp[i] != T(0)) acc -= tp[i] * std::log(std::max(pp[i], eps));
        out[n] = acc;
    }
    auto target = std::make_shared<Tensor<T>>(std::move(onehot));
    return g.node(std::move(out), {probs}, [probs, target, batch, per, eps](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(probs)) return;
        const Tensor<T>& vp = gg.value(probs);
        Tensor<T>& dp = gg.grad(probs);
        for (int n = 0; n < batch; ++n) {
            T d = dy[n];
            const T* pp = vp.data() + n * per;
            const T* tp = target->data() + n * per;
            T* gp = dp.data() + n * per;
            for (int64_t i = 0; i < per; ++i)
                if (tp[i] != T(0) && pp[i] > eps) gp[i] -= d * tp[i] / pp[i];
        }
    });
}

// Forward differences along width; last column is zero.
template <typename T>
int forward_diff_w(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    if (vx.rank() != 4) throw ShapeError("forward_diff_w expects (B,C,H,W)");
    int w = vx.dim(3);
    int64_t rows = vx.size() / w;
    Tensor<T> out(vx.shape());
    for (int64_t r = 0; r < rows; ++r) {
        const T* src = vx.data() + r * w;
        T* dst = out.data() + r * w;
        for (int j = 0; j + 1 < w; ++j) dst[j] = src[j + 1] - src[j];
        dst[w - 1] = T(0);
    }
    return g.node(std::move(out), {x}, [x, rows, w](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int64_t r = 0; r < rows; ++r) {
            const T* dp = dy.data() + r * w;
            T* xp = dx.data() + r * w;
            for (int j = 0; j + 1 < w; ++j) {
                xp[j + 1] += dp[j];
                xp[j] -= dp[j];
            }
        }
    });
}

// Forward differences along height; last row is zero.
template <typename T>
int forward_diff_h(Graph<T>& g, int x) {
    const auto& vx = g.value(x);
    if (vx.rank() != 4) throw ShapeError("forward_diff_h expects (B,C,H,W)");
    int batch = vx.dim(0), c = vx.dim(1), h = vx.dim(2), w = vx.dim(3);
    Tensor<T> out(vx.shape());
    for (int n = 0; n < batch; ++n)
        for (int ch = 0; ch < c; ++ch) {
            for (int i = 0; i + 1 < h; ++i)
                for (int j = 0; j < w; ++j)
                    out.at(n, ch, i, j) = vx.at(n, ch, i + 1, j) - vx.at(n, ch, i, j);
            for (int j = 0; j < w; ++j) out.at(n, ch, h - 1, j) = T(0);
        }
    return g.node(std::move(out), {x}, [x, batch, c, h, w](Graph<T>& gg, int id) {
        const Tensor<T>& dy = gg.grad(id);
        if (!gg.needs_grad(x)) return;
        Tensor<T>& dx = gg.grad(x);
        for (int n = 0; n < batch; ++n)
            for (int ch = 0; ch < c; ++ch)
                for (int i = 0; i + 1 < h; ++i)
                    for (int j = 0; j < w; ++j) {
                        T d = dy.at(n, ch, i, j);
                        dx.at(n, ch, i + 1, j) += d;
                        dx.at(n, ch, i, j) -= d;
                    }
    });
}

}  // namespace ops
}  // namespace hiren::nn
