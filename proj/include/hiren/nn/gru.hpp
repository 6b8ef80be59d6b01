#pragma once

#include <memory>

#include "hiren/nn/ops.hpp"

namespace hiren::nn::ops {

// Node ids of the weights for one bidirectional GRU layer. Each direction
// follows the usual gate packing: W_ih (3H,F), W_hh (3H,H), b_ih (3H),
// b_hh (3H), rows ordered [reset; update; candidate].
struct BiGruIds {
    int w_ih_f, w_hh_f, b_ih_f, b_hh_f;
    int w_ih_b, w_hh_b, b_ih_b, b_hh_b;
};

namespace detail {

template <typename T>
inline T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

// One direction over x (R,T,F) -> out column block [h0, h0+H) of (R,T,2H).
// Stash layout per (row, step): [r z n m], m = W_hn h_prev + b_hn.
template <typename T>
void gru_dir_forward(const Tensor<T>& x, const Tensor<T>& w_ih, const Tensor<T>& w_hh,
                     const Tensor<T>& b_ih, const Tensor<T>& b_hh, bool reverse, Tensor<T>& out,
                     int h0, Tensor<T>* stash) {
    int rows = x.dim(0), steps = x.dim(1), f = x.dim(2);
    int hh = w_hh.dim(1);
    int oc = out.dim(2);

    // All input-side gate activations in one GEMM.
    Tensor<T> gx({rows * steps, 3 * hh});
    CMapM<T> xm(x.data(), static_cast<int64_t>(rows) * steps, f);
    CMapM<T> wim(w_ih.data(), 3 * hh, f);
    MapM<T> gxm(gx.data(), static_cast<int64_t>(rows) * steps, 3 * hh);
    gxm.noalias() = xm * wim.transpose();
    for (int64_t r = 0; r < static_cast<int64_t>(rows) * steps; ++r)
        for (int j = 0; j < 3 * hh; ++j) gx[r * 3 * hh + j] += b_ih[j];

    std::vector<T> h(static_cast<size_t>(rows) * hh, T(0));
    Tensor<T> gh({rows, 3 * hh});
    CMapM<T> whm(w_hh.data(), 3 * hh, hh);
    for (int s = 0; s < steps; ++s) {
        int t = reverse ? steps - 1 - s : s;
        MapM<T> ghm(gh.data(), rows, 3 * hh);
        CMapM<T> hm(h.data(), rows, hh);
        ghm.noalias() = hm * whm.transpose();
        for (int i = 0; i < rows; ++i) {
            const T* gxp = gx.data() + (static_cast<int64_t>(i) * steps + t) * 3 * hh;
            const T* ghp = gh.data() + static_cast<int64_t>(i) * 3 * hh;
            T* hp = h.data() + static_cast<size_t>(i) * hh;
            T* op = out.data() + (static_cast<int64_t>(i) * steps + t) * oc + h0;
            T* sp = stash ? stash->data() + (static_cast<int64_t>(i) * steps + t) * 4 * hh : nullptr;
            for (int j = 0; j < hh; ++j) {
                T r = sigmoid(gxp[j] + ghp[j] + b_hh[j]);
                T z = sigmoid(gxp[hh + j] + ghp[hh + j] + b_hh[hh + j]);
                T m = ghp[2 * hh + j] + b_hh[2 * hh + j];
                T n = std::tanh(gxp[2 * hh + j] + r * m);
                T hv = (T(1) - z) * n + z * hp[j];
                hp[j] = hv;
                op[j] = hv;
                if (sp) {
                    sp[j] = r;
                    sp[hh + j] = z;
                    sp[2 * hh + j] = n;
                    sp[3 * hh + j] = m;
                }
            }
        }
    }
}

template <typename T>
struct GruDirGrads {
    Tensor<T>*dw_ih, *dw_hh, *db_ih, *db_hh;  // any may be null
};

template <typename T>
void gru_dir_backward(const Tensor<T>& x, const Tensor<T>& out, const Tensor<T>& dout,
                      const Tensor<T>& w_ih, const Tensor<T>& w_hh, const Tensor<T>& stash,
                      bool reverse, int h0, Tensor<T>* dx, const GruDirGrads<T>& gw) {
    int rows = x.dim(0), steps = x.dim(1), f = x.dim(2);
    int hh = w_hh.dim(1);
    int oc = out.dim(2);

    Tensor<T> dgx({rows * steps, 3 * hh});
    Tensor<T> dgh({rows, 3 * hh});
    std::vector<T> dh(static_cast<size_t>(rows) * hh, T(0));
    std::vector<T> hprev(static_cast<size_t>(rows) * hh);
    CMapM<T> whm(w_hh.data(), 3 * hh, hh);

    for (int s = steps - 1; s >= 0; --s) {
        int t = reverse ? steps - 1 - s : s;
        int tp = reverse ? t + 1 : t - 1;  // previous step in processing order
        bool has_prev = s > 0;
        for (int i = 0; i < rows; ++i) {
            T* hp = hprev.data() + static_cast<size_t>(i) * hh;
            if (has_prev) {
                const T* op = out.data() + (static_cast<int64_t>(i) * steps + tp) * oc + h0;
                for (int j = 0; j < hh; ++j) hp[j] = op[j];
            } else {
                for (int j = 0; j < hh; ++j) hp[j] = T(0);
            }
        }
        for (int i = 0; i < rows; ++i) {
            const T* sp = stash.data() + (static_cast<int64_t>(i) * steps + t) * 4 * hh;
            const T* dop = dout.data() + (static_cast<int64_t>(i) * steps + t) * oc + h0;
            const T* hp = hprev.data() + static_cast<size_t>(i) * hh;
            T* dhp = dh.data() + static_cast<size_t>(i) * hh;
            T* dgxp = dgx.data() + (static_cast<int64_t>(i) * steps + t) * 3 * hh;
            T* dghp = dgh.data() + static_cast<int64_t>(i) * 3 * hh;
            for (int j = 0; j < hh; ++j) {
                T r = sp[j], z = sp[hh + j], n = sp[2 * hh + j], m = sp[3 * hh + j];
                T d = dhp[j] + dop[j];
                T dz = d * (hp[j] - n) * z * (T(1) - z);
                T dn = d * (T(1) - z) * (T(1) - n * n);
                T dr = dn * m * r * (T(1) - r);
                T dm = dn * r;
                dgxp[j] = dr;
                dgxp[hh + j] = dz;
                dgxp[2 * hh + j] = dn;
                dghp[j] = dr;
                dghp[hh + j] = dz;
                dghp[2 * hh + j] = dm;
                dhp[j] = d * z;  // carry; the W_hh path is added below
            }
        }
        CMapM<T> dghm(dgh.data(), rows, 3 * hh);
        if (has_prev) {
            if (gw.dw_hh) {
                CMapM<T> hpm(hprev.data(), rows, hh);
                MapM<T> dwm(gw.dw_hh->data(), 3 * hh, hh);
                dwm.noalias() += dghm.transpose() * hpm;
            }
            MapM<T> dhm(dh.data(), rows, hh);
            dhm.noalias() += dghm * whm;
        }
        if (gw.db_hh) {
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < 3 * hh; ++j) (*gw.db_hh)[j] += dgh[static_cast<int64_t>(i) * 3 * hh + j];
        }
    }

    CMapM<T> dgxm(dgx.data(), static_cast<int64_t>(rows) * steps, 3 * hh);
    if (dx) {
        CMapM<T> wim(w_ih.data(), 3 * hh, f);
        MapM<T> dxm(dx->data(), static_cast<int64_t>(rows) * steps, f);
        dxm.noalias() += dgxm * wim;
    }
    if (gw.dw_ih) {
        CMapM<T> xm(x.data(), static_cast<int64_t>(rows) * steps, f);
        MapM<T> dwm(gw.dw_ih->data(), 3 * hh, f);
        dwm.noalias() += dgxm.transpose() * xm;
    }
    if (gw.db_ih) {
        for (int64_t r = 0; r < static_cast<int64_t>(rows) * steps; ++r)
            for (int j = 0; j < 3 * hh; ++j) (*gw.db_ih)[j] += dgx[r * 3 * hh + j];
    }
}

}  // namespace detail

// Bidirectional GRU over x (R,T,F) -> (R,T,2H); initial states are zero.
// Forward-direction features occupy [0,H), reverse [H,2H).
template <typename T>
int bigru(Graph<T>& g, int x, const BiGruIds& w) {
    const auto& vx = g.value(x);
    if (vx.rank() != 3) throw ShapeError("bigru expects (R,T,F), got " + vx.shape_string());
    const auto& wf = g.value(w.w_ih_f);
    const auto& wb = g.value(w.w_ih_b);
    if (wf.rank() != 2 || wf.dim(0) % 3 != 0 || wf.dim(1) != vx.dim(2) || !wf.same_shape(wb))
        throw ShapeError("bigru: bad gate weights " + wf.shape_string() + " for input " + vx.shape_string());
    int rows = vx.dim(0), steps = vx.dim(1);
    int hh = wf.dim(0) / 3;

    Tensor<T> out({rows, steps, 2 * hh});
    bool keep = g.grad_enabled();
    auto stash_f = keep ? std::make_shared<Tensor<T>>(std::vector<int>{rows, steps, 4 * hh}) : nullptr;
    auto stash_b = keep ? std::make_shared<Tensor<T>>(std::vector<int>{rows, steps, 4 * hh}) : nullptr;
    detail::gru_dir_forward(vx, g.value(w.w_ih_f), g.value(w.w_hh_f), g.value(w.b_ih_f),
                            g.value(w.b_hh_f), false, out, 0, stash_f.get());
    detail::gru_dir_forward(vx, g.value(w.w_ih_b), g.value(w.w_hh_b), g.value(w.b_ih_b),
                            g.value(w.b_hh_b), true, out, hh, stash_b.get());

    return g.node(std::move(out),
                  {x, w.w_ih_f, w.w_hh_f, w.b_ih_f, w.b_hh_f, w.w_ih_b, w.w_hh_b, w.b_ih_b, w.b_hh_b},
                  [x, w, stash_f, stash_b, hh](Graph<T>& gg, int id) {
                      const Tensor<T>& dy = gg.grad(id);
                      const Tensor<T>& y = gg.value(id);
                      const Tensor<T>& vx = gg.value(x);
                      Tensor<T>* dx = gg.needs_grad(x) ? &gg.grad(x) : nullptr;
                      detail::GruDirGrads<T> gf{
                          gg.needs_grad(w.w_ih_f) ? &gg.grad(w.w_ih_f) : nullptr,
                          gg.needs_grad(w.w_hh_f) ? &gg.grad(w.w_hh_f) : nullptr,
                          gg.needs_grad(w.b_ih_f) ? &gg.grad(w.b_ih_f) : nullptr,
                          gg.needs_grad(w.b_hh_f) ? &gg.grad(w.b_hh_f) : nullptr};
                      detail::gru_dir_backward(vx, y, dy, gg.value(w.w_ih_f), gg.value(w.w_hh_f),
                                               *stash_f, false, 0, dx, gf);
                      detail::GruDirGrads<T> gb{
                          gg.needs_grad(w.w_ih_b) ? &gg.grad(w.w_ih_b) : nullptr,
                          gg.needs_grad(w.w_hh_b) ? &gg.grad(w.w_hh_b) : nullptr,
                          gg.needs_grad(w.b_ih_b) ? &gg.grad(w.b_ih_b) : nullptr,
                          gg.needs_grad(w.b_hh_b) ? &gg.grad(w.b_hh_b) : nullptr};
                      detail::gru_dir_backward(vx, y, dy, gg.value(w.w_ih_b), gg.value(w.w_hh_b),
                                               *stash_b, true, hh, dx, gb);
                  });
}

}  // namespace hiren::nn::ops
