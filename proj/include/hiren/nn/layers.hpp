#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hiren/nn/gru.hpp"
#include "hiren/nn/ops.hpp"
#include "hiren/nn/rng.hpp"

namespace hiren::nn {

template <typename T>
using ParamList = std::vector<Parameter<T>*>;

namespace init {

// Kaiming-uniform over fan-in: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename T>
void kaiming_uniform(Tensor<T>& w, int fan_in, Rng& rng) {
    double b = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-b, b));
}

template <typename T>
void uniform_pm(Tensor<T>& w, double b, Rng& rng) {
    for (int64_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(rng.uniform(-b, b));
}

}  // namespace init

template <typename T>
struct Conv2d {
    Parameter<T> w, b;
    int sh = 1, sw = 1, ph = 0, pw = 0;
    bool has_bias = true;

    Conv2d() = default;
    Conv2d(const std::string& name, int c_out, int c_in, int kh, int kw, int stride = 1,
           int pad = -1, bool bias = true)
        : has_bias(bias) {
        if (pad < 0) pad = kh / 2;  // "same" for odd kernels at stride 1
        sh = sw = stride;
        ph = pw = pad;
        w = Parameter<T>{name + ".w", Tensor<T>({c_out, c_in, kh, kw}), {}};
        if (bias) b = Parameter<T>{name + ".b", Tensor<T>({c_out}), {}};
    }

    void init(Rng& rng) {
        init::kaiming_uniform(w.value, w.value.dim(1) * w.value.dim(2) * w.value.dim(3), rng);
        if (has_bias) b.value.fill(T(0));
    }

    void init_zero() {
        w.value.fill(T(0));
        if (has_bias) b.value.fill(T(0));
    }

    int apply(Graph<T>& g, int x) {
        int wi = g.bind(w);
        int bi = has_bias ? g.bind(b) : -1;
        return ops::conv2d(g, x, wi, bi, sh, sw, ph, pw);
    }

    void collect(ParamList<T>& out) {
        out.push_back(&w);
        if (has_bias) out.push_back(&b);
    }
};

template <typename T>
struct Linear {
    Parameter<T> w, b;
    bool has_bias = true;

    Linear() = default;
    Linear(const std::string& name, int out_f, int in_f, bool bias = true) : has_bias(bias) {
        w = Parameter<T>{name + ".w", Tensor<T>({out_f, in_f}), {}};
        if (bias) b = Parameter<T>{name + ".b", Tensor<T>({out_f}), {}};
    }

    void init(Rng& rng) {
        init::kaiming_uniform(w.value, w.value.dim(1), rng);
        if (has_bias) b.value.fill(T(0));
    }

    int apply(Graph<T>& g, int x) {
        return ops::linear_lastdim(g, x, g.bind(w), has_bias ? g.bind(b) : -1);
    }

    void collect(ParamList<T>& out) {
        out.push_back(&w);
        if (has_bias) out.push_back(&b);
    }
};

template <typename T>
struct PRelu {
    Parameter<T> a;

    PRelu() = default;
    explicit PRelu(const std::string& name) {
        a = Parameter<T>{name + ".a", Tensor<T>({1}, T(0.25)), {}};
    }

    int apply(Graph<T>& g, int x) { return ops::prelu(g, x, g.bind(a)); }

    void collect(ParamList<T>& out) { out.push_back(&a); }
};

template <typename T>
struct BiGru {
    Parameter<T> w_ih_f, w_hh_f, b_ih_f, b_hh_f;
    Parameter<T> w_ih_b, w_hh_b, b_ih_b, b_hh_b;
    int hidden = 0;

    BiGru() = default;
    BiGru(const std::string& name, int in_f, int h) : hidden(h) {
        w_ih_f = Parameter<T>{name + ".f.w_ih", Tensor<T>({3 * h, in_f}), {}};
        w_hh_f = Parameter<T>{name + ".f.w_hh", Tensor<T>({3 * h, h}), {}};
        b_ih_f = Parameter<T>{name + ".f.b_ih", Tensor<T>({3 * h}), {}};
        b_hh_f = Parameter<T>{name + ".f.b_hh", Tensor<T>({3 * h}), {}};
        w_ih_b = Parameter<T>{name + ".b.w_ih", Tensor<T>({3 * h, in_f}), {}};
        w_hh_b = Parameter<T>{name + ".b.w_hh", Tensor<T>({3 * h, h}), {}};
        b_ih_b = Parameter<T>{name + ".b.b_ih", Tensor<T>({3 * h}), {}};
        b_hh_b = Parameter<T>{name + ".b.b_hh", Tensor<T>({3 * h}), {}};
    }

    void init(Rng& rng) {
        double b = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (Parameter<T>* p :
             {&w_ih_f, &w_hh_f, &b_ih_f, &b_hh_f, &w_ih_b, &w_hh_b, &b_ih_b, &b_hh_b})
            init::uniform_pm(p->value, b, rng);
    }

    int apply(Graph<T>& g, int x) {
        ops::BiGruIds ids{g.bind(w_ih_f), g.bind(w_hh_f), g.bind(b_ih_f), g.bind(b_hh_f),
                          g.bind(w_ih_b), g.bind(w_hh_b), g.bind(b_ih_b), g.bind(b_hh_b)};
        return ops::bigru(g, x, ids);
    }

    void collect(ParamList<T>& out) {
        for (Parameter<T>* p :
             {&w_ih_f, &w_hh_f, &b_ih_f, &b_hh_f, &w_ih_b, &w_hh_b, &b_ih_b, &b_hh_b})
            out.push_back(p);
    }
};

// A free-standing tensor parameter (queries, positional embeddings, ...).
template <typename T>
struct Embedding {
    Parameter<T> w;

    Embedding() = default;
    Embedding(const std::string& name, std::vector<int> shape) {
        w = Parameter<T>{name, Tensor<T>(std::move(shape)), {}};
    }

    void init(Rng& rng, double b) { init::uniform_pm(w.value, b, rng); }

    int apply(Graph<T>& g) { return g.bind(w); }

    void collect(ParamList<T>& out) { out.push_back(&w); }
};

}  // namespace hiren::nn
