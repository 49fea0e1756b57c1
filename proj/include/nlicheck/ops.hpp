#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nlicheck/errors.hpp"
#include "nlicheck/rng.hpp"
#include "nlicheck/tensor.hpp"

namespace nli {

enum class Activation { none, relu };

// ---------------------------------------------------------------------------
// matmul and friends. Single-threaded, fixed accumulation order (i-k-j) so
// results are reproducible bit-for-bit run to run.
// ---------------------------------------------------------------------------

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0]) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " and " +
                         b.shape_str());
    }
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        T* ci = &c.data[i * n];
        const T* ai = &a.data[i * k];
        for (std::size_t t = 0; t < k; ++t) {
            const T av = ai[t];
            const T* bt = &b.data[t * n];
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bt[j];
        }
    }
    return c;
}

// acc[m×k] += d[m×n] · b[k×n]^T
template <class T>
void matmul_nt_acc(const Tensor<T>& d, const Tensor<T>& b, Tensor<T>& acc) {
    const std::size_t m = d.shape[0], n = d.shape[1], k = b.shape[0];
    for (std::size_t i = 0; i < m; ++i) {
        const T* di = &d.data[i * n];
        T* ai = &acc.data[i * k];
        for (std::size_t t = 0; t < k; ++t) {
            const T* bt = &b.data[t * n];
            T s = 0;
            for (std::size_t j = 0; j < n; ++j) s += di[j] * bt[j];
            ai[t] += s;
        }
    }
}

// acc[k×n] += a[m×k]^T · d[m×n]
template <class T>
void matmul_tn_acc(const Tensor<T>& a, const Tensor<T>& d, Tensor<T>& acc) {
    const std::size_t m = a.shape[0], k = a.shape[1], n = d.shape[1];
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = &a.data[i * k];
        const T* di = &d.data[i * n];
        for (std::size_t t = 0; t < k; ++t) {
            const T av = ai[t];
            T* at = &acc.data[t * n];
            for (std::size_t j = 0; j < n; ++j) at[j] += av * di[j];
        }
    }
}

// ---------------------------------------------------------------------------
// softmax / cross entropy
// ---------------------------------------------------------------------------

// Row softmax over the last dimension, with max-subtraction.
template <class T>
Tensor<T> softmax(const Tensor<T>& logits) {
    if (logits.rank() < 1 || logits.shape.back() < 1)
        throw ShapeError("softmax: last dimension must be >= 1");
    if (!logits.all_finite())
        throw NumericError("softmax: non-finite input");
    const std::size_t c = logits.shape.back();
    const std::size_t rows = logits.count() / c;
    Tensor<T> out(logits.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* in = &logits.data[r * c];
        T* o = &out.data[r * c];
        T mx = in[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, in[j]);
        T sum = 0;
        for (std::size_t j = 0; j < c; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < c; ++j) o[j] /= sum;
    }
    return out;
}

// Mean negative log-likelihood over the batch plus the gradient with respect
// to the logits that produced `probs` via softmax: (p - onehot) / b.
template <class T>
T cross_entropy(const Tensor<T>& probs, const std::vector<int>& labels,
                Tensor<T>* dlogits = nullptr) {
    if (probs.rank() != 2)
        throw ShapeError("cross_entropy: expected 2-d probs, got " + probs.shape_str());
    const std::size_t b = probs.shape[0], c = probs.shape[1];
    if (labels.size() != b)
        throw ShapeError("cross_entropy: batch size mismatch");
    if (dlogits) *dlogits = Tensor<T>({b, c});
    T loss = 0;
    for (std::size_t i = 0; i < b; ++i) {
        const int y = labels[i];
        if (y < 0 || static_cast<std::size_t>(y) >= c)
            throw DataError("cross_entropy: label " + std::to_string(y) +
                            " out of range for " + std::to_string(c) + " classes");
        const T p = std::max(probs.at(i, static_cast<std::size_t>(y)),
                             static_cast<T>(1e-30));
        loss -= std::log(p);
        if (dlogits) {
            for (std::size_t j = 0; j < c; ++j)
                dlogits->at(i, j) = probs.at(i, j) / static_cast<T>(b);
            dlogits->at(i, static_cast<std::size_t>(y)) -= T(1) / static_cast<T>(b);
        }
    }
    return loss / static_cast<T>(b);
}

// ---------------------------------------------------------------------------
// dense
// ---------------------------------------------------------------------------

template <class T>
struct DenseCache {
    Tensor<T> x;        // input [b×d_in]
    Tensor<T> preact;   // xW+b, kept only for relu
};

template <class T>
struct Dense {
    Parameter<T> weight;
    Parameter<T> bias;
    Activation act = Activation::none;

    Dense() = default;
    Dense(std::size_t d_in, std::size_t d_out, Activation a)
        : weight({d_in, d_out}), bias({d_out}), act(a) {}

    void init(SeededRng& rng) {
        const double s = std::sqrt(6.0 / double(weight.value.shape[0] + weight.value.shape[1]));
        weight.value.fill_uniform(rng, static_cast<T>(-s), static_cast<T>(s));
        bias.value.fill(T(0));
    }

    Tensor<T> forward(const Tensor<T>& x, DenseCache<T>* cache = nullptr) const {
        if (x.rank() != 2 || x.shape[1] != weight.value.shape[0])
            throw ShapeError("dense: input " + x.shape_str() + " vs weight " +
                             weight.value.shape_str());
        Tensor<T> y = matmul(x, weight.value);
        const std::size_t b = y.shape[0], d = y.shape[1];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) y.at(i, j) += bias.value.at(j);
        if (cache) {
            cache->x = x;
            if (act == Activation::relu) cache->preact = y;
        }
        if (act == Activation::relu)
            for (T& v : y.data) v = v > T(0) ? v : T(0);
        return y;
    }

    // Accumulates into weight.grad / bias.grad, returns dx.
    Tensor<T> backward(const Tensor<T>& dy, const DenseCache<T>& cache) {
        Tensor<T> dz = dy;
        if (act == Activation::relu) {
            for (std::size_t i = 0; i < dz.data.size(); ++i)
                if (cache.preact.data[i] <= T(0)) dz.data[i] = T(0);
        }
        matmul_tn_acc(cache.x, dz, weight.grad);
        const std::size_t b = dz.shape[0], d = dz.shape[1];
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) bias.grad.at(j) += dz.at(i, j);
        Tensor<T> dx({cache.x.shape[0], cache.x.shape[1]});
        matmul_nt_acc(dz, weight.value, dx);
        return dx;
    }
};

// [b,T,d] <-> [b*T,d] views for time-distributed application.
template <class T>
Tensor<T> flatten_time(const Tensor<T>& x) {
    if (x.rank() != 3) throw ShapeError("flatten_time: expected rank 3, got " + x.shape_str());
    Tensor<T> out;
    out.shape = {x.shape[0] * x.shape[1], x.shape[2]};
    out.data = x.data;
    return out;
}

template <class T>
Tensor<T> unflatten_time(const Tensor<T>& x, std::size_t b, std::size_t t) {
    Tensor<T> out;
    out.shape = {b, t, x.shape[1]};
    out.data = x.data;
    return out;
}

// dense applied independently at every time step.
template <class T>
Tensor<T> time_distributed_forward(const Dense<T>& layer, const Tensor<T>& x,
                                   DenseCache<T>* cache = nullptr) {
    Tensor<T> y = layer.forward(flatten_time(x), cache);
    return unflatten_time(y, x.shape[0], x.shape[1]);
}

template <class T>
Tensor<T> time_distributed_backward(Dense<T>& layer, const Tensor<T>& dy,
                                    const DenseCache<T>& cache) {
    Tensor<T> dx = layer.backward(flatten_time(dy), cache);
    return unflatten_time(dx, dy.shape[0], dy.shape[1]);
}

// ---------------------------------------------------------------------------
// dropout (inverted: survivors scaled at train time, eval is identity)
// ---------------------------------------------------------------------------

template <class T>
struct DropoutCache {
    std::vector<T> scale;  // per-element multiplier, empty when inactive
};

template <class T>
Tensor<T> dropout_forward(const Tensor<T>& x, double rate, bool training,
                          SeededRng& rng, DropoutCache<T>* cache = nullptr) {
    if (rate < 0.0 || rate >= 1.0)
        throw ConfigError("dropout: rate must be in [0,1), got " + std::to_string(rate));
    if (!training || rate == 0.0) {
        if (cache) cache->scale.clear();
        return x;
    }
    const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
    Tensor<T> y(x.shape);
    if (cache) cache->scale.assign(x.data.size(), T(0));
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const bool keep = rng.next_double() >= rate;
        const T s = keep ? keep_scale : T(0);
        y.data[i] = x.data[i] * s;
        if (cache) cache->scale[i] = s;
    }
    return y;
}

template <class T>
Tensor<T> dropout_backward(const Tensor<T>& dy, const DropoutCache<T>& cache) {
    if (cache.scale.empty()) return dy;
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.data.size(); ++i)
        dx.data[i] = dy.data[i] * cache.scale[i];
    return dx;
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

template <class T>
struct BatchNormCache {
    Tensor<T> xhat;     // [b×d]
    Tensor<T> invstd;   // [d]
    bool training = false;
};

template <class T>
struct BatchNorm {
    Parameter<T> gamma;
    Parameter<T> beta;
    Parameter<T> moving_mean;  // non-trainable state
    Parameter<T> moving_var;
    double eps = 1e-5;
    double momentum = 0.99;

    BatchNorm() = default;
    explicit BatchNorm(std::size_t d)
        : gamma({d}), beta({d}), moving_mean({d}, false), moving_var({d}, false) {
        gamma.value.fill(T(1));
        moving_var.value.fill(T(1));
    }

    std::size_t width() const { return gamma.value.shape[0]; }

    Tensor<T> forward(const Tensor<T>& x, bool training,
                      BatchNormCache<T>* cache = nullptr) {
        if (x.rank() != 2 || x.shape[1] != width())
            throw ShapeError("batch_norm: input " + x.shape_str() + " vs width " +
                             std::to_string(width()));
        const std::size_t b = x.shape[0], d = x.shape[1];
        if (training && b < 2)
            throw DataError("batch_norm: training requires batch size >= 2, got " +
                            std::to_string(b));
        Tensor<T> mean({d}), var({d});
        if (training) {
            for (std::size_t j = 0; j < d; ++j) {
                T m = 0;
                for (std::size_t i = 0; i < b; ++i) m += x.at(i, j);
                m /= static_cast<T>(b);
                T v = 0;
                for (std::size_t i = 0; i < b; ++i) {
                    const T c = x.at(i, j) - m;
                    v += c * c;
                }
                v /= static_cast<T>(b);
                mean.at(j) = m;
                var.at(j) = v;
                moving_mean.value.at(j) = static_cast<T>(momentum) * moving_mean.value.at(j) +
                                          static_cast<T>(1.0 - momentum) * m;
                moving_var.value.at(j) = static_cast<T>(momentum) * moving_var.value.at(j) +
                                         static_cast<T>(1.0 - momentum) * v;
            }
        } else {
            mean = moving_mean.value;
            var = moving_var.value;
        }
        Tensor<T> out({b, d});
        Tensor<T> xhat({b, d}), invstd({d});
        for (std::size_t j = 0; j < d; ++j)
            invstd.at(j) = T(1) / std::sqrt(var.at(j) + static_cast<T>(eps));
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                const T xh = (x.at(i, j) - mean.at(j)) * invstd.at(j);
                xhat.at(i, j) = xh;
                out.at(i, j) = gamma.value.at(j) * xh + beta.value.at(j);
            }
        }
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->invstd = std::move(invstd);
            cache->training = training;
        }
        return out;
    }

    Tensor<T> backward(const Tensor<T>& dy, const BatchNormCache<T>& cache) {
        const std::size_t b = dy.shape[0], d = dy.shape[1];
        Tensor<T> dx({b, d});
        for (std::size_t j = 0; j < d; ++j) {
            T sum_dy = 0, sum_dy_xhat = 0;
            for (std::size_t i = 0; i < b; ++i) {
                sum_dy += dy.at(i, j);
                sum_dy_xhat += dy.at(i, j) * cache.xhat.at(i, j);
            }
            beta.grad.at(j) += sum_dy;
            gamma.grad.at(j) += sum_dy_xhat;
            const T g = gamma.value.at(j);
            const T is = cache.invstd.at(j);
            if (cache.training) {
                const T nb = static_cast<T>(b);
                for (std::size_t i = 0; i < b; ++i) {
                    dx.at(i, j) = g * is / nb *
                                  (nb * dy.at(i, j) - sum_dy -
                                   cache.xhat.at(i, j) * sum_dy_xhat);
                }
            } else {
                for (std::size_t i = 0; i < b; ++i)
                    dx.at(i, j) = g * is * dy.at(i, j);
            }
        }
        return dx;
    }
};

// ---------------------------------------------------------------------------
// LSTM. Gate layout in the packed weight matrices is [i | f | g | o].
// ---------------------------------------------------------------------------

template <class T>
struct LstmStepCache {
    Tensor<T> gates;   // [b×4u] post-activation (i, f, g, o)
    Tensor<T> tanh_c;  // [b×u]
    Tensor<T> x;       // [b×d]
    Tensor<T> h_prev;  // [b×u]
    Tensor<T> c_prev;  // [b×u]
};

template <class T>
struct LstmCell {
    Parameter<T> wx;  // [d×4u]
    Parameter<T> wh;  // [u×4u]
    Parameter<T> bias;  // [4u]
    std::size_t units = 0;

    LstmCell() = default;
    LstmCell(std::size_t d_in, std::size_t u)
        : wx({d_in, 4 * u}), wh({u, 4 * u}), bias({4 * u}), units(u) {}

    // uniform(-s, s) with s = 1/sqrt(units); forget-gate bias starts at 1.
    void init(SeededRng& rng) {
        const double s = 1.0 / std::sqrt(static_cast<double>(units));
        wx.value.fill_uniform(rng, static_cast<T>(-s), static_cast<T>(s));
        wh.value.fill_uniform(rng, static_cast<T>(-s), static_cast<T>(s));
        bias.value.fill(T(0));
        for (std::size_t j = 0; j < units; ++j) bias.value.at(units + j) = T(1);
    }

    void step(const Tensor<T>& x, const Tensor<T>& h_prev, const Tensor<T>& c_prev,
              Tensor<T>& h_out, Tensor<T>& c_out, LstmStepCache<T>* cache = nullptr) const {
        const std::size_t b = x.shape[0], u = units;
        if (x.shape[1] != wx.value.shape[0] || h_prev.shape[1] != u ||
            c_prev.shape[1] != u)
            throw ShapeError("lstm_step: shape mismatch, x " + x.shape_str() +
                             " h " + h_prev.shape_str());
        Tensor<T> z = matmul(x, wx.value);
        {
            Tensor<T> zh = matmul(h_prev, wh.value);
            for (std::size_t i = 0; i < z.data.size(); ++i) z.data[i] += zh.data[i];
        }
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < 4 * u; ++j) z.at(i, j) += bias.value.at(j);
        // activate gates in place: sigmoid for i,f,o; tanh for g
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < 4 * u; ++j) {
                T& v = z.at(i, j);
                const bool is_g = j >= 2 * u && j < 3 * u;
                v = is_g ? std::tanh(v) : T(1) / (T(1) + std::exp(-v));
            }
        }
        h_out = Tensor<T>({b, u});
        c_out = Tensor<T>({b, u});
        Tensor<T> tanh_c({b, u});
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t j = 0; j < u; ++j) {
                const T gi = z.at(i, j);
                const T gf = z.at(i, u + j);
                const T gg = z.at(i, 2 * u + j);
                const T go = z.at(i, 3 * u + j);
                const T c = gf * c_prev.at(i, j) + gi * gg;
                const T tc = std::tanh(c);
                c_out.at(i, j) = c;
                tanh_c.at(i, j) = tc;
                h_out.at(i, j) = go * tc;
            }
        }
        if (cache) {
            cache->gates = std::move(z);
            cache->tanh_c = std::move(tanh_c);
            cache->x = x;
            cache->h_prev = h_prev;
            cache->c_prev = c_prev;
        }
    }

    // active: per-row flags; inactive rows contribute nothing and pass dh/dc
    // through unchanged. dh/dc are updated in place to dh_prev/dc_prev,
    // dx rows for inactive examples are zero.
    Tensor<T> step_backward(Tensor<T>& dh, Tensor<T>& dc,
                            const LstmStepCache<T>& cache,
                            const std::vector<std::uint8_t>& active) {
        const std::size_t b = dh.shape[0], u = units;
        Tensor<T> dz({b, 4 * u});
        Tensor<T> dh_prev({b, u}), dc_prev({b, u});
        for (std::size_t i = 0; i < b; ++i) {
            if (!active[i]) {
                for (std::size_t j = 0; j < u; ++j) {
                    dh_prev.at(i, j) = dh.at(i, j);
                    dc_prev.at(i, j) = dc.at(i, j);
                }
                continue;
            }
            for (std::size_t j = 0; j < u; ++j) {
                const T gi = cache.gates.at(i, j);
                const T gf = cache.gates.at(i, u + j);
                const T gg = cache.gates.at(i, 2 * u + j);
                const T go = cache.gates.at(i, 3 * u + j);
                const T tc = cache.tanh_c.at(i, j);
                const T dho = dh.at(i, j);
                const T d_tc = dho * go * (T(1) - tc * tc) + dc.at(i, j);
                const T d_i = d_tc * gg;
                const T d_f = d_tc * cache.c_prev.at(i, j);
                const T d_g = d_tc * gi;
                const T d_o = dho * tc;
                dz.at(i, j) = d_i * gi * (T(1) - gi);
                dz.at(i, u + j) = d_f * gf * (T(1) - gf);
                dz.at(i, 2 * u + j) = d_g * (T(1) - gg * gg);
                dz.at(i, 3 * u + j) = d_o * go * (T(1) - go);
                dc_prev.at(i, j) = d_tc * gf;
            }
        }
        matmul_tn_acc(cache.x, dz, wx.grad);
        matmul_tn_acc(cache.h_prev, dz, wh.grad);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < 4 * u; ++j) bias.grad.at(j) += dz.at(i, j);
        Tensor<T> dx({b, cache.x.shape[1]});
        matmul_nt_acc(dz, wx.value, dx);
        {
            Tensor<T> dhp({b, u});
            matmul_nt_acc(dz, wh.value, dhp);
            for (std::size_t i = 0; i < b; ++i) {
                if (!active[i]) continue;
                for (std::size_t j = 0; j < u; ++j)
                    dh_prev.at(i, j) += dhp.at(i, j);
            }
        }
        dh = std::move(dh_prev);
        dc = std::move(dc_prev);
        return dx;
    }
};

// Convenience single-call form matching the layer-op contract.
template <class T>
void lstm_step(const LstmCell<T>& cell, const Tensor<T>& x, const Tensor<T>& h_prev,
               const Tensor<T>& c_prev, Tensor<T>& h_out, Tensor<T>& c_out) {
    cell.step(x, h_prev, c_prev, h_out, c_out);
}

template <class T>
struct BilstmCache {
    std::vector<LstmStepCache<T>> fwd_steps;  // indexed by t
    std::vector<LstmStepCache<T>> bwd_steps;
    std::vector<std::size_t> lengths;
    std::size_t t_used = 0;
};

template <class T>
struct BilstmOut {
    Tensor<T> steps;  // [b×T×2u], zero at t >= length
    Tensor<T> final;  // [b×2u] = [last forward h ; backward h after step 0]
};

template <class T>
struct Bilstm {
    LstmCell<T> fwd;
    LstmCell<T> bwd;
    std::size_t units = 0;

    Bilstm() = default;
    Bilstm(std::size_t d_in, std::size_t u) : fwd(d_in, u), bwd(d_in, u), units(u) {}

    void init(SeededRng& rng) {
        fwd.init(rng);
        bwd.init(rng);
    }

    BilstmOut<T> forward(const Tensor<T>& x, const std::vector<std::size_t>& lengths,
                         BilstmCache<T>* cache = nullptr) const {
        if (x.rank() != 3) throw ShapeError("bilstm: expected rank-3 input, got " + x.shape_str());
        const std::size_t b = x.shape[0], t_max = x.shape[1], d = x.shape[2];
        if (lengths.size() != b) throw ShapeError("bilstm: lengths size mismatch");
        std::size_t t_used = 0;
        for (std::size_t len : lengths) {
            if (len == 0) throw DataError("bilstm: zero-length sequence");
            if (len > t_max) throw DataError("bilstm: length exceeds time dimension");
            t_used = std::max(t_used, len);
        }
        const std::size_t u = units;
        BilstmOut<T> out;
        out.steps = Tensor<T>({b, t_max, 2 * u});
        out.final = Tensor<T>({b, 2 * u});
        if (cache) {
            cache->fwd_steps.resize(t_used);
            cache->bwd_steps.resize(t_used);
            cache->lengths = lengths;
            cache->t_used = t_used;
        }

        auto slice_t = [&](std::size_t t) {
            Tensor<T> xt({b, d});
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < d; ++j) xt.at(i, j) = x.at(i, t, j);
            return xt;
        };

        // forward direction
        Tensor<T> h({b, u}), c({b, u});
        for (std::size_t t = 0; t < t_used; ++t) {
            Tensor<T> hn, cn;
            fwd.step(slice_t(t), h, c, hn, cn, cache ? &cache->fwd_steps[t] : nullptr);
            for (std::size_t i = 0; i < b; ++i) {
                if (t < lengths[i]) {
                    for (std::size_t j = 0; j < u; ++j) {
                        out.steps.at(i, t, j) = hn.at(i, j);
                        h.at(i, j) = hn.at(i, j);
                        c.at(i, j) = cn.at(i, j);
                    }
                }
            }
        }
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < u; ++j) out.final.at(i, j) = h.at(i, j);

        // backward direction
        h.fill(T(0));
        c.fill(T(0));
        for (std::size_t tt = t_used; tt-- > 0;) {
            Tensor<T> hn, cn;
            bwd.step(slice_t(tt), h, c, hn, cn, cache ? &cache->bwd_steps[tt] : nullptr);
            for (std::size_t i = 0; i < b; ++i) {
                if (tt < lengths[i]) {
                    for (std::size_t j = 0; j < u; ++j) {
                        out.steps.at(i, tt, u + j) = hn.at(i, j);
                        h.at(i, j) = hn.at(i, j);
                        c.at(i, j) = cn.at(i, j);
                    }
                }
            }
        }
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < u; ++j) out.final.at(i, u + j) = h.at(i, j);
        return out;
    }

    // d_steps may be empty (rank 0) when only the final state feeds the loss.
    Tensor<T> backward(const Tensor<T>& d_steps, const Tensor<T>& d_final,
                       const BilstmCache<T>& cache, std::size_t b, std::size_t t_max,
                       std::size_t d_in) {
        const std::size_t u = units;
        const bool have_steps = d_steps.rank() == 3;
        Tensor<T> dx({b, t_max, d_in});
        const auto& lengths = cache.lengths;

        auto active_at = [&](std::size_t t) {
            std::vector<std::uint8_t> a(b);
            for (std::size_t i = 0; i < b; ++i) a[i] = t < lengths[i] ? 1 : 0;
            return a;
        };
        auto add_dx = [&](std::size_t t, const Tensor<T>& dxt,
                          const std::vector<std::uint8_t>& act) {
            for (std::size_t i = 0; i < b; ++i) {
                if (!act[i]) continue;
                for (std::size_t j = 0; j < d_in; ++j) dx.at(i, t, j) += dxt.at(i, j);
            }
        };

        // forward direction: BPTT from t_used-1 down to 0
        {
            Tensor<T> dh({b, u}), dc({b, u});
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < u; ++j) dh.at(i, j) = d_final.at(i, j);
            for (std::size_t t = cache.t_used; t-- > 0;) {
                auto act = active_at(t);
                if (have_steps) {
                    for (std::size_t i = 0; i < b; ++i) {
                        if (!act[i]) continue;
                        for (std::size_t j = 0; j < u; ++j)
                            dh.at(i, j) += d_steps.at(i, t, j);
                    }
                }
                Tensor<T> dxt = fwd.step_backward(dh, dc, cache.fwd_steps[t], act);
                add_dx(t, dxt, act);
            }
        }
        // backward direction: BPTT from t=0 up to t_used-1
        {
            Tensor<T> dh({b, u}), dc({b, u});
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < u; ++j) dh.at(i, j) = d_final.at(i, u + j);
            for (std::size_t t = 0; t < cache.t_used; ++t) {
                auto act = active_at(t);
                if (have_steps) {
                    for (std::size_t i = 0; i < b; ++i) {
                        if (!act[i]) continue;
                        for (std::size_t j = 0; j < u; ++j)
                            dh.at(i, j) += d_steps.at(i, t, u + j);
                    }
                }
                Tensor<T> dxt = bwd.step_backward(dh, dc, cache.bwd_steps[t], act);
                add_dx(t, dxt, act);
            }
        }
        return dx;
    }
};

}  // namespace nli
