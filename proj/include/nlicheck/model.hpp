#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nlicheck/encoding.hpp"
#include "nlicheck/errors.hpp"
#include "nlicheck/ops.hpp"
#include "nlicheck/rng.hpp"
#include "nlicheck/tensor.hpp"

namespace nli {

struct ModelConfig {
    int design = 1;  // 1 or 2
    std::size_t embed_dim = 300;
    std::size_t translate_dim = 300;
    std::vector<std::size_t> dense_dims = {900, 600, 300};
    std::size_t num_classes = 3;
    double dropout_rate = 0.5;
    std::size_t bilstm_units = 150;  // per direction, design 2 only
    std::size_t max_len = 42;
    bool embedding_trainable = true;
    std::size_t vocab_size = 0;

    static ModelConfig design_1_defaults(std::size_t vocab) {
        ModelConfig c;
        c.design = 1;
        c.dropout_rate = 0.5;
        c.embedding_trainable = true;
        c.vocab_size = vocab;
        return c;
    }

    static ModelConfig design_2_defaults(std::size_t vocab) {
        ModelConfig c;
        c.design = 2;
        c.dropout_rate = 0.2;
        c.embedding_trainable = false;
        c.vocab_size = vocab;
        return c;
    }

    void validate() const {
        if (design != 1 && design != 2)
            throw ConfigError("design must be 1 or 2");
        if (num_classes != 3) throw ConfigError("num_classes must be 3");
        if (dropout_rate < 0.0 || dropout_rate >= 1.0)
            throw ConfigError("dropout_rate must be in [0,1)");
        if (dense_dims.empty() || dense_dims.front() != 900 || dense_dims.back() != 300)
            throw ConfigError("dense_dims must run from 900 down to 300");
        for (std::size_t i = 1; i < dense_dims.size(); ++i)
            if (dense_dims[i] >= dense_dims[i - 1])
                throw ConfigError("dense_dims must be strictly decreasing");
        if (design == 2 && 2 * bilstm_units != embed_dim)
            throw ConfigError("design 2 needs 2*bilstm_units == embed_dim so the "
                              "sentence vector feeds the 900D merge");
        if (max_len == 0) throw ConfigError("max_len must be positive");
        if (vocab_size < 2) throw ConfigError("vocab_size must cover pad and oov ids");
    }
};

// ---------------------------------------------------------------------------
// Attention. Scaled dot-product over learned key projections; queries and
// keys are the same projection, values are the raw token vectors.
// ---------------------------------------------------------------------------

template <class T>
struct IntraAttnCache {
    Tensor<T> tokens;   // [b,T,d]
    Tensor<T> keys;     // [b,T,d]
    Tensor<T> weights;  // [b,T,T] row-softmaxed
    std::vector<std::size_t> lengths;
};

// Self-alignment: output_i = tokens_i + sum_j a_ij tokens_j (valid positions
// only; masked positions produce zero rows).
template <class T>
Tensor<T> intra_attention(const Tensor<T>& tokens, const Tensor<T>& keys,
                          const std::vector<std::size_t>& lengths,
                          IntraAttnCache<T>* cache = nullptr) {
    check_same_shape(tokens.shape, keys.shape, "intra_attention");
    const std::size_t b = tokens.shape[0], t_max = tokens.shape[1], d = tokens.shape[2];
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    Tensor<T> out({b, t_max, d});
    Tensor<T> weights({b, t_max, t_max});
    for (std::size_t n = 0; n < b; ++n) {
        const std::size_t len = lengths[n];
        if (len == 0) throw DataError("intra_attention: fully masked sentence");
        for (std::size_t i = 0; i < len; ++i) {
            // scores + row softmax over valid j
            T mx = -std::numeric_limits<T>::infinity();
            std::vector<T> s(len);
            for (std::size_t j = 0; j < len; ++j) {
                T dot = 0;
                for (std::size_t k = 0; k < d; ++k)
                    dot += keys.at(n, i, k) * keys.at(n, j, k);
                s[j] = dot * scale;
                mx = std::max(mx, s[j]);
            }
            T sum = 0;
            for (std::size_t j = 0; j < len; ++j) {
                s[j] = std::exp(s[j] - mx);
                sum += s[j];
            }
            for (std::size_t j = 0; j < len; ++j) {
                const T a = s[j] / sum;
                weights.at(n, i, j) = a;
                for (std::size_t k = 0; k < d; ++k)
                    out.at(n, i, k) += a * tokens.at(n, j, k);
            }
            for (std::size_t k = 0; k < d; ++k)
                out.at(n, i, k) += tokens.at(n, i, k);
        }
    }
    if (cache) {
        cache->tokens = tokens;
        cache->keys = keys;
        cache->weights = std::move(weights);
        cache->lengths = lengths;
    }
    return out;
}

template <class T>
void intra_attention_backward(const Tensor<T>& d_out, const IntraAttnCache<T>& cache,
                              Tensor<T>& d_tokens, Tensor<T>& d_keys) {
    const std::size_t b = cache.tokens.shape[0];
    const std::size_t t_max = cache.tokens.shape[1];
    const std::size_t d = cache.tokens.shape[2];
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    d_tokens = Tensor<T>({b, t_max, d});
    d_keys = Tensor<T>({b, t_max, d});
    for (std::size_t n = 0; n < b; ++n) {
        const std::size_t len = cache.lengths[n];
        for (std::size_t i = 0; i < len; ++i) {
            // residual path
            for (std::size_t k = 0; k < d; ++k)
                d_tokens.at(n, i, k) += d_out.at(n, i, k);
            // context path
            std::vector<T> d_a(len), d_s(len);
            for (std::size_t j = 0; j < len; ++j) {
                T dot = 0;
                for (std::size_t k = 0; k < d; ++k)
                    dot += d_out.at(n, i, k) * cache.tokens.at(n, j, k);
                d_a[j] = dot;
                const T a = cache.weights.at(n, i, j);
                for (std::size_t k = 0; k < d; ++k)
                    d_tokens.at(n, j, k) += a * d_out.at(n, i, k);
            }
            T inner = 0;
            for (std::size_t j = 0; j < len; ++j)
                inner += d_a[j] * cache.weights.at(n, i, j);
            for (std::size_t j = 0; j < len; ++j)
                d_s[j] = cache.weights.at(n, i, j) * (d_a[j] - inner);
            for (std::size_t j = 0; j < len; ++j) {
                const T ds = d_s[j] * scale;
                for (std::size_t k = 0; k < d; ++k) {
                    d_keys.at(n, i, k) += ds * cache.keys.at(n, j, k);
                    d_keys.at(n, j, k) += ds * cache.keys.at(n, i, k);
                }
            }
        }
    }
}

template <class T>
struct InterAttnCache {
    Tensor<T> values_p, values_h;  // [b,Tp,d], [b,Th,d]
    Tensor<T> keys_p, keys_h;
    Tensor<T> a_rows;  // softmax over hypothesis positions, [b,Tp,Th]
    Tensor<T> a_cols;  // softmax over premise positions, [b,Tp,Th]
    std::vector<std::size_t> lens_p, lens_h;
};

template <class T>
struct InterAttnOut {
    Tensor<T> premise_ctx;     // [b,Tp,d] — hypothesis content aligned to premise
    Tensor<T> hypothesis_ctx;  // [b,Th,d]
};

template <class T>
InterAttnOut<T> inter_attention(const Tensor<T>& values_p, const Tensor<T>& values_h,
                                const Tensor<T>& keys_p, const Tensor<T>& keys_h,
                                const std::vector<std::size_t>& lens_p,
                                const std::vector<std::size_t>& lens_h,
                                InterAttnCache<T>* cache = nullptr) {
    check_same_shape(values_p.shape, keys_p.shape, "inter_attention premise");
    check_same_shape(values_h.shape, keys_h.shape, "inter_attention hypothesis");
    const std::size_t b = values_p.shape[0];
    const std::size_t tp = values_p.shape[1], th = values_h.shape[1];
    const std::size_t d = values_p.shape[2];
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    InterAttnOut<T> out;
    out.premise_ctx = Tensor<T>({b, tp, d});
    out.hypothesis_ctx = Tensor<T>({b, th, d});
    Tensor<T> a_rows({b, tp, th}), a_cols({b, tp, th});
    for (std::size_t n = 0; n < b; ++n) {
        const std::size_t lp = lens_p[n], lh = lens_h[n];
        if (lp == 0 || lh == 0)
            throw DataError("inter_attention: empty valid set");
        Tensor<T> e({lp, lh});
        for (std::size_t i = 0; i < lp; ++i) {
            for (std::size_t j = 0; j < lh; ++j) {
                T dot = 0;
                for (std::size_t k = 0; k < d; ++k)
                    dot += keys_p.at(n, i, k) * keys_h.at(n, j, k);
                e.at(i, j) = dot * scale;
            }
        }
        // rows: premise attends over hypothesis
        for (std::size_t i = 0; i < lp; ++i) {
            T mx = e.at(i, 0);
            for (std::size_t j = 1; j < lh; ++j) mx = std::max(mx, e.at(i, j));
            T sum = 0;
            for (std::size_t j = 0; j < lh; ++j) sum += std::exp(e.at(i, j) - mx);
            for (std::size_t j = 0; j < lh; ++j) {
                const T a = std::exp(e.at(i, j) - mx) / sum;
                a_rows.at(n, i, j) = a;
                for (std::size_t k = 0; k < d; ++k)
                    out.premise_ctx.at(n, i, k) += a * values_h.at(n, j, k);
            }
        }
        // columns: hypothesis attends over premise
        for (std::size_t j = 0; j < lh; ++j) {
            T mx = e.at(0, j);
            for (std::size_t i = 1; i < lp; ++i) mx = std::max(mx, e.at(i, j));
            T sum = 0;
            for (std::size_t i = 0; i < lp; ++i) sum += std::exp(e.at(i, j) - mx);
            for (std::size_t i = 0; i < lp; ++i) {
                const T a = std::exp(e.at(i, j) - mx) / sum;
                a_cols.at(n, i, j) = a;
                for (std::size_t k = 0; k < d; ++k)
                    out.hypothesis_ctx.at(n, j, k) += a * values_p.at(n, i, k);
            }
        }
    }
    if (cache) {
        cache->values_p = values_p;
        cache->values_h = values_h;
        cache->keys_p = keys_p;
        cache->keys_h = keys_h;
        cache->a_rows = std::move(a_rows);
        cache->a_cols = std::move(a_cols);
        cache->lens_p = lens_p;
        cache->lens_h = lens_h;
    }
    return out;
}

template <class T>
void inter_attention_backward(const Tensor<T>& d_pctx, const Tensor<T>& d_hctx,
                              const InterAttnCache<T>& cache, Tensor<T>& d_values_p,
                              Tensor<T>& d_values_h, Tensor<T>& d_keys_p,
                              Tensor<T>& d_keys_h) {
    const std::size_t b = cache.values_p.shape[0];
    const std::size_t tp = cache.values_p.shape[1], th = cache.values_h.shape[1];
    const std::size_t d = cache.values_p.shape[2];
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    d_values_p = Tensor<T>({b, tp, d});
    d_values_h = Tensor<T>({b, th, d});
    d_keys_p = Tensor<T>({b, tp, d});
    d_keys_h = Tensor<T>({b, th, d});
    for (std::size_t n = 0; n < b; ++n) {
        const std::size_t lp = cache.lens_p[n], lh = cache.lens_h[n];
        Tensor<T> d_e({lp, lh});
        // premise-context path (softmax over j per row i)
        for (std::size_t i = 0; i < lp; ++i) {
            std::vector<T> d_a(lh);
            T inner = 0;
            for (std::size_t j = 0; j < lh; ++j) {
                T dot = 0;
                for (std::size_t k = 0; k < d; ++k)
                    dot += d_pctx.at(n, i, k) * cache.values_h.at(n, j, k);
                d_a[j] = dot;
                const T a = cache.a_rows.at(n, i, j);
                inner += dot * a;
                for (std::size_t k = 0; k < d; ++k)
                    d_values_h.at(n, j, k) += a * d_pctx.at(n, i, k);
            }
            for (std::size_t j = 0; j < lh; ++j)
                d_e.at(i, j) += cache.a_rows.at(n, i, j) * (d_a[j] - inner);
        }
        // hypothesis-context path (softmax over i per column j)
        for (std::size_t j = 0; j < lh; ++j) {
            std::vector<T> d_a(lp);
            T inner = 0;
            for (std::size_t i = 0; i < lp; ++i) {
                T dot = 0;
                for (std::size_t k = 0; k < d; ++k)
                    dot += d_hctx.at(n, j, k) * cache.values_p.at(n, i, k);
                d_a[i] = dot;
                const T a = cache.a_cols.at(n, i, j);
                inner += dot * a;
                for (std::size_t k = 0; k < d; ++k)
                    d_values_p.at(n, i, k) += a * d_hctx.at(n, j, k);
            }
            for (std::size_t i = 0; i < lp; ++i)
                d_e.at(i, j) += cache.a_cols.at(n, i, j) * (d_a[i] - inner);
        }
        // keys
        for (std::size_t i = 0; i < lp; ++i) {
            for (std::size_t j = 0; j < lh; ++j) {
                const T de = d_e.at(i, j) * scale;
                for (std::size_t k = 0; k < d; ++k) {
                    d_keys_p.at(n, i, k) += de * cache.keys_h.at(n, j, k);
                    d_keys_h.at(n, j, k) += de * cache.keys_p.at(n, i, k);
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

template <class T>
struct ForwardCache {
    std::size_t batch = 0;
    std::size_t t_p = 0, t_h = 0;  // effective (batch-max) lengths
    std::vector<std::size_t> lens_p, lens_h;
    std::vector<std::int32_t> ids_p, ids_h;  // [b * t_eff]

    Tensor<T> emb_p, emb_h;

    // design 1
    DenseCache<T> td_p, td_h;

    // design 2
    DenseCache<T> t1_p, t1_h, t2_p, t2_h;
    IntraAttnCache<T> intra_p, intra_h;
    InterAttnCache<T> inter;
    BilstmCache<T> bl_p, bl_h;

    // merge + classifier
    Tensor<T> sign_ph;  // [b,300], sign(p - h)
    std::vector<DenseCache<T>> dense_caches;
    std::vector<BatchNormCache<T>> bn_caches;
    std::vector<DropoutCache<T>> drop_caches;
    DenseCache<T> out_cache;
};

struct LayerCount {
    std::string name;
    std::size_t count = 0;
    bool trainable = true;
};

struct ParameterReport {
    std::size_t trainable = 0;
    std::size_t non_trainable = 0;
    std::vector<LayerCount> layers;
    std::size_t total() const { return trainable + non_trainable; }
};

template <class T>
class Model {
  public:
    ModelConfig config;

    Parameter<T> embedding;  // [V×300], row 0 (padding) pinned to zero

    // design 1
    Dense<T> translate;  // shared time-distributed 300->300 relu

    // design 2
    Dense<T> translate1;  // intra-attention keys
    Dense<T> translate2;  // inter-attention keys
    Bilstm<T> bilstm;

    // shared classifier head
    std::vector<Dense<T>> dense_stack;
    std::vector<BatchNorm<T>> bn_stack;  // design 1 only
    Dense<T> out_layer;

    Model() = default;

    // Rebuilt on every call: the model may have been moved since the last
    // one, which would invalidate cached pointers.
    std::vector<std::pair<std::string, Parameter<T>*>>& parameters() {
        collect_parameters();
        return params_;
    }

    ParameterReport parameter_report() {
        ParameterReport r;
        for (auto& [name, p] : parameters()) {
            r.layers.push_back({name, p->count(), p->trainable});
            (p->trainable ? r.trainable : r.non_trainable) += p->count();
        }
        return r;
    }

    // Returns class probabilities [b×num_classes] in class_order.
    Tensor<T> forward(const PairBatch& batch, bool training, SeededRng* rng,
                      ForwardCache<T>* cache) {
        ForwardCache<T> local;
        ForwardCache<T>& c = cache ? *cache : local;
        c.batch = batch.size;
        c.lens_p = batch.premise_lens;
        c.lens_h = batch.hypothesis_lens;
        c.t_p = *std::max_element(c.lens_p.begin(), c.lens_p.end());
        c.t_h = *std::max_element(c.lens_h.begin(), c.lens_h.end());
        c.ids_p = slice_ids(batch.premise_ids, batch.size, batch.max_len, c.t_p);
        c.ids_h = slice_ids(batch.hypothesis_ids, batch.size, batch.max_len, c.t_h);

        c.emb_p = embed(c.ids_p, batch.size, c.t_p);
        c.emb_h = embed(c.ids_h, batch.size, c.t_h);

        Tensor<T> sent_p, sent_h;  // [b,300]
        if (config.design == 1) {
            Tensor<T> tp = time_distributed_forward(translate, c.emb_p, &c.td_p);
            Tensor<T> th = time_distributed_forward(translate, c.emb_h, &c.td_h);
            sent_p = masked_sum(tp, c.lens_p);
            sent_h = masked_sum(th, c.lens_h);
        } else {
            Tensor<T> k1p = time_distributed_forward(translate1, c.emb_p, &c.t1_p);
            Tensor<T> k1h = time_distributed_forward(translate1, c.emb_h, &c.t1_h);
            Tensor<T> aug_p = intra_attention(c.emb_p, k1p, c.lens_p, &c.intra_p);
            Tensor<T> aug_h = intra_attention(c.emb_h, k1h, c.lens_h, &c.intra_h);
            Tensor<T> k2p = time_distributed_forward(translate2, aug_p, &c.t2_p);
            Tensor<T> k2h = time_distributed_forward(translate2, aug_h, &c.t2_h);
            InterAttnOut<T> ctx = inter_attention(aug_p, aug_h, k2p, k2h, c.lens_p,
                                                  c.lens_h, &c.inter);
            Tensor<T> rep_p = concat_last(aug_p, ctx.premise_ctx);
            Tensor<T> rep_h = concat_last(aug_h, ctx.hypothesis_ctx);
            sent_p = take_final(bilstm.forward(rep_p, c.lens_p, &c.bl_p));
            sent_h = take_final(bilstm.forward(rep_h, c.lens_h, &c.bl_h));
        }

        Tensor<T> x = merge(sent_p, sent_h, &c.sign_ph);
        c.dense_caches.resize(dense_stack.size());
        c.drop_caches.resize(dense_stack.size());
        if (config.design == 1) c.bn_caches.resize(dense_stack.size());
        for (std::size_t l = 0; l < dense_stack.size(); ++l) {
            x = dense_stack[l].forward(x, &c.dense_caches[l]);
            if (config.design == 1)
                x = bn_stack[l].forward(x, training, &c.bn_caches[l]);
            if (training && config.dropout_rate > 0.0) {
                if (!rng) throw ConfigError("training forward requires an rng");
                x = dropout_forward(x, config.dropout_rate, true, *rng,
                                    &c.drop_caches[l]);
            } else {
                c.drop_caches[l].scale.clear();
            }
        }
        Tensor<T> logits = out_layer.forward(x, &c.out_cache);
        return softmax(logits);
    }

    // Accumulates parameter gradients; dlogits is the gradient w.r.t. the
    // pre-softmax logits (as produced by cross_entropy).
    void backward(const Tensor<T>& dlogits, ForwardCache<T>& c) {
        Tensor<T> dx = out_layer.backward(dlogits, c.out_cache);
        for (std::size_t l = dense_stack.size(); l-- > 0;) {
            dx = dropout_backward(dx, c.drop_caches[l]);
            if (config.design == 1) dx = bn_stack[l].backward(dx, c.bn_caches[l]);
            dx = dense_stack[l].backward(dx, c.dense_caches[l]);
        }

        Tensor<T> d_sent_p, d_sent_h;
        merge_backward(dx, c.sign_ph, d_sent_p, d_sent_h);

        if (config.design == 1) {
            Tensor<T> d_tp = broadcast_masked(d_sent_p, c.lens_p, c.t_p);
            Tensor<T> d_th = broadcast_masked(d_sent_h, c.lens_h, c.t_h);
            Tensor<T> d_emb_p = time_distributed_backward(translate, d_tp, c.td_p);
            Tensor<T> d_emb_h = time_distributed_backward(translate, d_th, c.td_h);
            scatter_embedding(d_emb_p, c.ids_p);
            scatter_embedding(d_emb_h, c.ids_h);
        } else {
            const std::size_t b = c.batch;
            Tensor<T> d_rep_p =
                bilstm.backward(Tensor<T>{}, expand_final(d_sent_p), c.bl_p, b, c.t_p,
                                2 * config.embed_dim);
            Tensor<T> d_rep_h =
                bilstm.backward(Tensor<T>{}, expand_final(d_sent_h), c.bl_h, b, c.t_h,
                                2 * config.embed_dim);
            Tensor<T> d_aug_p, d_pctx, d_aug_h, d_hctx;
            split_last(d_rep_p, d_aug_p, d_pctx);
            split_last(d_rep_h, d_aug_h, d_hctx);

            Tensor<T> d_vp, d_vh, d_k2p, d_k2h;
            inter_attention_backward(d_pctx, d_hctx, c.inter, d_vp, d_vh, d_k2p, d_k2h);
            add_into(d_aug_p, d_vp);
            add_into(d_aug_h, d_vh);
            add_into(d_aug_p, time_distributed_backward(translate2, d_k2p, c.t2_p));
            add_into(d_aug_h, time_distributed_backward(translate2, d_k2h, c.t2_h));

            Tensor<T> d_emb_p, d_k1p, d_emb_h, d_k1h;
            intra_attention_backward(d_aug_p, c.intra_p, d_emb_p, d_k1p);
            intra_attention_backward(d_aug_h, c.intra_h, d_emb_h, d_k1h);
            add_into(d_emb_p, time_distributed_backward(translate1, d_k1p, c.t1_p));
            add_into(d_emb_h, time_distributed_backward(translate1, d_k1h, c.t1_h));
            scatter_embedding(d_emb_p, c.ids_p);
            scatter_embedding(d_emb_h, c.ids_h);
        }
    }

    void zero_grads() {
        for (auto& [name, p] : parameters()) p->zero_grad();
    }

    // Eval-mode prediction for one pair.
    std::array<T, 3> predict(const EncodedPair& pair) {
        PairBatch b = PairBatch::from_pairs({pair}, config.max_len);
        Tensor<T> probs = forward(b, false, nullptr, nullptr);
        return {probs.at(0, 0), probs.at(0, 1), probs.at(0, 2)};
    }

    template <class U>
    Model<U> cast() {
        Model<U> m;
        m.config = config;
        build_layers(m);
        auto& src = parameters();
        auto& dst = m.parameters();
        for (std::size_t i = 0; i < src.size(); ++i) {
            dst[i].second->value = src[i].second->value.template cast<U>();
            dst[i].second->trainable = src[i].second->trainable;
            dst[i].second->grad = Tensor<U>(dst[i].second->value.shape);
        }
        return m;
    }

    template <class U>
    static void build_layers(Model<U>& m) {
        const ModelConfig& cfg = m.config;
        m.embedding = Parameter<U>({cfg.vocab_size, cfg.embed_dim},
                                   cfg.embedding_trainable);
        if (cfg.design == 1) {
            m.translate = Dense<U>(cfg.embed_dim, cfg.translate_dim, Activation::relu);
        } else {
            m.translate1 = Dense<U>(cfg.embed_dim, cfg.translate_dim, Activation::none);
            m.translate2 = Dense<U>(cfg.embed_dim, cfg.translate_dim, Activation::none);
            m.bilstm = Bilstm<U>(2 * cfg.embed_dim, cfg.bilstm_units);
        }
        std::size_t in = 3 * cfg.embed_dim;
        for (std::size_t dim : cfg.dense_dims) {
            m.dense_stack.emplace_back(in, dim, Activation::relu);
            if (cfg.design == 1) m.bn_stack.emplace_back(BatchNorm<U>(dim));
            in = dim;
        }
        m.out_layer = Dense<U>(in, cfg.num_classes, Activation::none);
    }

  private:
    std::vector<std::pair<std::string, Parameter<T>*>> params_;

    void collect_parameters() {
        params_.clear();
        auto add = [&](const std::string& n, Parameter<T>& p) {
            params_.emplace_back(n, &p);
        };
        add("embedding", embedding);
        if (config.design == 1) {
            add("translate.weight", translate.weight);
            add("translate.bias", translate.bias);
        } else {
            add("translate1.weight", translate1.weight);
            add("translate1.bias", translate1.bias);
            add("translate2.weight", translate2.weight);
            add("translate2.bias", translate2.bias);
            add("bilstm.fwd.wx", bilstm.fwd.wx);
            add("bilstm.fwd.wh", bilstm.fwd.wh);
            add("bilstm.fwd.bias", bilstm.fwd.bias);
            add("bilstm.bwd.wx", bilstm.bwd.wx);
            add("bilstm.bwd.wh", bilstm.bwd.wh);
            add("bilstm.bwd.bias", bilstm.bwd.bias);
        }
        for (std::size_t l = 0; l < dense_stack.size(); ++l) {
            const std::string base = "dense" + std::to_string(l);
            add(base + ".weight", dense_stack[l].weight);
            add(base + ".bias", dense_stack[l].bias);
            if (config.design == 1) {
                const std::string bn = "bn" + std::to_string(l);
                add(bn + ".gamma", bn_stack[l].gamma);
                add(bn + ".beta", bn_stack[l].beta);
                add(bn + ".moving_mean", bn_stack[l].moving_mean);
                add(bn + ".moving_var", bn_stack[l].moving_var);
            }
        }
        add("out.weight", out_layer.weight);
        add("out.bias", out_layer.bias);
    }

    static std::vector<std::int32_t> slice_ids(const std::vector<std::int32_t>& ids,
                                               std::size_t b, std::size_t stride,
                                               std::size_t t_eff) {
        std::vector<std::int32_t> out(b * t_eff);
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t t = 0; t < t_eff; ++t)
                out[i * t_eff + t] = ids[i * stride + t];
        return out;
    }

    Tensor<T> embed(const std::vector<std::int32_t>& ids, std::size_t b,
                    std::size_t t_eff) const {
        const std::size_t d = config.embed_dim;
        Tensor<T> out({b, t_eff, d});
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t t = 0; t < t_eff; ++t) {
                const std::int32_t id = ids[i * t_eff + t];
                if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size)
                    throw DataError("token id " + std::to_string(id) +
                                    " outside vocabulary of size " +
                                    std::to_string(config.vocab_size));
                const T* row = &embedding.value.data[static_cast<std::size_t>(id) * d];
                T* o = &out.data[(i * t_eff + t) * d];
                for (std::size_t k = 0; k < d; ++k) o[k] = row[k];
            }
        }
        return out;
    }

    void scatter_embedding(const Tensor<T>& d_emb, const std::vector<std::int32_t>& ids) {
        if (!embedding.trainable) return;
        const std::size_t d = config.embed_dim;
        const std::size_t n = ids.size();
        for (std::size_t p = 0; p < n; ++p) {
            const std::int32_t id = ids[p];
            if (id == 0) continue;  // padding row stays zero
            T* g = &embedding.grad.data[static_cast<std::size_t>(id) * d];
            const T* src = &d_emb.data[p * d];
            for (std::size_t k = 0; k < d; ++k) g[k] += src[k];
        }
    }

    static Tensor<T> masked_sum(const Tensor<T>& x, const std::vector<std::size_t>& lens) {
        const std::size_t b = x.shape[0], t_max = x.shape[1], d = x.shape[2];
        Tensor<T> out({b, d});
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t t = 0; t < lens[i]; ++t)
                for (std::size_t k = 0; k < d; ++k)
                    out.at(i, k) += x.at(i, t, k);
        (void)t_max;
        return out;
    }

    static Tensor<T> broadcast_masked(const Tensor<T>& dy,
                                      const std::vector<std::size_t>& lens,
                                      std::size_t t_max) {
        const std::size_t b = dy.shape[0], d = dy.shape[1];
        Tensor<T> out({b, t_max, d});
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t t = 0; t < lens[i]; ++t)
                for (std::size_t k = 0; k < d; ++k) out.at(i, t, k) = dy.at(i, k);
        return out;
    }

    // [p ; h ; |p - h|]
    static Tensor<T> merge(const Tensor<T>& p, const Tensor<T>& h, Tensor<T>* sign) {
        const std::size_t b = p.shape[0], d = p.shape[1];
        Tensor<T> out({b, 3 * d});
        if (sign) *sign = Tensor<T>({b, d});
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                const T diff = p.at(i, k) - h.at(i, k);
                out.at(i, k) = p.at(i, k);
                out.at(i, d + k) = h.at(i, k);
                out.at(i, 2 * d + k) = std::abs(diff);
                if (sign)
                    sign->at(i, k) = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
            }
        }
        return out;
    }

    static void merge_backward(const Tensor<T>& dm, const Tensor<T>& sign,
                               Tensor<T>& dp, Tensor<T>& dh) {
        const std::size_t b = dm.shape[0], d = dm.shape[1] / 3;
        dp = Tensor<T>({b, d});
        dh = Tensor<T>({b, d});
        for (std::size_t i = 0; i < b; ++i) {
            for (std::size_t k = 0; k < d; ++k) {
                const T s = sign.at(i, k) * dm.at(i, 2 * d + k);
                dp.at(i, k) = dm.at(i, k) + s;
                dh.at(i, k) = dm.at(i, d + k) - s;
            }
        }
    }

    static Tensor<T> take_final(const BilstmOut<T>& out) { return out.final; }

    static Tensor<T> expand_final(const Tensor<T>& d_final) { return d_final; }

    static Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
        const std::size_t n = a.shape[0], t = a.shape[1], d = a.shape[2];
        Tensor<T> out({n, t, 2 * d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < t; ++s)
                for (std::size_t k = 0; k < d; ++k) {
                    out.at(i, s, k) = a.at(i, s, k);
                    out.at(i, s, d + k) = b.at(i, s, k);
                }
        return out;
    }

    static void split_last(const Tensor<T>& x, Tensor<T>& a, Tensor<T>& b) {
        const std::size_t n = x.shape[0], t = x.shape[1], d2 = x.shape[2];
        const std::size_t d = d2 / 2;
        a = Tensor<T>({n, t, d});
        b = Tensor<T>({n, t, d});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t s = 0; s < t; ++s)
                for (std::size_t k = 0; k < d; ++k) {
                    a.at(i, s, k) = x.at(i, s, k);
                    b.at(i, s, k) = x.at(i, s, d + k);
                }
    }

    static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
        for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
    }

    template <class U>
    friend class Model;
};

// Builds a model with initialized weights. The embedding matrix must be
// V×embed_dim; its row 0 is forced to zero.
template <class T>
Model<T> build_model(const ModelConfig& config, const Tensor<T>& embedding_matrix,
                     std::uint64_t seed) {
    config.validate();
    if (embedding_matrix.rank() != 2 ||
        embedding_matrix.shape[0] != config.vocab_size ||
        embedding_matrix.shape[1] != config.embed_dim)
        throw ConfigError("embedding matrix must be " +
                          std::to_string(config.vocab_size) + "x" +
                          std::to_string(config.embed_dim) + ", got " +
                          embedding_matrix.shape_str());
    Model<T> m;
    m.config = config;
    Model<T>::build_layers(m);
    m.embedding.value = embedding_matrix;
    for (std::size_t k = 0; k < config.embed_dim; ++k)
        m.embedding.value.at(0, k) = T(0);

    SeededRng rng(seed);
    if (config.design == 1) {
        m.translate.init(rng);
    } else {
        m.translate1.init(rng);
        m.translate2.init(rng);
        m.bilstm.init(rng);
    }
    for (auto& d : m.dense_stack) d.init(rng);
    m.out_layer.init(rng);
    return m;
}

template <class T>
Model<T> build_design_1(const ModelConfig& config, const Tensor<T>& embedding_matrix,
                        std::uint64_t seed) {
    if (config.design != 1) throw ConfigError("build_design_1: config.design != 1");
    return build_model(config, embedding_matrix, seed);
}

template <class T>
Model<T> build_design_2(const ModelConfig& config, const Tensor<T>& embedding_matrix,
                        std::uint64_t seed) {
    if (config.design != 2) throw ConfigError("build_design_2: config.design != 2");
    return build_model(config, embedding_matrix, seed);
}

}  // namespace nli
