#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "blockspot/errors.hpp"
#include "blockspot/rng.hpp"
#include "blockspot/uvlm/mask.hpp"

namespace blockspot::uvlm {

struct SequenceTooLong : InputError {
    using InputError::InputError;
};
struct NonFiniteLoss : Error {
    using Error::Error;
};

struct Hyper {
    int layers = 4;
    int heads = 4;
    int dim = 128;
    int ffn = 512;
    int max_len = 320;
    int vocab = 40;
    int patch_dim = 192;  // Hp * Wp * channels

    bool operator==(const Hyper&) const = default;
};

inline constexpr double kLnEps = 1e-5;

// Dense row-major matrix; vectors are 1 x n.
template <typename T>
struct Mat {
    int rows = 0, cols = 0;
    std::vector<T> a;

    Mat() = default;
    Mat(int r, int c, T fill = T(0))
        : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, fill) {}

    T* row(int r) { return a.data() + static_cast<std::size_t>(r) * cols; }
    const T* row(int r) const { return a.data() + static_cast<std::size_t>(r) * cols; }
    T& at(int r, int c) { return a[static_cast<std::size_t>(r) * cols + c]; }
    T at(int r, int c) const { return a[static_cast<std::size_t>(r) * cols + c]; }
    void zero() { std::fill(a.begin(), a.end(), T(0)); }
};

template <typename T>
struct LayerParams {
    Mat<T> wq, wk, wv, wo;              // dim x dim
    Mat<T> bq, bk, bv, bo;              // 1 x dim
    Mat<T> ln1_g, ln1_b, ln2_g, ln2_b;  // 1 x dim
    Mat<T> w1, b1;                      // dim x ffn, 1 x ffn
    Mat<T> w2, b2;                      // ffn x dim, 1 x dim
};

template <typename T>
struct ModelParams {
    Hyper hyper;
    Mat<T> patch_proj;  // patch_dim x dim
    Mat<T> patch_bias;  // 1 x dim
    Mat<T> tok_embed;   // vocab x dim
    Mat<T> pos_embed;   // max_len x dim
    std::vector<LayerParams<T>> layers;
    Mat<T> lnf_g, lnf_b;  // 1 x dim
    Mat<T> out_proj;      // dim x vocab
    Mat<T> out_bias;      // 1 x vocab
};

template <typename T, typename Fn>
void for_each_tensor(ModelParams<T>& p, Fn&& fn) {
    fn("patch_proj.w", p.patch_proj);
    fn("patch_proj.b", p.patch_bias);
    fn("tok_embed", p.tok_embed);
    fn("pos_embed", p.pos_embed);
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        std::string prefix = "layer" + std::to_string(l) + ".";
        LayerParams<T>& lp = p.layers[l];
        fn(prefix + "wq", lp.wq);
        fn(prefix + "bq", lp.bq);
        fn(prefix + "wk", lp.wk);
        fn(prefix + "bk", lp.bk);
        fn(prefix + "wv", lp.wv);
        fn(prefix + "bv", lp.bv);
        fn(prefix + "wo", lp.wo);
        fn(prefix + "bo", lp.bo);
        fn(prefix + "ln1.g", lp.ln1_g);
        fn(prefix + "ln1.b", lp.ln1_b);
        fn(prefix + "ln2.g", lp.ln2_g);
        fn(prefix + "ln2.b", lp.ln2_b);
        fn(prefix + "ffn.w1", lp.w1);
        fn(prefix + "ffn.b1", lp.b1);
        fn(prefix + "ffn.w2", lp.w2);
        fn(prefix + "ffn.b2", lp.b2);
    }
    fn("final_ln.g", p.lnf_g);
    fn("final_ln.b", p.lnf_b);
    fn("out_proj.w", p.out_proj);
    fn("out_proj.b", p.out_bias);
}

template <typename T>
ModelParams<T> make_params(const Hyper& h) {
    ModelParams<T> p;
    p.hyper = h;
    p.patch_proj = Mat<T>(h.patch_dim, h.dim);
    p.patch_bias = Mat<T>(1, h.dim);
    p.tok_embed = Mat<T>(h.vocab, h.dim);
    p.pos_embed = Mat<T>(h.max_len, h.dim);
    p.layers.resize(static_cast<std::size_t>(h.layers));
    for (LayerParams<T>& lp : p.layers) {
        lp.wq = lp.wk = lp.wv = lp.wo = Mat<T>(h.dim, h.dim);
        lp.bq = lp.bk = lp.bv = lp.bo = Mat<T>(1, h.dim);
        lp.ln1_g = lp.ln1_b = lp.ln2_g = lp.ln2_b = Mat<T>(1, h.dim);
        lp.w1 = Mat<T>(h.dim, h.ffn);
        lp.b1 = Mat<T>(1, h.ffn);
        lp.w2 = Mat<T>(h.ffn, h.dim);
        lp.b2 = Mat<T>(1, h.dim);
    }
    p.lnf_g = p.lnf_b = Mat<T>(1, h.dim);
    p.out_proj = Mat<T>(h.dim, h.vocab);
    p.out_bias = Mat<T>(1, h.vocab);
    return p;
}

template <typename T>
ModelParams<T> init_params(const Hyper& h, std::uint64_t seed) {
    ModelParams<T> p = make_params<T>(h);
    Rng rng(seed ^ 0xB5297A4D3F84D5B5ull);
    auto gauss = [&rng](Mat<T>& m, double stddev) {
        for (T& v : m.a) v = static_cast<T>(rng.normal(0.0, stddev));
    };
    gauss(p.patch_proj, 0.02);
    gauss(p.tok_embed, 0.02);
    gauss(p.pos_embed, 0.01);
    for (LayerParams<T>& lp : p.layers) {
        gauss(lp.wq, 0.02);
        gauss(lp.wk, 0.02);
        gauss(lp.wv, 0.02);
        gauss(lp.wo, 0.02);
        gauss(lp.w1, 0.02);
        gauss(lp.w2, 0.02);
        for (T& v : lp.ln1_g.a) v = T(1);
        for (T& v : lp.ln2_g.a) v = T(1);
    }
    for (T& v : p.lnf_g.a) v = T(1);
    gauss(p.out_proj, 0.02);
    return p;
}

template <typename T>
ModelParams<T> zeros_like(const ModelParams<T>& p) {
    return make_params<T>(p.hyper);
}

// Model-side view of a token sequence: raw patches plus language ids
// (no [SEP], no trailing [EOS]).
struct SampleTokens {
    std::vector<std::vector<float>> patches;
    std::vector<int> lang;

    int prefix_len() const { return static_cast<int>(patches.size()) + 1; }
    int total_len() const { return prefix_len() + static_cast<int>(lang.size()); }
};

enum class MaskKind { Unified, Causal };

inline AttentionMask build_mask(MaskKind kind, int v_n, int total) {
    return kind == MaskKind::Unified ? unified_mask(v_n, total) : causal_mask(total);
}

template <typename T>
struct LayerCache {
    Mat<T> x_in, ln1_xhat;
    std::vector<T> ln1_rstd;
    Mat<T> q, k, v;
    Mat<T> att;      // (heads*N) x N softmax weights
    Mat<T> att_out;  // pre-Wo concat of heads
    Mat<T> x_mid, ln2_xhat;
    std::vector<T> ln2_rstd;
    Mat<T> ffn_pre, ffn_act;
};

template <typename T>
struct Cache {
    Mat<T> x0;
    std::vector<LayerCache<T>> layers;
    Mat<T> x_final, lnf_xhat;
    std::vector<T> lnf_rstd;
    std::vector<int> limits;
};

namespace detail {

template <typename T>
void matmul(const Mat<T>& a, const Mat<T>& b, Mat<T>& c) {
    c = Mat<T>(a.rows, b.cols);
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (int k = 0; k < a.cols; ++k) {
            T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = b.row(k);
            for (int j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
}

template <typename T>
void add_bias(Mat<T>& m, const Mat<T>& bias) {
    for (int i = 0; i < m.rows; ++i) {
        T* row = m.row(i);
        const T* b = bias.row(0);
        for (int j = 0; j < m.cols; ++j) row[j] += b[j];
    }
}

// dA += dC * B^T
template <typename T>
void matmul_dA(const Mat<T>& dc, const Mat<T>& b, Mat<T>& da) {
    for (int i = 0; i < dc.rows; ++i) {
        const T* dcrow = dc.row(i);
        T* darow = da.row(i);
        for (int k = 0; k < b.rows; ++k) {
            const T* brow = b.row(k);
            T s = T(0);
            for (int j = 0; j < dc.cols; ++j) s += dcrow[j] * brow[j];
            darow[k] += s;
        }
    }
}

// dB += A^T * dC
template <typename T>
void matmul_dB(const Mat<T>& a, const Mat<T>& dc, Mat<T>& db) {
    for (int i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        const T* dcrow = dc.row(i);
        for (int k = 0; k < a.cols; ++k) {
            T aik = arow[k];
            if (aik == T(0)) continue;
            T* dbrow = db.row(k);
            for (int j = 0; j < dc.cols; ++j) dbrow[j] += aik * dcrow[j];
        }
    }
}

template <typename T>
void bias_grad(const Mat<T>& dc, Mat<T>& db) {
    for (int i = 0; i < dc.rows; ++i) {
        const T* dcrow = dc.row(i);
        T* dbrow = db.row(0);
        for (int j = 0; j < dc.cols; ++j) dbrow[j] += dcrow[j];
    }
}

// y = xhat * g + b with cached xhat and rstd.
template <typename T>
void layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, Mat<T>& xhat,
                std::vector<T>& rstd, Mat<T>& out) {
    const int d = x.cols;
    xhat = Mat<T>(x.rows, d);
    out = Mat<T>(x.rows, d);
    rstd.assign(static_cast<std::size_t>(x.rows), T(0));
    for (int i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += xr[j];
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double dv = xr[j] - mean;
            var += dv * dv;
        }
        var /= d;
        T rs = static_cast<T>(1.0 / std::sqrt(var + kLnEps));
        rstd[static_cast<std::size_t>(i)] = rs;
        T* xh = xhat.row(i);
        T* o = out.row(i);
        const T* gr = g.row(0);
        const T* br = b.row(0);
        for (int j = 0; j < d; ++j) {
            xh[j] = static_cast<T>((xr[j] - mean) * rs);
            o[j] = xh[j] * gr[j] + br[j];
        }
    }
}

template <typename T>
void layer_norm_backward(const Mat<T>& dout, const Mat<T>& xhat, const std::vector<T>& rstd,
                         const Mat<T>& g, Mat<T>& dx, Mat<T>& dg, Mat<T>& db) {
    const int d = dout.cols;
    std::vector<T> dxhat(static_cast<std::size_t>(d));
    for (int i = 0; i < dout.rows; ++i) {
        const T* dor = dout.row(i);
        const T* xh = xhat.row(i);
        const T* gr = g.row(0);
        T* dgr = dg.row(0);
        T* dbr = db.row(0);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (int j = 0; j < d; ++j) {
            dgr[j] += dor[j] * xh[j];
            dbr[j] += dor[j];
            T v = dor[j] * gr[j];
            dxhat[static_cast<std::size_t>(j)] = v;
            sum_dxhat += v;
            sum_dxhat_xhat += static_cast<double>(v) * xh[j];
        }
        T mean_dxhat = static_cast<T>(sum_dxhat / d);
        T mean_dxhat_xhat = static_cast<T>(sum_dxhat_xhat / d);
        T rs = rstd[static_cast<std::size_t>(i)];
        T* dxr = dx.row(i);
        for (int j = 0; j < d; ++j) {
            dxr[j] += rs * (dxhat[static_cast<std::size_t>(j)] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475)); }
inline double gelu_grad(double x) {
    double phi = std::exp(-0.5 * x * x) * 0.3989422804014327;  // standard normal pdf
    return 0.5 * (1.0 + std::erf(x * 0.7071067811865475)) + x * phi;
}

}  // namespace detail

template <typename T>
Mat<T> forward(const ModelParams<T>& p, const SampleTokens& sample, const AttentionMask& mask,
               int sep_id, Cache<T>* cache_out = nullptr) {
    using namespace detail;
    const Hyper& h = p.hyper;
    const int m = static_cast<int>(sample.patches.size());
    const int n = sample.total_len();
    if (n > h.max_len) {
        throw SequenceTooLong("sequence length " + std::to_string(n) + " exceeds max_len " +
                              std::to_string(h.max_len));
    }
    if (mask.n != n) throw ShapeMismatch("mask size does not match sequence length");
    std::vector<int> limits = mask.row_limits();
    if (limits.empty()) {
        throw ShapeMismatch("model attention requires per-row key-prefix masks");
    }
    for (const auto& patch : sample.patches) {
        if (static_cast<int>(patch.size()) != h.patch_dim) {
            throw ShapeMismatch("patch dimension does not match hyperparameters");
        }
    }

    Cache<T> local;
    Cache<T>& cache = cache_out ? *cache_out : local;
    cache.limits = limits;
    cache.layers.assign(static_cast<std::size_t>(h.layers), LayerCache<T>{});

    // Embedding: patch projection / token table, plus learned positions.
    cache.x0 = Mat<T>(n, h.dim);
    for (int i = 0; i < m; ++i) {
        T* row = cache.x0.row(i);
        const T* bias = p.patch_bias.row(0);
        const T* pos = p.pos_embed.row(i);
        for (int j = 0; j < h.dim; ++j) row[j] = bias[j] + pos[j];
        const std::vector<float>& patch = sample.patches[static_cast<std::size_t>(i)];
        for (int t = 0; t < h.patch_dim; ++t) {
            T v = static_cast<T>(patch[static_cast<std::size_t>(t)]);
            if (v == T(0)) continue;
            const T* w = p.patch_proj.row(t);
            for (int j = 0; j < h.dim; ++j) row[j] += v * w[j];
        }
    }
    for (int i = m; i < n; ++i) {
        int tok = i == m ? sep_id : sample.lang[static_cast<std::size_t>(i - m - 1)];
        T* row = cache.x0.row(i);
        const T* emb = p.tok_embed.row(tok);
        const T* pos = p.pos_embed.row(i);
        for (int j = 0; j < h.dim; ++j) row[j] = emb[j] + pos[j];
    }

    const int dk = h.dim / h.heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    Mat<T> x = cache.x0;
    std::vector<T> scores(static_cast<std::size_t>(n));
    for (int l = 0; l < h.layers; ++l) {
        LayerCache<T>& lc = cache.layers[static_cast<std::size_t>(l)];
        const LayerParams<T>& lp = p.layers[static_cast<std::size_t>(l)];
        lc.x_in = x;

        Mat<T> ln1_out;
        layer_norm(x, lp.ln1_g, lp.ln1_b, lc.ln1_xhat, lc.ln1_rstd, ln1_out);
        matmul(ln1_out, lp.wq, lc.q);
        add_bias(lc.q, lp.bq);
        matmul(ln1_out, lp.wk, lc.k);
        add_bias(lc.k, lp.bk);
        matmul(ln1_out, lp.wv, lc.v);
        add_bias(lc.v, lp.bv);

        lc.att = Mat<T>(h.heads * n, n);
        lc.att_out = Mat<T>(n, h.dim);
        for (int head = 0; head < h.heads; ++head) {
            const int off = head * dk;
            for (int i = 0; i < n; ++i) {
                const int limit = limits[static_cast<std::size_t>(i)];
                const T* qi = lc.q.row(i) + off;
                T max_s = -std::numeric_limits<T>::infinity();
                for (int j = 0; j < limit; ++j) {
                    const T* kj = lc.k.row(j) + off;
                    T s = T(0);
                    for (int t = 0; t < dk; ++t) s += qi[t] * kj[t];
                    s *= scale;
                    scores[static_cast<std::size_t>(j)] = s;
                    if (s > max_s) max_s = s;
                }
                T denom = T(0);
                T* wrow = lc.att.row(head * n + i);
                for (int j = 0; j < limit; ++j) {
                    T e = static_cast<T>(std::exp(static_cast<double>(scores[static_cast<std::size_t>(j)] - max_s)));
                    wrow[j] = e;
                    denom += e;
                }
                T inv = T(1) / denom;
                T* orow = lc.att_out.row(i) + off;
                for (int j = 0; j < limit; ++j) {
                    T w = wrow[j] * inv;
                    wrow[j] = w;
                    const T* vj = lc.v.row(j) + off;
                    for (int t = 0; t < dk; ++t) orow[t] += w * vj[t];
                }
            }
        }

        Mat<T> att_proj;
        matmul(lc.att_out, lp.wo, att_proj);
        add_bias(att_proj, lp.bo);
        lc.x_mid = Mat<T>(n, h.dim);
        for (std::size_t idx = 0; idx < x.a.size(); ++idx) {
            lc.x_mid.a[idx] = x.a[idx] + att_proj.a[idx];
        }

        Mat<T> ln2_out;
        layer_norm(lc.x_mid, lp.ln2_g, lp.ln2_b, lc.ln2_xhat, lc.ln2_rstd, ln2_out);
        matmul(ln2_out, lp.w1, lc.ffn_pre);
        add_bias(lc.ffn_pre, lp.b1);
        lc.ffn_act = Mat<T>(n, h.ffn);
        for (std::size_t idx = 0; idx < lc.ffn_pre.a.size(); ++idx) {
            lc.ffn_act.a[idx] = static_cast<T>(gelu(static_cast<double>(lc.ffn_pre.a[idx])));
        }
        Mat<T> ffn_out;
        matmul(lc.ffn_act, lp.w2, ffn_out);
        add_bias(ffn_out, lp.b2);

        x = Mat<T>(n, h.dim);
        for (std::size_t idx = 0; idx < x.a.size(); ++idx) {
            x.a[idx] = lc.x_mid.a[idx] + ffn_out.a[idx];
        }
    }

    cache.x_final = x;
    Mat<T> lnf_out;
    layer_norm(x, p.lnf_g, p.lnf_b, cache.lnf_xhat, cache.lnf_rstd, lnf_out);
    Mat<T> logits;
    matmul(lnf_out, p.out_proj, logits);
    add_bias(logits, p.out_bias);
    return logits;
}

// Targets for teacher forcing: position q >= m predicts lang[q-m], the final
// slot predicts [EOS]; vision positions carry -1.
inline std::vector<int> next_token_targets(const SampleTokens& sample, int eos_id) {
    const int m = static_cast<int>(sample.patches.size());
    std::vector<int> targets(static_cast<std::size_t>(sample.total_len()), -1);
    for (std::size_t k = 0; k < sample.lang.size(); ++k) {
        targets[static_cast<std::size_t>(m) + k] = sample.lang[k];
    }
    targets.back() = eos_id;
    return targets;
}

// Mean NLL of the next-token targets over language prediction slots (the
// [SEP] position predicts the first language token). Vision positions and
// negative targets contribute nothing.
template <typename T>
double lm_loss(const Mat<T>& logits, const std::vector<int>& targets, int v_n) {
    if (static_cast<int>(targets.size()) != logits.rows) {
        throw ShapeMismatch("targets must align with logits rows");
    }
    double total = 0.0;
    int count = 0;
    for (int i = v_n - 1; i < logits.rows; ++i) {
        int target = targets[static_cast<std::size_t>(i)];
        if (target < 0) continue;
        const T* row = logits.row(i);
        double max_l = -std::numeric_limits<double>::infinity();
        for (int j = 0; j < logits.cols; ++j) max_l = std::max(max_l, static_cast<double>(row[j]));
        double denom = 0.0;
        for (int j = 0; j < logits.cols; ++j) denom += std::exp(static_cast<double>(row[j]) - max_l);
        total += -(static_cast<double>(row[target]) - max_l - std::log(denom));
        ++count;
    }
    return count == 0 ? 0.0 : total / count;
}

namespace detail {

// Gradient of slot_weight * summed NLL for one sample, accumulated into
// grads. Returns the summed NLL and the number of slots.
template <typename T>
std::pair<double, int> backward_sample(const ModelParams<T>& p, const SampleTokens& sample,
                                       const AttentionMask& mask, const std::vector<int>& targets,
                                       int sep_id, double slot_weight, ModelParams<T>& grads,
                                       bool* all_slots_correct = nullptr) {
    const Hyper& h = p.hyper;
    Cache<T> cache;
    Mat<T> logits = forward(p, sample, mask, sep_id, &cache);
    const int n = logits.rows;
    const int v_n = sample.prefix_len();

    // Softmax + NLL + dlogits in one pass.
    Mat<T> dlogits(n, h.vocab);
    double nll_sum = 0.0;
    int slots = 0;
    bool correct = true;
    for (int i = v_n - 1; i < n; ++i) {
        int target = targets[static_cast<std::size_t>(i)];
        if (target < 0) continue;
        const T* row = logits.row(i);
        double max_l = -std::numeric_limits<double>::infinity();
        int argmax = 0;
        for (int j = 0; j < h.vocab; ++j) {
            if (static_cast<double>(row[j]) > max_l) {
                max_l = static_cast<double>(row[j]);
                argmax = j;
            }
        }
        if (argmax != target) correct = false;
        double denom = 0.0;
        for (int j = 0; j < h.vocab; ++j) denom += std::exp(static_cast<double>(row[j]) - max_l);
        nll_sum += -(static_cast<double>(row[target]) - max_l - std::log(denom));
        ++slots;
        T* drow = dlogits.row(i);
        for (int j = 0; j < h.vocab; ++j) {
            double prob = std::exp(static_cast<double>(row[j]) - max_l) / denom;
            drow[j] = static_cast<T>((prob - (j == target ? 1.0 : 0.0)) * slot_weight);
        }
    }
    if (all_slots_correct) *all_slots_correct = correct;
    if (!std::isfinite(nll_sum)) throw NonFiniteLoss("loss is not finite");

    // Output projection. lnf_out is recomputed from the cached xhat.
    Mat<T> lnf_out(n, h.dim);
    for (int i = 0; i < n; ++i) {
        const T* xh = cache.lnf_xhat.row(i);
        const T* g = p.lnf_g.row(0);
        const T* b = p.lnf_b.row(0);
        T* o = lnf_out.row(i);
        for (int j = 0; j < h.dim; ++j) o[j] = xh[j] * g[j] + b[j];
    }
    matmul_dB(lnf_out, dlogits, grads.out_proj);
    bias_grad(dlogits, grads.out_bias);
    Mat<T> d_lnf_out(n, h.dim);
    matmul_dA(dlogits, p.out_proj, d_lnf_out);

    Mat<T> dx(n, h.dim);
    layer_norm_backward(d_lnf_out, cache.lnf_xhat, cache.lnf_rstd, p.lnf_g, dx, grads.lnf_g,
                        grads.lnf_b);

    const int dk = h.dim / h.heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));
    for (int l = h.layers - 1; l >= 0; --l) {
        const LayerParams<T>& lp = p.layers[static_cast<std::size_t>(l)];
        LayerParams<T>& lg = grads.layers[static_cast<std::size_t>(l)];
        LayerCache<T>& lc = cache.layers[static_cast<std::size_t>(l)];

        // FFN branch: dx covers d(x_mid + ffn_out).
        Mat<T> d_act(n, h.ffn);
        matmul_dA(dx, lp.w2, d_act);
        matmul_dB(lc.ffn_act, dx, lg.w2);
        bias_grad(dx, lg.b2);
        Mat<T>& d_pre = d_act;  // in place through the activation
        for (std::size_t idx = 0; idx < d_pre.a.size(); ++idx) {
            d_pre.a[idx] = static_cast<T>(static_cast<double>(d_pre.a[idx]) *
                                          gelu_grad(static_cast<double>(lc.ffn_pre.a[idx])));
        }
        Mat<T> ln2_out(n, h.dim);
        for (int i = 0; i < n; ++i) {
            const T* xh = lc.ln2_xhat.row(i);
            const T* g = lp.ln2_g.row(0);
            const T* b = lp.ln2_b.row(0);
            T* o = ln2_out.row(i);
            for (int j = 0; j < h.dim; ++j) o[j] = xh[j] * g[j] + b[j];
        }
        Mat<T> d_ln2_out(n, h.dim);
        matmul_dA(d_pre, lp.w1, d_ln2_out);
        matmul_dB(ln2_out, d_pre, lg.w1);
        bias_grad(d_pre, lg.b1);
        // d_x_mid = dx (residual) + LN2 backward contribution.
        Mat<T> d_x_mid = dx;
        layer_norm_backward(d_ln2_out, lc.ln2_xhat, lc.ln2_rstd, lp.ln2_g, d_x_mid, lg.ln2_g,
                            lg.ln2_b);

        // Attention branch.
        Mat<T> d_att_out(n, h.dim);
        matmul_dA(d_x_mid, lp.wo, d_att_out);
        matmul_dB(lc.att_out, d_x_mid, lg.wo);
        bias_grad(d_x_mid, lg.bo);

        Mat<T> dq(n, h.dim), dkm(n, h.dim), dv(n, h.dim);
        std::vector<T> dw(static_cast<std::size_t>(n));
        for (int head = 0; head < h.heads; ++head) {
            const int off = head * dk;
            for (int i = 0; i < n; ++i) {
                const int limit = cache.limits[static_cast<std::size_t>(i)];
                const T* wrow = lc.att.row(head * n + i);
                const T* dor = d_att_out.row(i) + off;
                // dv and dw.
                double dot_w_dw = 0.0;
                for (int j = 0; j < limit; ++j) {
                    const T* vj = lc.v.row(j) + off;
                    T s = T(0);
                    for (int t = 0; t < dk; ++t) s += dor[t] * vj[t];
                    dw[static_cast<std::size_t>(j)] = s;
                    dot_w_dw += static_cast<double>(wrow[j]) * s;
                    T* dvj = dv.row(j) + off;
                    T w = wrow[j];
                    for (int t = 0; t < dk; ++t) dvj[t] += w * dor[t];
                }
                // ds = w * (dw - sum(w*dw)); dq, dk.
                T* dqi = dq.row(i) + off;
                const T* qi = lc.q.row(i) + off;
                for (int j = 0; j < limit; ++j) {
                    T ds = static_cast<T>(static_cast<double>(wrow[j]) *
                                          (static_cast<double>(dw[static_cast<std::size_t>(j)]) - dot_w_dw)) *
                           scale;
                    if (ds == T(0)) continue;
                    const T* kj = lc.k.row(j) + off;
                    T* dkj = dkm.row(j) + off;
                    for (int t = 0; t < dk; ++t) {
                        dqi[t] += ds * kj[t];
                        dkj[t] += ds * qi[t];
                    }
                }
            }
        }

        Mat<T> ln1_out(n, h.dim);
        for (int i = 0; i < n; ++i) {
            const T* xh = lc.ln1_xhat.row(i);
            const T* g = lp.ln1_g.row(0);
            const T* b = lp.ln1_b.row(0);
            T* o = ln1_out.row(i);
            for (int j = 0; j < h.dim; ++j) o[j] = xh[j] * g[j] + b[j];
        }
        Mat<T> d_ln1_out(n, h.dim);
        matmul_dA(dq, lp.wq, d_ln1_out);
        matmul_dB(ln1_out, dq, lg.wq);
        bias_grad(dq, lg.bq);
        matmul_dA(dkm, lp.wk, d_ln1_out);
        matmul_dB(ln1_out, dkm, lg.wk);
        bias_grad(dkm, lg.bk);
        matmul_dA(dv, lp.wv, d_ln1_out);
        matmul_dB(ln1_out, dv, lg.wv);
        bias_grad(dv, lg.bv);

        // d_x_in = d_x_mid (residual) + LN1 backward contribution.
        Mat<T> d_x_in = d_x_mid;
        layer_norm_backward(d_ln1_out, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_g, d_x_in, lg.ln1_g,
                            lg.ln1_b);
        dx = std::move(d_x_in);
    }

    // Embeddings.
    const int m = static_cast<int>(sample.patches.size());
    for (int i = 0; i < n; ++i) {
        const T* dxi = dx.row(i);
        T* dpos = grads.pos_embed.row(i);
        for (int j = 0; j < h.dim; ++j) dpos[j] += dxi[j];
    }
    for (int i = 0; i < m; ++i) {
        const T* dxi = dx.row(i);
        T* dbias = grads.patch_bias.row(0);
        for (int j = 0; j < h.dim; ++j) dbias[j] += dxi[j];
        const std::vector<float>& patch = sample.patches[static_cast<std::size_t>(i)];
        for (int t = 0; t < h.patch_dim; ++t) {
            T v = static_cast<T>(patch[static_cast<std::size_t>(t)]);
            if (v == T(0)) continue;
            T* dw = grads.patch_proj.row(t);
            for (int j = 0; j < h.dim; ++j) dw[j] += v * dxi[j];
        }
    }
    for (int i = m; i < n; ++i) {
        int tok = i == m ? sep_id : sample.lang[static_cast<std::size_t>(i - m - 1)];
        const T* dxi = dx.row(i);
        T* demb = grads.tok_embed.row(tok);
        for (int j = 0; j < h.dim; ++j) demb[j] += dxi[j];
    }
    return {nll_sum, slots};
}

}  // namespace detail

struct BatchStats {
    double loss = 0.0;            // pooled mean NLL over all target slots
    int correct_sequences = 0;    // samples with every slot argmax-correct
    int total_sequences = 0;
};

// Exact analytic gradients of the pooled batch loss; gradient of the mean
// NLL over all target slots in the batch.
template <typename T>
BatchStats backward(const ModelParams<T>& p, const std::vector<SampleTokens>& batch,
                    MaskKind kind, int sep_id, int eos_id, ModelParams<T>& grads) {
    int total_slots = 0;
    for (const SampleTokens& s : batch) total_slots += static_cast<int>(s.lang.size()) + 1;
    const double slot_weight = total_slots > 0 ? 1.0 / total_slots : 0.0;

    BatchStats stats;
    stats.total_sequences = static_cast<int>(batch.size());
    double nll_total = 0.0;
    for (const SampleTokens& sample : batch) {
        AttentionMask mask = build_mask(kind, sample.prefix_len(), sample.total_len());
        std::vector<int> targets = next_token_targets(sample, eos_id);
        bool correct = false;
        auto [nll, slots] = detail::backward_sample(p, sample, mask, targets, sep_id, slot_weight,
                                                    grads, &correct);
        nll_total += nll;
        if (correct) ++stats.correct_sequences;
        (void)slots;
    }
    stats.loss = total_slots > 0 ? nll_total / total_slots : 0.0;
    if (!std::isfinite(stats.loss)) throw NonFiniteLoss("batch loss is not finite");
    return stats;
}

}  // namespace blockspot::uvlm
