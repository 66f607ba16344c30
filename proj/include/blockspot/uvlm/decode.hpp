#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "blockspot/tokenizer.hpp"
#include "blockspot/uvlm/model.hpp"

namespace blockspot::uvlm {

struct DecodeConfig {
    int beam_width = 4;
    int max_new_tokens = 64;
    double length_norm = 0.0;  // score = log_prob / len^length_norm
};

struct DecodeResult {
    std::vector<int> ids;  // language ids, no [EOS]
    std::string text;
    double log_prob = 0.0;  // summed log-probabilities incl. the [EOS] decision
    double score = 0.0;     // length-normalized
};

// Per-layer key/value rows for incremental decoding.
template <typename T>
struct KvCache {
    Hyper hyper;
    int len = 0;
    std::vector<Mat<T>> k, v;

    explicit KvCache(const Hyper& h) : hyper(h) {
        k.assign(static_cast<std::size_t>(h.layers), Mat<T>(h.max_len, h.dim));
        v.assign(static_cast<std::size_t>(h.layers), Mat<T>(h.max_len, h.dim));
    }
};

namespace detail {

template <typename T>
void ln_row(const T* x, const Mat<T>& g, const Mat<T>& b, int d, T* out) {
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += x[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
        double dv = x[j] - mean;
        var += dv * dv;
    }
    var /= d;
    T rs = static_cast<T>(1.0 / std::sqrt(var + kLnEps));
    const T* gr = g.row(0);
    const T* br = b.row(0);
    for (int j = 0; j < d; ++j) out[j] = static_cast<T>((x[j] - mean) * rs) * gr[j] + br[j];
}

template <typename T>
void vecmat(const T* x, const Mat<T>& w, const Mat<T>& bias, int in_dim, T* out) {
    const T* b = bias.row(0);
    for (int j = 0; j < w.cols; ++j) out[j] = b[j];
    for (int t = 0; t < in_dim; ++t) {
        T xt = x[t];
        if (xt == T(0)) continue;
        const T* wr = w.row(t);
        for (int j = 0; j < w.cols; ++j) out[j] += xt * wr[j];
    }
}

// Runs the transformer stack over rows [first, first+count) of x. Each row i
// (absolute position) attends keys [0, limit(i)) where limit is cache.len +
// local row + 1 for causal tails, or a fixed prefix length when
// bidirectional. K/V rows are appended to the cache.
template <typename T>
Mat<T> run_stack(const ModelParams<T>& p, KvCache<T>& cache, Mat<T> x, bool bidirectional) {
    using uvlm::detail::layer_norm;   // reuse the batched helpers
    using uvlm::detail::matmul;
    using uvlm::detail::add_bias;
    const Hyper& h = p.hyper;
    const int count = x.rows;
    const int base = cache.len;
    const int dk = h.dim / h.heads;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk)));

    for (int l = 0; l < h.layers; ++l) {
        const LayerParams<T>& lp = p.layers[static_cast<std::size_t>(l)];
        Mat<T> xhat;
        std::vector<T> rstd;
        Mat<T> ln1_out;
        layer_norm(x, lp.ln1_g, lp.ln1_b, xhat, rstd, ln1_out);
        Mat<T> q, knew, vnew;
        matmul(ln1_out, lp.wq, q);
        add_bias(q, lp.bq);
        matmul(ln1_out, lp.wk, knew);
        add_bias(knew, lp.bk);
        matmul(ln1_out, lp.wv, vnew);
        add_bias(vnew, lp.bv);
        Mat<T>& kc = cache.k[static_cast<std::size_t>(l)];
        Mat<T>& vc = cache.v[static_cast<std::size_t>(l)];
        for (int i = 0; i < count; ++i) {
            std::copy(knew.row(i), knew.row(i) + h.dim, kc.row(base + i));
            std::copy(vnew.row(i), vnew.row(i) + h.dim, vc.row(base + i));
        }

        Mat<T> att_out(count, h.dim);
        std::vector<T> w(static_cast<std::size_t>(base + count));
        for (int head = 0; head < h.heads; ++head) {
            const int off = head * dk;
            for (int i = 0; i < count; ++i) {
                const int limit = bidirectional ? base + count : base + i + 1;
                const T* qi = q.row(i) + off;
                T max_s = -std::numeric_limits<T>::infinity();
                for (int j = 0; j < limit; ++j) {
                    const T* kj = kc.row(j) + off;
                    T s = T(0);
                    for (int t = 0; t < dk; ++t) s += qi[t] * kj[t];
                    s *= scale;
                    w[static_cast<std::size_t>(j)] = s;
                    if (s > max_s) max_s = s;
                }
                T denom = T(0);
                for (int j = 0; j < limit; ++j) {
                    T e = static_cast<T>(std::exp(static_cast<double>(w[static_cast<std::size_t>(j)] - max_s)));
                    w[static_cast<std::size_t>(j)] = e;
                    denom += e;
                }
                T inv = T(1) / denom;
                T* orow = att_out.row(i) + off;
                for (int j = 0; j < limit; ++j) {
                    T wj = w[static_cast<std::size_t>(j)] * inv;
                    const T* vj = vc.row(j) + off;
                    for (int t = 0; t < dk; ++t) orow[t] += wj * vj[t];
                }
            }
        }

        Mat<T> att_proj;
        matmul(att_out, lp.wo, att_proj);
        add_bias(att_proj, lp.bo);
        for (std::size_t idx = 0; idx < x.a.size(); ++idx) x.a[idx] += att_proj.a[idx];

        Mat<T> ln2_out;
        layer_norm(x, lp.ln2_g, lp.ln2_b, xhat, rstd, ln2_out);
        Mat<T> pre;
        matmul(ln2_out, lp.w1, pre);
        add_bias(pre, lp.b1);
        for (T& v : pre.a) v = static_cast<T>(uvlm::detail::gelu(static_cast<double>(v)));
        Mat<T> ffn_out;
        matmul(pre, lp.w2, ffn_out);
        add_bias(ffn_out, lp.b2);
        for (std::size_t idx = 0; idx < x.a.size(); ++idx) x.a[idx] += ffn_out.a[idx];
    }
    cache.len += count;

    Mat<T> xhat;
    std::vector<T> rstd;
    Mat<T> lnf_out;
    uvlm::detail::layer_norm(x, p.lnf_g, p.lnf_b, xhat, rstd, lnf_out);
    Mat<T> logits;
    uvlm::detail::matmul(lnf_out, p.out_proj, logits);
    uvlm::detail::add_bias(logits, p.out_bias);
    return logits;
}

template <typename T>
std::vector<double> log_softmax_row(const Mat<T>& logits, int row) {
    std::vector<double> out(static_cast<std::size_t>(logits.cols));
    const T* r = logits.row(row);
    double max_l = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < logits.cols; ++j) max_l = std::max(max_l, static_cast<double>(r[j]));
    double denom = 0.0;
    for (int j = 0; j < logits.cols; ++j) denom += std::exp(static_cast<double>(r[j]) - max_l);
    double log_denom = std::log(denom) + max_l;
    for (int j = 0; j < logits.cols; ++j) out[static_cast<std::size_t>(j)] = static_cast<double>(r[j]) - log_denom;
    return out;
}

}  // namespace detail

// Processes the vision prefix plus [SEP]; returns the next-token
// log-probabilities at the [SEP] position.
template <typename T>
std::vector<double> prefill(const ModelParams<T>& p, const std::vector<std::vector<float>>& patches,
                            int sep_id, KvCache<T>& cache) {
    const Hyper& h = p.hyper;
    const int m = static_cast<int>(patches.size());
    if (m + 1 > h.max_len) throw SequenceTooLong("vision prefix exceeds max_len");
    Mat<T> x(m + 1, h.dim);
    for (int i = 0; i < m; ++i) {
        T* row = x.row(i);
        const T* bias = p.patch_bias.row(0);
        const T* pos = p.pos_embed.row(i);
        for (int j = 0; j < h.dim; ++j) row[j] = bias[j] + pos[j];
        const std::vector<float>& patch = patches[static_cast<std::size_t>(i)];
        for (int t = 0; t < h.patch_dim; ++t) {
            T v = static_cast<T>(patch[static_cast<std::size_t>(t)]);
            if (v == T(0)) continue;
            const T* w = p.patch_proj.row(t);
            for (int j = 0; j < h.dim; ++j) row[j] += v * w[j];
        }
    }
    T* sep_row = x.row(m);
    const T* emb = p.tok_embed.row(sep_id);
    const T* pos = p.pos_embed.row(m);
    for (int j = 0; j < h.dim; ++j) sep_row[j] = emb[j] + pos[j];

    Mat<T> logits = detail::run_stack(p, cache, std::move(x), /*bidirectional=*/true);
    return detail::log_softmax_row(logits, logits.rows - 1);
}

// Feeds one language token; returns next-token log-probabilities.
template <typename T>
std::vector<double> decode_step(const ModelParams<T>& p, KvCache<T>& cache, int token_id) {
    const Hyper& h = p.hyper;
    if (cache.len + 1 > h.max_len) throw SequenceTooLong("decode exceeded max_len");
    Mat<T> x(1, h.dim);
    T* row = x.row(0);
    const T* emb = p.tok_embed.row(token_id);
    const T* pos = p.pos_embed.row(cache.len);
    for (int j = 0; j < h.dim; ++j) row[j] = emb[j] + pos[j];
    Mat<T> logits = detail::run_stack(p, cache, std::move(x), /*bidirectional=*/false);
    return detail::log_softmax_row(logits, 0);
}

template <typename T>
DecodeResult greedy_decode(const ModelParams<T>& p, const std::vector<std::vector<float>>& patches,
                           const tok::Vocab& vocab, int max_new_tokens) {
    KvCache<T> cache(p.hyper);
    std::vector<double> lp = prefill(p, patches, vocab.sep_id(), cache);
    DecodeResult result;
    for (int step = 0; step < max_new_tokens; ++step) {
        int best = 0;
        for (int j = 1; j < static_cast<int>(lp.size()); ++j) {
            if (lp[static_cast<std::size_t>(j)] > lp[static_cast<std::size_t>(best)]) best = j;
        }
        result.log_prob += lp[static_cast<std::size_t>(best)];
        if (best == vocab.eos_id()) break;
        result.ids.push_back(best);
        if (cache.len + 1 > p.hyper.max_len) break;
        lp = decode_step(p, cache, best);
    }
    result.text = tok::decode_text(result.ids, vocab);
    result.score = result.log_prob;
    return result;
}

// Beam search over language tokens, starting after [SEP]; beams finish at
// [EOS] or the token cap, and the best finished beam under the
// length-normalized log-probability wins.
template <typename T>
DecodeResult decode(const ModelParams<T>& p, const std::vector<std::vector<float>>& patches,
                    const tok::Vocab& vocab, const DecodeConfig& cfg) {
    struct Beam {
        KvCache<T> cache;
        std::vector<int> ids;
        double log_prob = 0.0;
        std::vector<double> next_lp;
    };

    KvCache<T> root(p.hyper);
    std::vector<double> root_lp = prefill(p, patches, vocab.sep_id(), root);

    std::vector<Beam> live;
    live.push_back(Beam{std::move(root), {}, 0.0, std::move(root_lp)});
    struct Finished {
        std::vector<int> ids;
        double log_prob;
        int decisions;
    };
    std::vector<Finished> finished;

    for (int step = 0; step < cfg.max_new_tokens && !live.empty(); ++step) {
        struct Cand {
            int beam;
            int token;
            double log_prob;
        };
        std::vector<Cand> cands;
        cands.reserve(live.size() * static_cast<std::size_t>(p.hyper.vocab));
        for (std::size_t b = 0; b < live.size(); ++b) {
            for (int j = 0; j < p.hyper.vocab; ++j) {
                cands.push_back(Cand{static_cast<int>(b), j,
                                     live[b].log_prob + live[b].next_lp[static_cast<std::size_t>(j)]});
            }
        }
        const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(cfg.beam_width), cands.size());
        std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                          [](const Cand& a, const Cand& b) {
                              if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                              if (a.token != b.token) return a.token < b.token;
                              return a.beam < b.beam;
                          });

        std::vector<Beam> next;
        for (std::size_t c = 0; c < keep; ++c) {
            const Cand& cand = cands[c];
            Beam& src = live[static_cast<std::size_t>(cand.beam)];
            if (cand.token == vocab.eos_id()) {
                finished.push_back(Finished{src.ids, cand.log_prob,
                                            static_cast<int>(src.ids.size()) + 1});
                continue;
            }
            Beam nb{src.cache, src.ids, cand.log_prob, {}};
            nb.ids.push_back(cand.token);
            if (nb.cache.len + 1 > p.hyper.max_len) {
                finished.push_back(Finished{nb.ids, nb.log_prob, static_cast<int>(nb.ids.size())});
                continue;
            }
            nb.next_lp = decode_step(p, nb.cache, cand.token);
            next.push_back(std::move(nb));
        }
        live = std::move(next);
    }
    for (Beam& b : live) {
        finished.push_back(Finished{std::move(b.ids), b.log_prob, static_cast<int>(b.ids.size())});
    }

    auto score_of = [&cfg](const Finished& f) {
        return f.log_prob / std::pow(std::max(1, f.decisions), cfg.length_norm);
    };
    std::size_t best = 0;
    for (std::size_t i = 1; i < finished.size(); ++i) {
        if (score_of(finished[i]) > score_of(finished[best])) best = i;
    }
    DecodeResult result;
    result.ids = finished[best].ids;
    result.log_prob = finished[best].log_prob;
    result.score = score_of(finished[best]);
    result.text = tok::decode_text(result.ids, vocab);
    return result;
}

}  // namespace blockspot::uvlm
