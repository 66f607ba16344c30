#include "blockspot/uvlm/mask.hpp"

#include <cmath>
#include <limits>

namespace blockspot::uvlm {

std::vector<int> AttentionMask::row_limits() const {
    std::vector<int> limits(static_cast<std::size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        int limit = 0;
        while (limit < n && at(i, limit)) ++limit;
        for (int j = limit; j < n; ++j) {
            if (at(i, j)) return {};  // hole: not a contiguous prefix
        }
        limits[static_cast<std::size_t>(i)] = limit;
    }
    return limits;
}

AttentionMask visual_mask(int n) {
    if (n < 1) throw InvalidPrefix("mask size must be >= 1");
    AttentionMask m;
    m.n = n;
    m.prefix_len = n;
    m.bits.assign(static_cast<std::size_t>(n) * n, 1);
    return m;
}

AttentionMask causal_mask(int n) {
    if (n < 1) throw InvalidPrefix("mask size must be >= 1");
    AttentionMask m;
    m.n = n;
    m.prefix_len = 0;
    m.bits.assign(static_cast<std::size_t>(n) * n, 0);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) m.bits[static_cast<std::size_t>(i) * n + j] = 1;
    }
    return m;
}

AttentionMask unified_mask(int v_n, int total) {
    if (v_n < 1 || v_n > total) {
        throw InvalidPrefix("prefix length must satisfy 1 <= v_n <= total");
    }
    AttentionMask m;
    m.n = total;
    m.prefix_len = v_n;
    m.bits.assign(static_cast<std::size_t>(total) * total, 0);
    for (int i = 0; i < total; ++i) {
        int limit = i < v_n ? v_n : i + 1;
        for (int j = 0; j < limit; ++j) m.bits[static_cast<std::size_t>(i) * total + j] = 1;
    }
    return m;
}

MatD masked_attention_weights(const MatD& q, const MatD& k, const AttentionMask& mask, int d) {
    const int nq = static_cast<int>(q.size());
    const int nk = static_cast<int>(k.size());
    if (mask.n != nq || nq != nk) {
        throw ShapeMismatch("mask size must match Q/K row counts");
    }
    for (const auto& row : q) {
        if (static_cast<int>(row.size()) != static_cast<int>(k[0].size())) {
            throw ShapeMismatch("Q and K must share the feature dimension");
        }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    MatD w(static_cast<std::size_t>(nq), std::vector<double>(static_cast<std::size_t>(nk), 0.0));
    for (int i = 0; i < nq; ++i) {
        double max_logit = -std::numeric_limits<double>::infinity();
        std::vector<double> logits(static_cast<std::size_t>(nk), 0.0);
        for (int j = 0; j < nk; ++j) {
            if (!mask.at(i, j)) continue;
            double s = 0.0;
            for (std::size_t t = 0; t < q[static_cast<std::size_t>(i)].size(); ++t) {
                s += q[static_cast<std::size_t>(i)][t] * k[static_cast<std::size_t>(j)][t];
            }
            logits[static_cast<std::size_t>(j)] = s * scale;
            max_logit = std::max(max_logit, logits[static_cast<std::size_t>(j)]);
        }
        double denom = 0.0;
        for (int j = 0; j < nk; ++j) {
            if (!mask.at(i, j)) continue;
            denom += std::exp(logits[static_cast<std::size_t>(j)] - max_logit);
        }
        for (int j = 0; j < nk; ++j) {
            if (!mask.at(i, j)) continue;  // masked weights stay exactly 0
            w[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                std::exp(logits[static_cast<std::size_t>(j)] - max_logit) / denom;
        }
    }
    return w;
}

MatD masked_attention(const MatD& q, const MatD& k, const MatD& v, const AttentionMask& mask,
                      int d) {
    if (k.size() != v.size()) throw ShapeMismatch("K and V must share the row count");
    MatD w = masked_attention_weights(q, k, mask, d);
    const std::size_t dv = v.empty() ? 0 : v[0].size();
    MatD out(q.size(), std::vector<double>(dv, 0.0));
    for (std::size_t i = 0; i < q.size(); ++i) {
        for (std::size_t j = 0; j < v.size(); ++j) {
            double wij = w[i][j];
            if (wij == 0.0) continue;
            for (std::size_t t = 0; t < dv; ++t) out[i][t] += wij * v[j][t];
        }
    }
    return out;
}

}  // namespace blockspot::uvlm
