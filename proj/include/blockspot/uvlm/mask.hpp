#pragma once

#include <cstdint>
#include <vector>

#include "blockspot/errors.hpp"

namespace blockspot::uvlm {

struct InvalidPrefix : InputError {
    using InputError::InputError;
};
struct ShapeMismatch : InputError {
    using InputError::InputError;
};

// Binary N x N attention mask; bit (i,j) = 1 means query i may attend key j.
struct AttentionMask {
    int n = 0;
    int prefix_len = 0;  // v_n: vision tokens + [SEP]; 0 for the pure causal mask
    std::vector<std::uint8_t> bits;

    bool at(int i, int j) const { return bits[static_cast<std::size_t>(i) * n + j] != 0; }

    // Largest attended key index + 1 per row when the mask is a contiguous
    // key prefix per row (all three standard masks are); empty otherwise.
    std::vector<int> row_limits() const;
};

// All-ones bidirectional mask.
AttentionMask visual_mask(int n);

// Lower-triangular causal mask: bit (i,j) = 1 iff j <= i.
AttentionMask causal_mask(int n);

// Prefix-LM mask: queries i < v_n attend exactly to keys j < v_n; queries
// i >= v_n attend to the prefix and causally within the language tail.
// Indices 0-based, v_n counts prefix positions (1 <= v_n <= total).
AttentionMask unified_mask(int v_n, int total);

using MatD = std::vector<std::vector<double>>;

// Softmax((Q K^T)/sqrt(d) + bias) V with bias 0/-inf from the mask. Rows of
// Q are queries; K and V share row count. Masked weights are exactly zero.
MatD masked_attention(const MatD& q, const MatD& k, const MatD& v, const AttentionMask& mask,
                      int d);

// The softmax weight matrix of masked_attention; exposed for property tests.
MatD masked_attention_weights(const MatD& q, const MatD& k, const AttentionMask& mask, int d);

}  // namespace blockspot::uvlm
