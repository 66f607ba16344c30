#pragma once

#include <cstdint>
#include <vector>

#include "blockspot/image.hpp"
#include "blockspot/tokenizer.hpp"
#include "blockspot/uvlm/model.hpp"

namespace blockspot::toy {

// Keeps only the top pixel rows; used to drop the always-blank lower canvas
// before patching so the toy's sequence length tracks its content.
RasterImage crop_top(const RasterImage& img, int rows_px);

// Deterministic synthetic training corpus: sample i comes from
// synth_sample(seed*1000003 + i), cropped to crop_rows glyph rows (0 = full)
// and tokenized against the vocab.
std::vector<uvlm::SampleTokens> build_corpus(int samples, std::uint64_t seed,
                                             const tok::Vocab& vocab, int crop_rows);

}  // namespace blockspot::toy
