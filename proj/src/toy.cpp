#include "blockspot/toy.hpp"

#include <algorithm>

#include "blockspot/dataset_io.hpp"
#include "blockspot/parallel.hpp"

namespace blockspot::toy {

RasterImage crop_top(const RasterImage& img, int rows_px) {
    if (rows_px <= 0 || rows_px >= img.height) return img;
    RasterImage out(img.width, rows_px, img.channels);
    std::copy(img.data.begin(),
              img.data.begin() + static_cast<std::ptrdiff_t>(out.data.size()), out.data.begin());
    return out;
}

std::vector<uvlm::SampleTokens> build_corpus(int samples, std::uint64_t seed,
                                             const tok::Vocab& vocab, int crop_rows) {
    std::vector<uvlm::SampleTokens> data(static_cast<std::size_t>(samples));
    parallel_for(samples, [&](int i) {
        io::SynthSample s = io::synth_sample(seed * 1000003ull + static_cast<std::uint64_t>(i));
        uvlm::SampleTokens tokens;
        RasterImage img = crop_top(s.image, crop_rows * io::kGlyphSize);
        tok::PatchGrid grid = tok::patch_image(img, io::kGlyphSize, io::kGlyphSize);
        tokens.patches = std::move(grid.patches);
        tokens.lang = tok::encode_text(s.text, vocab);
        data[static_cast<std::size_t>(i)] = std::move(tokens);
    });
    return data;
}

}  // namespace blockspot::toy
