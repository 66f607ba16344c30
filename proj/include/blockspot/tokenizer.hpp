#pragma once

#include <string>
#include <vector>

#include "blockspot/errors.hpp"
#include "blockspot/image.hpp"

namespace blockspot::tok {

struct IndivisibleDims : InputError {
    using InputError::InputError;
};
struct UnknownSymbol : InputError {
    using InputError::InputError;
};
struct UnknownId : InputError {
    using InputError::InputError;
};

// Non-overlapping raster-order patches, each flattened channel-last.
struct PatchGrid {
    int rows = 0;           // H / Hp
    int cols = 0;           // W / Wp
    int patch_h = 0;
    int patch_w = 0;
    int channels = 0;
    std::vector<std::vector<float>> patches;  // m = rows*cols entries

    int count() const { return rows * cols; }
    int patch_dim() const { return patch_h * patch_w * channels; }
};

PatchGrid patch_image(const RasterImage& img, int patch_h, int patch_w);

// Inverse of patch_image; exact reconstruction.
RasterImage unpatch(const PatchGrid& grid);

// Bilinear resize with half-pixel centers. Identity dims return the input
// bit-for-bit.
RasterImage resize(const RasterImage& img, int out_h, int out_w);

class Vocab {
  public:
    static constexpr const char* kPad = "[PAD]";
    static constexpr const char* kSep = "[SEP]";
    static constexpr const char* kEos = "[EOS]";

    // Specials first, then the given characters, ids dense from 0.
    static Vocab for_characters(const std::string& chars);
    // Uppercase A-Z, digits, space.
    static Vocab toy_default();
    static Vocab from_symbols(std::vector<std::string> symbols);

    int size() const { return static_cast<int>(symbols_.size()); }
    int pad_id() const { return pad_id_; }
    int sep_id() const { return sep_id_; }
    int eos_id() const { return eos_id_; }
    const std::vector<std::string>& symbols() const { return symbols_; }

    int char_id(char c) const;  // throws UnknownSymbol
    bool has_char(char c) const;

    std::string to_json() const;              // ordered symbol list
    static Vocab from_json(const std::string& text);

  private:
    std::vector<std::string> symbols_;
    int pad_id_ = -1, sep_id_ = -1, eos_id_ = -1;
    std::vector<int> char_to_id_;  // 256 entries, -1 = absent
    void rebuild_index();
};

// Per-character encoding; no specials appended.
std::vector<int> encode_text(const std::string& s, const Vocab& v);
// Inverse; stops at [EOS], skips [PAD]; throws UnknownId on out-of-range or
// other special ids.
std::string decode_text(const std::vector<int>& ids, const Vocab& v);

// Visual patches + language token ids with the [SEP]/[EOS] layout contract.
struct TokenSequence {
    PatchGrid visual;
    std::vector<int> language;  // token ids, no [SEP], no trailing [EOS]
    int prefix_len() const { return visual.count() + 1; }  // v_n: patches + [SEP]
    int total_len() const { return prefix_len() + static_cast<int>(language.size()); }
};

}  // namespace blockspot::tok
