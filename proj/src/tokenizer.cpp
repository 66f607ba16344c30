#include "blockspot/tokenizer.hpp"

#include <algorithm>
#include <cmath>

#include "json.hpp"

namespace blockspot::tok {

PatchGrid patch_image(const RasterImage& img, int patch_h, int patch_w) {
    if (patch_h <= 0 || patch_w <= 0 || img.height % patch_h != 0 || img.width % patch_w != 0) {
        throw IndivisibleDims("patch size " + std::to_string(patch_h) + "x" +
                              std::to_string(patch_w) + " does not divide image " +
                              std::to_string(img.height) + "x" + std::to_string(img.width));
    }
    PatchGrid grid;
    grid.rows = img.height / patch_h;
    grid.cols = img.width / patch_w;
    grid.patch_h = patch_h;
    grid.patch_w = patch_w;
    grid.channels = img.channels;
    grid.patches.reserve(static_cast<std::size_t>(grid.rows) * grid.cols);
    for (int pr = 0; pr < grid.rows; ++pr) {
        for (int pc = 0; pc < grid.cols; ++pc) {
            std::vector<float> patch;
            patch.reserve(static_cast<std::size_t>(grid.patch_dim()));
            for (int y = 0; y < patch_h; ++y) {
                for (int x = 0; x < patch_w; ++x) {
                    for (int c = 0; c < img.channels; ++c) {
                        patch.push_back(img.at(pr * patch_h + y, pc * patch_w + x, c));
                    }
                }
            }
            grid.patches.push_back(std::move(patch));
        }
    }
    return grid;
}

RasterImage unpatch(const PatchGrid& grid) {
    RasterImage img(grid.cols * grid.patch_w, grid.rows * grid.patch_h, grid.channels);
    for (int pr = 0; pr < grid.rows; ++pr) {
        for (int pc = 0; pc < grid.cols; ++pc) {
            const std::vector<float>& patch = grid.patches[static_cast<std::size_t>(pr) * grid.cols + pc];
            std::size_t k = 0;
            for (int y = 0; y < grid.patch_h; ++y) {
                for (int x = 0; x < grid.patch_w; ++x) {
                    for (int c = 0; c < grid.channels; ++c) {
                        img.at(pr * grid.patch_h + y, pc * grid.patch_w + x, c) = patch[k++];
                    }
                }
            }
        }
    }
    return img;
}

RasterImage resize(const RasterImage& img, int out_h, int out_w) {
    if (out_h == img.height && out_w == img.width) return img;
    RasterImage out(out_w, out_h, img.channels);
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double src_y = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(src_y));
        double fy = src_y - y0;
        int y0c = std::clamp(y0, 0, img.height - 1);
        int y1c = std::clamp(y0 + 1, 0, img.height - 1);
        for (int x = 0; x < out_w; ++x) {
            double src_x = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(src_x));
            double fx = src_x - x0;
            int x0c = std::clamp(x0, 0, img.width - 1);
            int x1c = std::clamp(x0 + 1, 0, img.width - 1);
            for (int c = 0; c < img.channels; ++c) {
                double top = (1.0 - fx) * img.at(y0c, x0c, c) + fx * img.at(y0c, x1c, c);
                double bot = (1.0 - fx) * img.at(y1c, x0c, c) + fx * img.at(y1c, x1c, c);
                out.at(y, x, c) = static_cast<float>((1.0 - fy) * top + fy * bot);
            }
        }
    }
    return out;
}

void Vocab::rebuild_index() {
    pad_id_ = sep_id_ = eos_id_ = -1;
    char_to_id_.assign(256, -1);
    for (int i = 0; i < static_cast<int>(symbols_.size()); ++i) {
        const std::string& s = symbols_[static_cast<std::size_t>(i)];
        if (s == kPad) {
            if (pad_id_ >= 0) throw InputError("duplicate [PAD] in vocab");
            pad_id_ = i;
        } else if (s == kSep) {
            if (sep_id_ >= 0) throw InputError("duplicate [SEP] in vocab");
            sep_id_ = i;
        } else if (s == kEos) {
            if (eos_id_ >= 0) throw InputError("duplicate [EOS] in vocab");
            eos_id_ = i;
        } else if (s.size() == 1) {
            unsigned char c = static_cast<unsigned char>(s[0]);
            if (char_to_id_[c] >= 0) throw InputError("duplicate symbol in vocab: " + s);
            char_to_id_[c] = i;
        } else {
            throw InputError("vocab symbol must be a single character or a special: " + s);
        }
    }
    if (pad_id_ < 0 || sep_id_ < 0 || eos_id_ < 0) {
        throw InputError("vocab must contain [PAD], [SEP] and [EOS] exactly once");
    }
}

Vocab Vocab::for_characters(const std::string& chars) {
    Vocab v;
    v.symbols_ = {kPad, kSep, kEos};
    for (char c : chars) v.symbols_.emplace_back(1, c);
    v.rebuild_index();
    return v;
}

Vocab Vocab::toy_default() {
    std::string chars;
    for (char c = 'A'; c <= 'Z'; ++c) chars.push_back(c);
    for (char c = '0'; c <= '9'; ++c) chars.push_back(c);
    chars.push_back(' ');
    return for_characters(chars);
}

Vocab Vocab::from_symbols(std::vector<std::string> symbols) {
    Vocab v;
    v.symbols_ = std::move(symbols);
    v.rebuild_index();
    return v;
}

int Vocab::char_id(char c) const {
    int id = char_to_id_[static_cast<unsigned char>(c)];
    if (id < 0) throw UnknownSymbol(std::string("character not in vocab: '") + c + "'");
    return id;
}

bool Vocab::has_char(char c) const { return char_to_id_[static_cast<unsigned char>(c)] >= 0; }

std::string Vocab::to_json() const {
    nlohmann::json j = symbols_;
    return j.dump();
}

Vocab Vocab::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    if (!j.is_array()) throw InputError("vocab JSON must be an array of symbols");
    return from_symbols(j.get<std::vector<std::string>>());
}

std::vector<int> encode_text(const std::string& s, const Vocab& v) {
    std::vector<int> ids;
    ids.reserve(s.size());
    for (char c : s) ids.push_back(v.char_id(c));
    return ids;
}

std::string decode_text(const std::vector<int>& ids, const Vocab& v) {
    std::string out;
    for (int id : ids) {
        if (id == v.eos_id()) break;
        if (id == v.pad_id()) continue;
        if (id < 0 || id >= v.size() || id == v.sep_id()) {
            throw UnknownId("token id not decodable: " + std::to_string(id));
        }
        out += v.symbols()[static_cast<std::size_t>(id)];
    }
    return out;
}

}  // namespace blockspot::tok
