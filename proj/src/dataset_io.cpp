#include "blockspot/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "blockspot/rng.hpp"
#include "blockspot/tokenizer.hpp"
#include "json.hpp"

namespace blockspot::io {

using nlohmann::json;

namespace {

std::vector<geometry::Point> parse_polygon(const json& j, const char* field) {
    if (!j.is_array() || j.size() < 3) {
        throw SchemaError(std::string(field) + " must be an array of at least 3 [x,y] pairs");
    }
    std::vector<geometry::Point> pts;
    pts.reserve(j.size());
    for (const json& v : j) {
        if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
            throw SchemaError(std::string(field) + " vertex must be a [x,y] number pair");
        }
        pts.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    return pts;
}

json polygon_json(const std::vector<geometry::Point>& pts) {
    json arr = json::array();
    for (const geometry::Point& p : pts) arr.push_back(json::array({p.x, p.y}));
    return arr;
}

}  // namespace

AnnotationRecord parse_record(const std::string& json_line) {
    json j;
    try {
        j = json::parse(json_line);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw SchemaError("record must be a JSON object");
    AnnotationRecord rec;
    try {
        rec.image = j.at("image").get<std::string>();
        rec.width = j.at("width").get<int>();
        rec.height = j.at("height").get<int>();
        if (rec.width <= 0 || rec.height <= 0) throw SchemaError("width/height must be > 0");
        const json& insts = j.at("instances");
        if (!insts.is_array()) throw SchemaError("instances must be an array");
        for (const json& inst : insts) {
            InstanceRecord ir;
            ir.polygon = parse_polygon(inst.at("polygon"), "instance polygon");
            ir.text = inst.at("text").get<std::string>();
            ir.ignore = inst.value("ignore", false);
            if (ir.text.empty() && !ir.ignore) {
                throw SchemaError("instance text may be empty only when ignore is set");
            }
            // Clamp vertices into the image, per the record invariant.
            for (geometry::Point& p : ir.polygon) {
                p.x = std::clamp(p.x, 0.0, static_cast<double>(rec.width));
                p.y = std::clamp(p.y, 0.0, static_cast<double>(rec.height));
            }
            rec.instances.push_back(std::move(ir));
        }
        if (j.contains("blocks")) {
            std::vector<BlockRecord> blocks;
            for (const json& b : j.at("blocks")) {
                BlockRecord br;
                br.polygon = parse_polygon(b.at("polygon"), "block polygon");
                br.members = b.at("members").get<std::vector<int>>();
                br.text = b.at("text").get<std::string>();
                for (int m : br.members) {
                    if (m < 0 || m >= static_cast<int>(rec.instances.size())) {
                        throw SchemaError("block member index out of range: " + std::to_string(m));
                    }
                }
                blocks.push_back(std::move(br));
            }
            rec.blocks = std::move(blocks);
        }
    } catch (const json::exception& e) {
        throw SchemaError(std::string("record schema violation: ") + e.what());
    }
    return rec;
}

std::string format_record(const AnnotationRecord& record) {
    json j;
    j["image"] = record.image;
    j["width"] = record.width;
    j["height"] = record.height;
    json insts = json::array();
    for (const InstanceRecord& ir : record.instances) {
        json inst;
        inst["polygon"] = polygon_json(ir.polygon);
        inst["text"] = ir.text;
        inst["ignore"] = ir.ignore;
        insts.push_back(std::move(inst));
    }
    j["instances"] = std::move(insts);
    if (record.blocks) {
        json blocks = json::array();
        for (const BlockRecord& br : *record.blocks) {
            json b;
            b["polygon"] = polygon_json(br.polygon);
            b["members"] = br.members;
            b["text"] = br.text;
            blocks.push_back(std::move(b));
        }
        j["blocks"] = std::move(blocks);
    }
    return j.dump();
}

std::vector<AnnotationRecord> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open annotation file: " + path);
    std::vector<AnnotationRecord> records;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            records.push_back(parse_record(line));
        } catch (const SchemaError& e) {
            throw SchemaError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return records;
}

void save_annotations(const std::vector<AnnotationRecord>& records, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot open for writing: " + path);
    for (const AnnotationRecord& rec : records) {
        out << format_record(rec) << '\n';
    }
}

RasterImage crop_axis_aligned(const RasterImage& image, const geometry::Polygon& polygon) {
    double min_x, min_y, max_x, max_y;
    polygon.bounds(min_x, min_y, max_x, max_y);
    int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
    int y0 = std::max(0, static_cast<int>(std::floor(min_y)));
    int x1 = std::min(image.width, static_cast<int>(std::ceil(max_x)));
    int y1 = std::min(image.height, static_cast<int>(std::ceil(max_y)));
    if (x0 >= x1 || y0 >= y1) {
        throw EmptyIntersection("polygon does not overlap the image");
    }
    RasterImage crop(x1 - x0, y1 - y0, image.channels);
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            for (int c = 0; c < image.channels; ++c) {
                crop.at(y - y0, x - x0, c) = image.at(y, x, c);
            }
        }
    }
    return crop;
}

RasterImage crop_block(const RasterImage& image, const geometry::Polygon& polygon) {
    double min_x, min_y, max_x, max_y;
    polygon.bounds(min_x, min_y, max_x, max_y);
    int x0 = std::max(0, static_cast<int>(std::floor(min_x)));
    int y0 = std::max(0, static_cast<int>(std::floor(min_y)));

    RasterImage crop = crop_axis_aligned(image, polygon);

    // Mean color over the crop's 1-pixel border ring.
    std::vector<double> border(static_cast<std::size_t>(crop.channels), 0.0);
    int count = 0;
    for (int y = 0; y < crop.height; ++y) {
        for (int x = 0; x < crop.width; ++x) {
            if (y != 0 && y != crop.height - 1 && x != 0 && x != crop.width - 1) continue;
            for (int c = 0; c < crop.channels; ++c) border[static_cast<std::size_t>(c)] += crop.at(y, x, c);
            ++count;
        }
    }
    for (double& v : border) v /= std::max(1, count);

    for (int y = 0; y < crop.height; ++y) {
        for (int x = 0; x < crop.width; ++x) {
            geometry::Point px{x0 + x + 0.5, y0 + y + 0.5};
            if (!polygon.contains(px)) {
                for (int c = 0; c < crop.channels; ++c) {
                    crop.at(y, x, c) = static_cast<float>(border[static_cast<std::size_t>(c)]);
                }
            }
        }
    }
    return tok::resize(crop, kCropHeight, kCropWidth);
}

std::vector<float> glyph_bitmap(char c) {
    // 64 pixels drawn from a generator seeded by the character code; fixed
    // forever for a given character.
    Rng rng(0x9E3779B97F4A7C15ull ^ (static_cast<std::uint64_t>(static_cast<unsigned char>(c)) * 0x100000001B3ull));
    std::vector<float> bits(kGlyphSize * kGlyphSize);
    for (float& b : bits) b = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    return bits;
}

SynthSample synth_sample(std::uint64_t seed) {
    Rng rng(seed * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);

    static const std::string charset = [] {
        std::string s;
        for (char c = 'A'; c <= 'Z'; ++c) s.push_back(c);
        for (char c = '0'; c <= '9'; ++c) s.push_back(c);
        return s;
    }();

    int n_words = rng.uniform_int(1, 5);
    std::string text;
    for (int w = 0; w < n_words; ++w) {
        if (w > 0) text.push_back(' ');
        int len = rng.uniform_int(1, 8);
        for (int k = 0; k < len; ++k) {
            text.push_back(charset[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(charset.size()) - 1))]);
        }
    }

    // Per-sample glyph color: the on/off bitmap per character is fixed, the
    // rendering intensity varies continuously with the seed, so equal texts
    // from different seeds still yield distinct images.
    float color[3];
    for (float& c : color) c = static_cast<float>(rng.uniform(0.5, 1.0));

    SynthSample sample;
    sample.text = text;
    sample.image = RasterImage(kCropWidth, kCropHeight, 3, 0.0f);
    const int cols = kCropWidth / kGlyphSize;
    for (std::size_t k = 0; k < text.size(); ++k) {
        int cell_row = static_cast<int>(k) / cols;
        int cell_col = static_cast<int>(k) % cols;
        std::vector<float> bits = glyph_bitmap(text[k]);
        for (int y = 0; y < kGlyphSize; ++y) {
            for (int x = 0; x < kGlyphSize; ++x) {
                float v = bits[static_cast<std::size_t>(y) * kGlyphSize + x];
                for (int c = 0; c < 3; ++c) {
                    sample.image.at(cell_row * kGlyphSize + y, cell_col * kGlyphSize + x, c) =
                        v * color[c];
                }
            }
        }
    }
    return sample;
}

std::vector<std::vector<geometry::Point>> synth_word_boxes(const std::string& text) {
    std::vector<std::vector<geometry::Point>> boxes;
    const int cols = kCropWidth / kGlyphSize;
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == ' ') {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < text.size() && text[j] != ' ') ++j;
        int r0 = static_cast<int>(i) / cols, r1 = static_cast<int>(j - 1) / cols;
        int c0, c1;
        if (r0 == r1) {
            c0 = static_cast<int>(i) % cols;
            c1 = static_cast<int>(j - 1) % cols;
        } else {
            // Word wrapped across cell rows; box spans the full row width.
            c0 = 0;
            c1 = cols - 1;
        }
        double x0 = c0 * kGlyphSize, x1 = (c1 + 1) * kGlyphSize;
        double y0 = r0 * kGlyphSize, y1 = (r1 + 1) * kGlyphSize;
        boxes.push_back({{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}});
        i = j;
    }
    return boxes;
}

}  // namespace blockspot::io
