#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "blockspot/dataset_io.hpp"

namespace blockspot::io {

namespace {

RasterImage load_ppm(std::ifstream& in, const std::string& path) {
    auto next_token = [&in]() {
        std::string tok;
        // P6 headers allow '#' comments between fields.
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        return std::string();
    };
    std::string magic = next_token();
    int w = std::stoi(next_token());
    int h = std::stoi(next_token());
    int maxval = std::stoi(next_token());
    if (magic != "P6" || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
        throw ImageError("unsupported PPM header in " + path);
    }
    in.get();  // single whitespace after maxval
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!in) throw ImageError("truncated PPM payload in " + path);
    RasterImage img(w, h, 3);
    for (std::size_t i = 0; i < raw.size(); ++i) {
        img.data[i] = static_cast<float>(raw[i]) / static_cast<float>(maxval);
    }
    return img;
}

struct PngReadCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngReadCloser() {
        if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
        if (fp) std::fclose(fp);
    }
};

RasterImage load_png_file(const std::string& path) {
    PngReadCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "rb");
    if (!ctx.fp) throw MissingImage("cannot open image: " + path);
    ctx.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw ImageError("png_create_read_struct failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw ImageError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw ImageError("failed to decode PNG: " + path);

    png_init_io(ctx.png, ctx.fp);
    png_read_info(ctx.png, ctx.info);

    png_uint_32 w = png_get_image_width(ctx.png, ctx.info);
    png_uint_32 h = png_get_image_height(ctx.png, ctx.info);
    png_byte color = png_get_color_type(ctx.png, ctx.info);
    png_byte depth = png_get_bit_depth(ctx.png, ctx.info);

    if (depth == 16) png_set_strip_16(ctx.png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(ctx.png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(ctx.png);
    if (png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(ctx.png);
    if (color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_GRAY_ALPHA ||
        png_get_valid(ctx.png, ctx.info, PNG_INFO_tRNS)) {
        png_set_strip_alpha(ctx.png);
    }
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        png_set_gray_to_rgb(ctx.png);
    }
    png_read_update_info(ctx.png, ctx.info);

    std::vector<png_byte> row(png_get_rowbytes(ctx.png, ctx.info));
    RasterImage img(static_cast<int>(w), static_cast<int>(h), 3);
    for (png_uint_32 y = 0; y < h; ++y) {
        png_read_row(ctx.png, row.data(), nullptr);
        for (png_uint_32 x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                img.at(static_cast<int>(y), static_cast<int>(x), c) =
                    static_cast<float>(row[x * 3 + c]) / 255.0f;
            }
        }
    }
    return img;
}

}  // namespace

RasterImage load_image(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw MissingImage("cannot open image: " + path);
    char magic[2] = {0, 0};
    in.read(magic, 2);
    if (magic[0] == 'P' && magic[1] == '6') {
        in.seekg(0);
        return load_ppm(in, path);
    }
    in.close();
    return load_png_file(path);
}

namespace {

struct PngWriteCloser {
    png_structp png = nullptr;
    png_infop info = nullptr;
    FILE* fp = nullptr;
    ~PngWriteCloser() {
        if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
        if (fp) std::fclose(fp);
    }
};

}  // namespace

void save_png(const RasterImage& img, const std::string& path) {
    if (img.empty() || (img.channels != 1 && img.channels != 3)) {
        throw ImageError("cannot write empty or non-1/3-channel image");
    }
    PngWriteCloser ctx;
    ctx.fp = std::fopen(path.c_str(), "wb");
    if (!ctx.fp) throw ImageError("cannot open for writing: " + path);
    ctx.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!ctx.png) throw ImageError("png_create_write_struct failed");
    ctx.info = png_create_info_struct(ctx.png);
    if (!ctx.info) throw ImageError("png_create_info_struct failed");
    if (setjmp(png_jmpbuf(ctx.png))) throw ImageError("failed to encode PNG: " + path);

    png_init_io(ctx.png, ctx.fp);
    png_set_IHDR(ctx.png, ctx.info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(ctx.png, ctx.info);

    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                float v = img.at(y, x, c);
                v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                row[static_cast<std::size_t>(x) * img.channels + c] =
                    static_cast<png_byte>(v * 255.0f + 0.5f);
            }
        }
        png_write_row(ctx.png, row.data());
    }
    png_write_end(ctx.png, nullptr);
}

}  // namespace blockspot::io
