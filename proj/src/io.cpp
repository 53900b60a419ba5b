#include "mghand/io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "mghand/error.hpp"

namespace mghand::io {

namespace fs = std::filesystem;

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::kIo, "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorCode::kIo, "cannot write '" + tmp.string() + "'");
        out << content;
        if (!out.flush()) fail(ErrorCode::kIo, "write failed for '" + tmp.string() + "'");
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) fail(ErrorCode::kIo, "cannot move '" + tmp.string() + "' into place: " + ec.message());
}

nlohmann::json read_json(const std::string& path) {
    try {
        return nlohmann::json::parse(read_text(path));
    } catch (const nlohmann::json::parse_error& e) {
        fail(ErrorCode::kIo, "malformed JSON in '" + path + "': " + e.what());
    }
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text_atomic(path, j.dump(2) + "\n"); }

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_gray_png(const std::string& path, int width, int height, int bit_depth,
                    const std::vector<std::vector<png_byte>>& rows) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(ErrorCode::kIo, "cannot write '" + path + "'");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::kIo, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorCode::kIo, "libpng error while writing '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (const auto& row : rows) png_write_row(png, row.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

// Returns 8-bit gray rows (1-bit and 16-bit inputs are expanded / stripped).
std::vector<std::vector<png_byte>> read_gray_png(const std::string& path, int& width, int& height) {
    FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(ErrorCode::kIo, "cannot open '" + path + "'");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::kIo, "libpng initialisation failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorCode::kIo, "libpng error while reading '" + path + "'");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    const int depth = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (depth == 16) png_set_strip_16(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);
    width = static_cast<int>(png_get_image_width(png, info));
    height = static_cast<int>(png_get_image_height(png, info));
    const auto rowbytes = png_get_rowbytes(png, info);
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(height), std::vector<png_byte>(rowbytes));
    for (auto& r : rows) png_read_row(png, r.data(), nullptr);
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return rows;
}

}  // namespace

void write_png(const std::string& path, const Image& image) {
    require(image.shape.channels == 1, "write_png: only single-channel images are supported");
    const int h = image.shape.height, w = image.shape.width;
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(h), std::vector<png_byte>(static_cast<std::size_t>(w)));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double v = std::clamp((image.at(0, y, x) + 1.0) / 2.0, 0.0, 1.0);
            rows[y][x] = static_cast<png_byte>(std::lround(v * 255.0));
        }
    }
    write_gray_png(path, w, h, 8, rows);
}

Image read_png(const std::string& path) {
    int w = 0, h = 0;
    const auto rows = read_gray_png(path, w, h);
    Image img = Image::zeros(Shape{1, h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) img.at(0, y, x) = rows[y][x] / 255.0 * 2.0 - 1.0;
    }
    return img;
}

void write_mask_png(const std::string& path, const BinaryGrid& mask) {
    const int packed = (mask.width + 7) / 8;
    std::vector<std::vector<png_byte>> rows(static_cast<std::size_t>(mask.height),
                                            std::vector<png_byte>(static_cast<std::size_t>(packed), 0));
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(y, x)) rows[y][x / 8] |= static_cast<png_byte>(0x80 >> (x % 8));
        }
    }
    write_gray_png(path, mask.width, mask.height, 1, rows);
}

BinaryGrid read_mask_png(const std::string& path) {
    int w = 0, h = 0;
    const auto rows = read_gray_png(path, w, h);
    BinaryGrid g(h, w);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) g.at(y, x) = rows[y][x] >= 128 ? 1 : 0;
    }
    return g;
}

nlohmann::json image_to_json(const Image& image) {
    return {{"shape", {image.shape.channels, image.shape.height, image.shape.width}},
            {"data", std::vector<double>(image.data.data(), image.data.data() + image.data.size())}};
}

Image image_from_json(const nlohmann::json& j) {
    const auto s = j.at("shape").get<std::vector<int>>();
    require(s.size() == 3, "tensor shape must have three entries");
    const auto d = j.at("data").get<std::vector<double>>();
    return Image(Shape{s[0], s[1], s[2]}, Eigen::Map<const Vec>(d.data(), static_cast<Eigen::Index>(d.size())));
}

void write_tensor(const std::string& path, const Image& image) {
    write_text_atomic(path, image_to_json(image).dump() + "\n");
}

Image read_tensor(const std::string& path) { return image_from_json(read_json(path)); }

Image read_sample(const std::string& path) {
    if (path.size() >= 4 && path.compare(path.size() - 4, 4, ".png") == 0) return read_png(path);
    return read_tensor(path);
}

void ensure_directory(const std::string& path) {
    std::error_code ec;
    fs::create_directories(path, ec);
    if (ec) fail(ErrorCode::kIo, "cannot create directory '" + path + "': " + ec.message());
}

}  // namespace mghand::io
