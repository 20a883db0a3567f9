#include "image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "error.hpp"

namespace sp {

namespace {

uint8_t to_u8(float v) {
    float x = std::clamp(v, 0.f, 1.f) * 255.f;
    return static_cast<uint8_t>(std::lround(x));
}

std::vector<uint8_t> read_png_rgb(const std::string& path, int& h, int& w) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        fail(ErrorCode::io, "png: cannot read " + path + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<uint8_t> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        fail(ErrorCode::io, "png: decode failed for " + path + ": " + msg);
    }
    h = static_cast<int>(image.height);
    w = static_cast<int>(image.width);
    return buf;
}

void write_png(const std::string& path, const uint8_t* pixels, int h, int w, bool gray) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    if (!png_image_write_to_file(&image, path.c_str(), 0, pixels, 0, nullptr))
        fail(ErrorCode::io, "png: cannot write " + path + ": " + image.message);
}

}  // namespace

ImageGrid load_image_png(const std::string& path) {
    int h = 0, w = 0;
    std::vector<uint8_t> buf = read_png_rgb(path, h, w);
    ImageGrid img(h, w, 3);
    for (size_t i = 0; i < img.data.size(); i++)
        img.data[i] = static_cast<float>(buf[i]) / 255.f;
    return img;
}

void save_image_png(const std::string& path, const ImageGrid& img) {
    if (img.c != 3 && img.c != 1)
        fail(ErrorCode::invalid_argument, "png: only 1- or 3-channel images can be saved");
    std::vector<uint8_t> buf(static_cast<size_t>(img.h) * img.w * 3);
    size_t k = 0;
    for (int y = 0; y < img.h; y++)
        for (int x = 0; x < img.w; x++)
            for (int ch = 0; ch < 3; ch++)
                buf[k++] = to_u8(img.at(y, x, img.c == 1 ? 0 : ch));
    write_png(path, buf.data(), img.h, img.w, false);
}

BinaryMask load_mask_png(const std::string& path) {
    int h = 0, w = 0;
    std::vector<uint8_t> buf = read_png_rgb(path, h, w);
    BinaryMask m(h, w);
    for (int y = 0; y < h; y++)
        for (int x = 0; x < w; x++)
            m.at(y, x) = buf[(static_cast<size_t>(y) * w + x) * 3] >= 128 ? 1 : 0;
    return m;
}

void save_mask_png(const std::string& path, const BinaryMask& mask) {
    std::vector<uint8_t> buf(static_cast<size_t>(mask.h) * mask.w);
    for (size_t i = 0; i < buf.size(); i++) buf[i] = mask.data[i] ? 255 : 0;
    write_png(path, buf.data(), mask.h, mask.w, true);
}

std::pair<int, int> png_dims(const std::string& path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        fail(ErrorCode::io, "png: cannot read " + path + ": " + image.message);
    int h = static_cast<int>(image.height);
    int w = static_cast<int>(image.width);
    png_image_free(&image);
    return {h, w};
}

}  // namespace sp
