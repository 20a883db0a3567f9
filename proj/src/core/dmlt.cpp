#include "dmlt.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "error.hpp"

namespace sp {

namespace {

void put_u32(std::string& buf, uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void dmlt_write(const std::string& path, const DmltTensor& t) {
    if (t.element_count() != t.data.size())
        fail(ErrorCode::invalid_argument, "dmlt: dims do not match payload size");
    std::string buf;
    buf.reserve(8 + 4 * t.dims.size() + 4 * t.data.size());
    buf.append("DMLT", 4);
    put_u32(buf, static_cast<uint32_t>(t.dims.size()));
    for (uint32_t d : t.dims) put_u32(buf, d);
    for (float f : t.data) {
        uint32_t bits = std::bit_cast<uint32_t>(f);
        put_u32(buf, bits);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, "dmlt: cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) fail(ErrorCode::io, "dmlt: write failed: " + path);
}

DmltTensor dmlt_read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, "dmlt: cannot open: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data());
    if (buf.size() < 8 || std::memcmp(p, "DMLT", 4) != 0)
        fail(ErrorCode::io, "dmlt: bad magic in " + path);
    uint32_t ndim = get_u32(p + 4);
    size_t off = 8;
    if (buf.size() < off + 4 * ndim) fail(ErrorCode::io, "dmlt: truncated header in " + path);
    DmltTensor t;
    size_t n = 1;
    for (uint32_t i = 0; i < ndim; i++) {
        uint32_t d = get_u32(p + off);
        off += 4;
        t.dims.push_back(d);
        n *= d;
    }
    if (ndim == 0) n = 0;
    if (buf.size() != off + 4 * n) fail(ErrorCode::io, "dmlt: payload size mismatch in " + path);
    t.data.resize(n);
    for (size_t i = 0; i < n; i++) {
        t.data[i] = std::bit_cast<float>(get_u32(p + off + 4 * i));
    }
    return t;
}

DmltTensor to_dmlt(const LatentGrid& z) {
    DmltTensor t;
    t.dims = {static_cast<uint32_t>(z.h), static_cast<uint32_t>(z.w), static_cast<uint32_t>(z.c)};
    t.data = z.data;
    return t;
}

DmltTensor to_dmlt(const ImageGrid& img) {
    DmltTensor t;
    t.dims = {static_cast<uint32_t>(img.h), static_cast<uint32_t>(img.w), static_cast<uint32_t>(img.c)};
    t.data = img.data;
    return t;
}

LatentGrid latent_from_dmlt(const DmltTensor& t) {
    if (t.dims.size() != 3) fail(ErrorCode::io, "dmlt: latent tensor must have 3 dims");
    LatentGrid z(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
    z.data = t.data;
    return z;
}

ImageGrid image_from_dmlt(const DmltTensor& t) {
    if (t.dims.size() != 3) fail(ErrorCode::io, "dmlt: image tensor must have 3 dims");
    ImageGrid img(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]), static_cast<int>(t.dims[2]));
    img.data = t.data;
    return img;
}

}  // namespace sp
