#ifndef SP_DMLT_HPP
#define SP_DMLT_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "types.hpp"

namespace sp {

// "DMLT" tensor container: magic bytes "DMLT", u32 ndim, u32 dims[ndim],
// then the row-major payload as little-endian f32.
struct DmltTensor {
    std::vector<uint32_t> dims;
    std::vector<float> data;

    size_t element_count() const {
        size_t n = 1;
        for (uint32_t d : dims) n *= d;
        return dims.empty() ? 0 : n;
    }
};

void dmlt_write(const std::string& path, const DmltTensor& t);
DmltTensor dmlt_read(const std::string& path);

DmltTensor to_dmlt(const LatentGrid& z);
DmltTensor to_dmlt(const ImageGrid& img);
LatentGrid latent_from_dmlt(const DmltTensor& t);
ImageGrid image_from_dmlt(const DmltTensor& t);

}  // namespace sp

#endif
