#ifndef SP_IMAGE_IO_HPP
#define SP_IMAGE_IO_HPP

#include <string>

#include "types.hpp"

namespace sp {

// 8-bit PNG in/out. Images load as 3-channel RGB in [0,1]; masks load from
// single-channel PNGs (>=128 counts as region) and save as 0/255 gray.
ImageGrid load_image_png(const std::string& path);
void save_image_png(const std::string& path, const ImageGrid& img);

BinaryMask load_mask_png(const std::string& path);
void save_mask_png(const std::string& path, const BinaryMask& mask);

// (height, width) from the header without decoding the pixels
std::pair<int, int> png_dims(const std::string& path);

}  // namespace sp

#endif
