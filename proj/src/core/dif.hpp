#ifndef SP_DIF_HPP
#define SP_DIF_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "backbone.hpp"
#include "types.hpp"

namespace sp {
namespace dif {

// where a cropped patch came from and how to put it back
struct Placement {
    Box box;
    int frame_h = 0, frame_w = 0;
    int patch_h = 0, patch_w = 0;

    double scale_x() const { return static_cast<double>(patch_w) / box.w; }
    double scale_y() const { return static_cast<double>(patch_h) / box.h; }
};

Box mask_bbox(const BinaryMask& mask);  // empty-mask error when no pixel is set

// solid rectangle: bbox of mask padded on each side by ratio * max(side),
// clipped to the frame
BinaryMask enlarge_mask(const BinaryMask& mask, double ratio);

// bbox patch of region_mask, resized to working_res x working_res when
// working_res > 0 (native size otherwise)
std::pair<ImageGrid, Placement> crop_region(const ImageGrid& image, const BinaryMask& region_mask,
                                            int working_res = 0);

// inverse of crop_region: resize the patch back to the recorded box and
// overwrite it in a copy of background
ImageGrid repaste(const ImageGrid& patch, const Placement& placement,
                  const ImageGrid& background);

// z_denoised (*) region + z_reference (*) (1 - region)
LatentGrid blend(const LatentGrid& z_denoised, const LatentGrid& z_reference_t,
                 const BinaryMask& region);

// nearest-neighbor resample of a sub-box of mask to out_h x out_w
BinaryMask resample_mask(const BinaryMask& mask, const Box& box, int out_h, int out_w);

ImageGrid resize_bilinear(const ImageGrid& img, int out_h, int out_w);

struct InpaintRequest {
    ImageGrid background;
    BinaryMask mask;
    Conditioning conditioning;
    SamplerSchedule schedule;
    uint64_t seed = 0;
    double enlarge_ratio = 0.2;
    bool gch_full_frame = false;  // run the harmonization pass on the whole image
    bool capture_trace = false;
};

enum class Stage { LCG, GCH };

struct StageTraceEntry {
    Stage stage;
    int step_t = 0;
    LatentGrid blended_latent;
};

struct LcgResult {
    ImageGrid patch;  // x_hat^L
    Placement placement;
    std::vector<StageTraceEntry> trace;
    int steps = 0;
};

struct InpaintResult {
    ImageGrid image;
    BinaryMask m_prime;
    int lcg_steps = 0;
    int gch_steps = 0;
    std::vector<StageTraceEntry> trace;
};

// local content generation: ceil(lambda*T) blended steps on a context crop
// around m_prime, clean readout of the final prediction
LcgResult run_lcg(const InpaintRequest& request, Backbone& backbone, const BinaryMask& m_prime);

// global context harmonization: the remaining T - start_step ... i.e. start_step
// steps on the repasted image, blended with the original mask
ImageGrid run_gch(const ImageGrid& x_g, const InpaintRequest& request, Backbone& backbone,
                  int start_step, const BinaryMask& m_prime,
                  std::vector<StageTraceEntry>* trace = nullptr);

InpaintResult inpaint(const InpaintRequest& request, Backbone& backbone);

// single-stage full-frame blended denoising, the no-DIF baseline
InpaintResult inpaint_baseline(const InpaintRequest& request, Backbone& backbone);

// fold inpaint over the list, each request inheriting the previous output as
// its background; an empty list returns seed_background unchanged
ImageGrid inpaint_multi(const ImageGrid& seed_background, std::vector<InpaintRequest> requests,
                        Backbone& backbone);

}  // namespace dif
}  // namespace sp

#endif
