#include "dif.hpp"

#include <algorithm>
#include <cmath>

#include "error.hpp"
#include "rng.hpp"

namespace sp {
namespace dif {

Box mask_bbox(const BinaryMask& mask) {
    int x0 = mask.w, y0 = mask.h, x1 = -1, y1 = -1;
    for (int y = 0; y < mask.h; y++)
        for (int x = 0; x < mask.w; x++)
            if (mask.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) fail(ErrorCode::empty_mask, "mask has no set pixels");
    return Box{x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

BinaryMask enlarge_mask(const BinaryMask& mask, double ratio) {
    if (ratio < 0) fail(ErrorCode::invalid_argument, "enlarge_mask: ratio must be >= 0");
    Box b = mask_bbox(mask);
    int pad = static_cast<int>(std::lround(ratio * std::max(b.w, b.h)));
    int x0 = std::max(0, b.x0 - pad);
    int y0 = std::max(0, b.y0 - pad);
    int x1 = std::min(mask.w - 1, b.x0 + b.w - 1 + pad);
    int y1 = std::min(mask.h - 1, b.y0 + b.h - 1 + pad);
    BinaryMask out(mask.h, mask.w);
    for (int y = y0; y <= y1; y++)
        for (int x = x0; x <= x1; x++) out.at(y, x) = 1;
    return out;
}

ImageGrid resize_bilinear(const ImageGrid& img, int out_h, int out_w) {
    if (out_h == img.h && out_w == img.w) return img;
    ImageGrid out(out_h, out_w, img.c);
    const double sy = static_cast<double>(img.h) / out_h;
    const double sx = static_cast<double>(img.w) / out_w;
    for (int y = 0; y < out_h; y++) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, img.h - 1);
        int yb = std::clamp(y0 + 1, 0, img.h - 1);
        for (int x = 0; x < out_w; x++) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, img.w - 1);
            int xb = std::clamp(x0 + 1, 0, img.w - 1);
            for (int ch = 0; ch < img.c; ch++) {
                double top = (1 - wx) * img.at(ya, xa, ch) + wx * img.at(ya, xb, ch);
                double bot = (1 - wx) * img.at(yb, xa, ch) + wx * img.at(yb, xb, ch);
                out.at(y, x, ch) = static_cast<float>((1 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

BinaryMask resample_mask(const BinaryMask& mask, const Box& box, int out_h, int out_w) {
    BinaryMask out(out_h, out_w);
    for (int y = 0; y < out_h; y++) {
        int sy = box.y0 + std::min(box.h - 1, static_cast<int>((y + 0.5) * box.h / out_h));
        for (int x = 0; x < out_w; x++) {
            int sx = box.x0 + std::min(box.w - 1, static_cast<int>((x + 0.5) * box.w / out_w));
            out.at(y, x) = mask.at(sy, sx);
        }
    }
    return out;
}

std::pair<ImageGrid, Placement> crop_region(const ImageGrid& image, const BinaryMask& region_mask,
                                            int working_res) {
    if (image.h != region_mask.h || image.w != region_mask.w)
        fail(ErrorCode::shape_mismatch, "crop_region: mask dims differ from image");
    Box b = mask_bbox(region_mask);
    ImageGrid patch(b.h, b.w, image.c);
    for (int y = 0; y < b.h; y++)
        for (int x = 0; x < b.w; x++)
            for (int ch = 0; ch < image.c; ch++)
                patch.at(y, x, ch) = image.at(b.y0 + y, b.x0 + x, ch);
    Placement pl;
    pl.box = b;
    pl.frame_h = image.h;
    pl.frame_w = image.w;
    pl.patch_h = working_res > 0 ? working_res : b.h;
    pl.patch_w = working_res > 0 ? working_res : b.w;
    if (working_res > 0) patch = resize_bilinear(patch, working_res, working_res);
    return {std::move(patch), pl};
}

ImageGrid repaste(const ImageGrid& patch, const Placement& placement,
                  const ImageGrid& background) {
    if (background.h != placement.frame_h || background.w != placement.frame_w)
        fail(ErrorCode::shape_mismatch, "repaste: background dims differ from placement frame");
    if (patch.h != placement.patch_h || patch.w != placement.patch_w)
        fail(ErrorCode::shape_mismatch, "repaste: patch dims differ from placement record");
    if (placement.box.x0 < 0 || placement.box.y0 < 0 ||
        placement.box.x0 + placement.box.w > background.w ||
        placement.box.y0 + placement.box.h > background.h)
        fail(ErrorCode::shape_mismatch, "repaste: placement box outside background");
    ImageGrid out = background;
    ImageGrid restored = resize_bilinear(patch, placement.box.h, placement.box.w);
    for (int y = 0; y < placement.box.h; y++)
        for (int x = 0; x < placement.box.w; x++)
            for (int ch = 0; ch < out.c; ch++)
                out.at(placement.box.y0 + y, placement.box.x0 + x, ch) = restored.at(y, x, ch);
    return out;
}

LatentGrid blend(const LatentGrid& z_denoised, const LatentGrid& z_reference_t,
                 const BinaryMask& region) {
    if (!z_denoised.same_shape(z_reference_t))
        fail(ErrorCode::shape_mismatch, "blend: latent shapes differ");
    if (region.h != z_denoised.h || region.w != z_denoised.w)
        fail(ErrorCode::shape_mismatch, "blend: region dims differ from latents");
    LatentGrid out(z_denoised.h, z_denoised.w, z_denoised.c);
    for (int y = 0; y < out.h; y++)
        for (int x = 0; x < out.w; x++) {
            const bool on = region.at(y, x) != 0;
            for (int ch = 0; ch < out.c; ch++)
                out.at(y, x, ch) = on ? z_denoised.at(y, x, ch) : z_reference_t.at(y, x, ch);
        }
    return out;
}

namespace {

// mask for the blend: sub-box of the frame mask resampled to the patch, then
// to latent resolution
BinaryMask blend_region_for(const BinaryMask& frame_mask, const Placement& pl, int downscale) {
    BinaryMask at_patch = resample_mask(frame_mask, pl.box, pl.patch_h, pl.patch_w);
    if (downscale == 1) return at_patch;
    Box full{0, 0, at_patch.w, at_patch.h};
    return resample_mask(at_patch, full, pl.patch_h / downscale, pl.patch_w / downscale);
}

void validate_request(const InpaintRequest& req) {
    req.schedule.validate();
    if (req.mask.h != req.background.h || req.mask.w != req.background.w)
        fail(ErrorCode::shape_mismatch, "inpaint: mask dims differ from background");
    if (req.mask.empty_region()) fail(ErrorCode::empty_mask, "inpaint: mask is empty");
    if (req.conditioning.embedding.toks < 1)
        fail(ErrorCode::invalid_argument, "inpaint: conditioning has no tokens");
    if (req.enlarge_ratio < 0)
        fail(ErrorCode::invalid_argument, "inpaint: enlarge_ratio must be >= 0");
}

}  // namespace

LcgResult run_lcg(const InpaintRequest& req, Backbone& backbone, const BinaryMask& m_prime) {
    const SamplerSchedule& sched = req.schedule;
    const int T = sched.steps;
    const int n_lcg = sched.lcg_steps();

    // context crop around m_prime so the blend can hold surrounding content
    BinaryMask context = enlarge_mask(m_prime, req.enlarge_ratio);
    auto [patch, pl] = crop_region(req.background, context, backbone.working_resolution());

    LcgResult res;
    res.placement = pl;
    res.steps = n_lcg;

    LatentGrid z_ref = backbone.encode(patch);
    if (n_lcg == 0) {
        res.patch = backbone.decode(z_ref);
        return res;
    }

    BinaryMask region = blend_region_for(m_prime, pl, backbone.latent_downscale());
    Rng rng = Rng(req.seed).fork("lcg");
    LatentGrid eps = gaussian_latent(z_ref.h, z_ref.w, z_ref.c, rng);

    LatentGrid z = forward_noise(z_ref, T, eps, sched);
    LatentGrid z0_last;
    for (int t = T - 1; t >= T - n_lcg; t--) {
        StepResult sr = backbone.predict_step(z, req.conditioning, t, sched);
        LatentGrid ref_t = forward_noise(z_ref, t, eps, sched);
        z = blend(sr.z_prev, ref_t, region);
        z0_last = std::move(sr.z0);
        if (req.capture_trace) res.trace.push_back({Stage::LCG, t, z});
    }
    // clean readout: final prediction blended against the clean reference
    res.patch = backbone.decode(blend(z0_last, z_ref, region));
    return res;
}

ImageGrid run_gch(const ImageGrid& x_g, const InpaintRequest& req, Backbone& backbone,
                  int start_step, const BinaryMask& m_prime,
                  std::vector<StageTraceEntry>* trace) {
    if (start_step == 0) return x_g;
    const SamplerSchedule& sched = req.schedule;

    BinaryMask crop_guide;
    if (req.gch_full_frame) {
        crop_guide = BinaryMask(x_g.h, x_g.w, 1);
    } else {
        crop_guide = m_prime;  // bounding box of m plus the enlarge ratio
    }
    auto [patch, pl] = crop_region(x_g, crop_guide, backbone.working_resolution());

    LatentGrid z_ref = backbone.encode(patch);
    BinaryMask region = blend_region_for(req.mask, pl, backbone.latent_downscale());

    Rng rng = Rng(req.seed).fork("gch");
    LatentGrid eps = gaussian_latent(z_ref.h, z_ref.w, z_ref.c, rng);

    LatentGrid z = forward_noise(z_ref, start_step, eps, sched);
    for (int t = start_step - 1; t >= 0; t--) {
        StepResult sr = backbone.predict_step(z, req.conditioning, t, sched);
        LatentGrid ref_t = forward_noise(z_ref, t, eps, sched);
        z = blend(sr.z_prev, ref_t, region);
        if (trace) trace->push_back({Stage::GCH, t, z});
    }
    // at t=0 the reference is the clean z_ref, so non-edit cells are exact
    ImageGrid out_patch = backbone.decode(z);
    return repaste(out_patch, pl, x_g);
}

InpaintResult inpaint(const InpaintRequest& req, Backbone& backbone) {
    validate_request(req);
    InpaintResult res;
    res.m_prime = enlarge_mask(req.mask, req.enlarge_ratio);

    LcgResult lcg = run_lcg(req, backbone, res.m_prime);
    res.lcg_steps = lcg.steps;
    if (req.capture_trace) res.trace = std::move(lcg.trace);

    ImageGrid x_g = repaste(lcg.patch, lcg.placement, req.background);

    const int remaining = req.schedule.steps - lcg.steps;
    res.gch_steps = remaining;
    std::vector<StageTraceEntry> gch_trace;
    res.image = run_gch(x_g, req, backbone, remaining, res.m_prime,
                        req.capture_trace ? &gch_trace : nullptr);
    if (req.capture_trace)
        res.trace.insert(res.trace.end(), gch_trace.begin(), gch_trace.end());
    return res;
}

InpaintResult inpaint_baseline(const InpaintRequest& req, Backbone& backbone) {
    validate_request(req);
    const SamplerSchedule& sched = req.schedule;
    const int T = sched.steps;

    InpaintResult res;
    res.m_prime = req.mask;
    res.gch_steps = T;

    LatentGrid z_ref = backbone.encode(req.background);
    const int f = backbone.latent_downscale();
    Box full{0, 0, req.mask.w, req.mask.h};
    BinaryMask region = resample_mask(req.mask, full, req.mask.h / f, req.mask.w / f);

    Rng rng = Rng(req.seed).fork("baseline");
    LatentGrid eps = gaussian_latent(z_ref.h, z_ref.w, z_ref.c, rng);
    LatentGrid z = forward_noise(z_ref, T, eps, sched);
    for (int t = T - 1; t >= 0; t--) {
        StepResult sr = backbone.predict_step(z, req.conditioning, t, sched);
        LatentGrid ref_t = forward_noise(z_ref, t, eps, sched);
        z = blend(sr.z_prev, ref_t, region);
        if (req.capture_trace) res.trace.push_back({Stage::GCH, t, z});
    }
    res.image = backbone.decode(z);
    return res;
}

ImageGrid inpaint_multi(const ImageGrid& seed_background, std::vector<InpaintRequest> requests,
                        Backbone& backbone) {
    ImageGrid current = seed_background;
    for (size_t i = 0; i < requests.size(); i++) {
        requests[i].background = current;
        try {
            current = inpaint(requests[i], backbone).image;
        } catch (const Error& e) {
            fail(e.code(), "inpaint_multi: request " + std::to_string(i) + ": " + e.what());
        }
    }
    return current;
}

}  // namespace dif
}  // namespace sp
