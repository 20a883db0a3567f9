#include "subjectpaint.h"

#include <cstdlib>
#include <cstring>
#include <deque>
#include <mutex>
#include <string>

#include "core/config.hpp"
#include "core/error.hpp"
#include "core/runner.hpp"

namespace {

constexpr const char* kVersion = "0.1.0";

thread_local std::string g_ctor_error;

}  // namespace

struct sp_ctx {
    sp::RunConfig cfg;
    std::string cfg_json;
    std::string cfg_hash;
    std::string last_error;
};

namespace {

sp_status capture(sp_ctx* ctx, const std::exception& e, bool config_error) {
    if (ctx) ctx->last_error = e.what();
    return config_error ? SP_STATUS_CONFIG_ERROR : SP_STATUS_PIPELINE_ERROR;
}

template <typename Fn>
sp_status guarded(sp_ctx* ctx, Fn&& fn) {
    if (!ctx) return SP_STATUS_CONFIG_ERROR;
    ctx->last_error.clear();
    try {
        fn();
        return SP_OK;
    } catch (const sp::Error& e) {
        return capture(ctx, e, e.is_config());
    } catch (const std::exception& e) {
        return capture(ctx, e, false);
    }
}

const char* or_empty(const char* s) { return s ? s : ""; }

}  // namespace

extern "C" {

const char* sp_version(void) { return kVersion; }

const char* sp_config_schema(void) { return sp::config_schema_json(); }

sp_ctx* sp_ctx_new(const char* config_json) {
    g_ctor_error.clear();
    try {
        auto ctx = new sp_ctx();
        std::string text = or_empty(config_json);
        ctx->cfg = text.empty() ? sp::RunConfig{} : sp::config_from_string(text);
        ctx->cfg_json = ctx->cfg.to_json().dump(2);
        ctx->cfg_hash = ctx->cfg.hash();
        return ctx;
    } catch (const std::exception& e) {
        g_ctor_error = e.what();
        return nullptr;
    }
}

void sp_ctx_free(sp_ctx* ctx) { delete ctx; }

const char* sp_last_error(const sp_ctx* ctx) {
    return ctx ? ctx->last_error.c_str() : g_ctor_error.c_str();
}

const char* sp_ctx_config(const sp_ctx* ctx) { return ctx ? ctx->cfg_json.c_str() : ""; }

const char* sp_ctx_config_hash(const sp_ctx* ctx) { return ctx ? ctx->cfg_hash.c_str() : ""; }

sp_status sp_run_adm(sp_ctx* ctx, const char* subject_dir, const char* subject_class,
                     const char* out_dir) {
    return guarded(ctx, [&] {
        sp::Runner(ctx->cfg).run_adm(or_empty(subject_dir), or_empty(subject_class),
                                     or_empty(out_dir));
    });
}

sp_status sp_run_finetune(sp_ctx* ctx, const char* subject_dir, const char* reg_dir,
                          const char* out_dir) {
    return guarded(ctx, [&] {
        sp::Runner(ctx->cfg).run_finetune(or_empty(subject_dir), or_empty(reg_dir),
                                          or_empty(out_dir));
    });
}

sp_status sp_run_inpaint(sp_ctx* ctx, const char* background_png, const char* mask_png,
                         const char* prompt, const char* checkpoint_dir, const char* out_png) {
    return guarded(ctx, [&] {
        sp::Runner(ctx->cfg).run_inpaint(or_empty(background_png), or_empty(mask_png),
                                         or_empty(prompt), or_empty(checkpoint_dir),
                                         or_empty(out_png));
    });
}

sp_status sp_run_inpaint_multi(sp_ctx* ctx, const char* requests_json, const char* out_png) {
    return guarded(ctx, [&] {
        sp::Runner(ctx->cfg).run_inpaint_multi(or_empty(requests_json), or_empty(out_png));
    });
}

sp_status sp_run_bench(sp_ctx* ctx, const char* corpus_dir, const char* subjects_json,
                       const char* out_dir) {
    return guarded(ctx, [&] {
        sp::Runner(ctx->cfg).run_bench(or_empty(corpus_dir), or_empty(subjects_json),
                                       or_empty(out_dir));
    });
}

sp_status sp_run_eval(sp_ctx* ctx, const char* results_dir, const char* bench_manifest,
                      const char* sources_dir, const char* task, const char* out_report) {
    return guarded(ctx, [&] {
        sp::Runner(ctx->cfg).run_eval(or_empty(results_dir), or_empty(bench_manifest),
                                      or_empty(sources_dir), or_empty(out_report),
                                      or_empty(task));
    });
}

sp_status sp_inpaint_image(sp_ctx* ctx, const sp_image* background, const sp_image* mask,
                           const char* prompt, const char* checkpoint_dir, sp_image* out) {
    return guarded(ctx, [&] {
        if (!background || !mask || !out || !background->data || !mask->data)
            sp::fail(sp::ErrorCode::invalid_argument, "null image argument");
        sp::ImageGrid bg(static_cast<int>(background->height),
                         static_cast<int>(background->width),
                         static_cast<int>(background->channels));
        std::memcpy(bg.data.data(), background->data, bg.data.size() * sizeof(float));
        sp::BinaryMask m(static_cast<int>(mask->height), static_cast<int>(mask->width));
        for (size_t i = 0; i < m.data.size(); i++) m.data[i] = mask->data[i] != 0.f ? 1 : 0;

        sp::ImageGrid result = sp::Runner(ctx->cfg).inpaint_image(bg, m, or_empty(prompt),
                                                                  or_empty(checkpoint_dir));
        out->height = static_cast<uint32_t>(result.h);
        out->width = static_cast<uint32_t>(result.w);
        out->channels = static_cast<uint32_t>(result.c);
        out->data = static_cast<float*>(std::malloc(result.data.size() * sizeof(float)));
        if (!out->data) sp::fail(sp::ErrorCode::pipeline, "out of memory");
        std::memcpy(out->data, result.data.data(), result.data.size() * sizeof(float));
    });
}

void sp_image_free(sp_image* image) {
    if (image && image->data) {
        std::free(image->data);
        image->data = nullptr;
    }
}

}  // extern "C"

/*------------------------- registered backbone seam -------------------------*/

namespace {

std::mutex g_vtable_mutex;
std::deque<sp_backbone_vtable> g_vtables;  // stable addresses for factory user pointers
std::deque<std::string> g_vtable_names;

sp::LatentGrid tensor_to_latent(const sp_tensor& t, const char* what) {
    if (t.ndim != 3 || !t.data)
        sp::fail(sp::ErrorCode::pipeline, std::string(what) + ": adapter returned a bad tensor");
    sp::LatentGrid z(static_cast<int>(t.dims[0]), static_cast<int>(t.dims[1]),
                     static_cast<int>(t.dims[2]));
    std::memcpy(z.data.data(), t.data, z.data.size() * sizeof(float));
    return z;
}

sp_tensor latent_to_tensor(const sp::LatentGrid& z) {
    sp_tensor t{};
    t.ndim = 3;
    t.dims[0] = static_cast<uint32_t>(z.h);
    t.dims[1] = static_cast<uint32_t>(z.w);
    t.dims[2] = static_cast<uint32_t>(z.c);
    t.data = const_cast<float*>(z.data.data());  // borrowed, callee must not free
    return t;
}

class CApiBackbone : public sp::Backbone {
public:
    CApiBackbone(std::string name, const sp_backbone_vtable* vt) : name_(std::move(name)), vt_(vt) {}

    std::string name() const override { return name_; }

    sp::LatentGrid encode(const sp::ImageGrid& image) const override {
        sp::LatentGrid as_latent(image.h, image.w, image.c);
        as_latent.data = image.data;
        sp_tensor in = latent_to_tensor(as_latent), out{};
        if (!vt_->encode || vt_->encode(vt_->user, &in, &out) != 0)
            sp::fail(sp::ErrorCode::pipeline, name_ + ": encode failed");
        sp::LatentGrid z = tensor_to_latent(out, "encode");
        std::free(out.data);
        return z;
    }

    sp::ImageGrid decode(const sp::LatentGrid& latent) const override {
        sp_tensor in = latent_to_tensor(latent), out{};
        if (!vt_->decode || vt_->decode(vt_->user, &in, &out) != 0)
            sp::fail(sp::ErrorCode::pipeline, name_ + ": decode failed");
        sp::LatentGrid z = tensor_to_latent(out, "decode");
        std::free(out.data);
        sp::ImageGrid img(z.h, z.w, z.c);
        img.data = z.data;
        return img;
    }

    sp::TextEmbedding encode_text(const std::string& prompt) const override {
        sp_tensor out{};
        if (!vt_->encode_text || vt_->encode_text(vt_->user, prompt.c_str(), &out) != 0)
            sp::fail(sp::ErrorCode::pipeline, name_ + ": encode_text failed");
        if (out.ndim != 2 || !out.data)
            sp::fail(sp::ErrorCode::pipeline, name_ + ": encode_text returned a bad tensor");
        sp::TextEmbedding emb(static_cast<int>(out.dims[0]), static_cast<int>(out.dims[1]));
        for (size_t i = 0; i < emb.tokens.size(); i++) emb.tokens[i] = out.data[i];
        std::free(out.data);
        emb.repool();
        return emb;
    }

    sp::LatentGrid predict_noise(const sp::LatentGrid& z, const sp::Conditioning& cond, int t,
                                 const sp::SamplerSchedule& schedule) override {
        sp_tensor zin = latent_to_tensor(z);
        std::vector<float> token_buf(cond.embedding.tokens.begin(),
                                     cond.embedding.tokens.end());
        sp_tensor tokens{};
        tokens.ndim = 2;
        tokens.dims[0] = static_cast<uint32_t>(cond.embedding.toks);
        tokens.dims[1] = static_cast<uint32_t>(cond.embedding.dim);
        tokens.data = token_buf.data();
        sp_tensor out{};
        if (!vt_->predict_noise ||
            vt_->predict_noise(vt_->user, &zin, &tokens, cond.guidance_scale, t, schedule.steps,
                               &out) != 0)
            sp::fail(sp::ErrorCode::pipeline, name_ + ": predict_noise failed");
        sp::LatentGrid eps = tensor_to_latent(out, "predict_noise");
        std::free(out.data);
        return eps;
    }

    int latent_downscale() const override { return vt_->latent_downscale > 0 ? vt_->latent_downscale : 1; }
    int working_resolution() const override { return vt_->working_resolution; }

private:
    std::string name_;
    const sp_backbone_vtable* vt_;
};

struct FactoryUser {
    const char* name;
    const sp_backbone_vtable* vt;
};

std::deque<FactoryUser> g_factory_users;

std::shared_ptr<sp::Backbone> capi_factory(void* user) {
    auto* fu = static_cast<FactoryUser*>(user);
    return std::make_shared<CApiBackbone>(fu->name, fu->vt);
}

}  // namespace

extern "C" sp_status sp_register_backbone(const char* name, const sp_backbone_vtable* vtable) {
    if (!name || !*name || !vtable) return SP_STATUS_CONFIG_ERROR;
    std::lock_guard<std::mutex> lock(g_vtable_mutex);
    g_vtables.push_back(*vtable);
    g_vtable_names.push_back(name);
    g_factory_users.push_back({g_vtable_names.back().c_str(), &g_vtables.back()});
    sp::register_backbone_adapter(name, &capi_factory, &g_factory_users.back());
    return SP_OK;
}
