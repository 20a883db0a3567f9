/*
 * subjectpaint — subject-driven image inpainting toolkit.
 *
 * C API over the C++ core: create a context from a JSON config, then run
 * pipeline commands against it. All functions returning sp_status report
 * failure details through sp_last_error(ctx). The library is not thread-safe
 * per context; use one context per thread.
 */
#ifndef SUBJECTPAINT_H
#define SUBJECTPAINT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32) && defined(SP_SHARED)
#if defined(SP_BUILD)
#define SP_API __declspec(dllexport)
#else
#define SP_API __declspec(dllimport)
#endif
#else
#define SP_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef struct sp_ctx sp_ctx;

typedef enum sp_status {
    SP_OK = 0,
    SP_STATUS_CONFIG_ERROR = 2,   /* bad config, bad arguments */
    SP_STATUS_PIPELINE_ERROR = 3, /* anything that failed while running */
} sp_status;

SP_API const char* sp_version(void);

/* JSON schema every config document is validated against */
SP_API const char* sp_config_schema(void);

/* config_json: a config document, a run-manifest document ({"config": ...}),
 * or NULL/empty for all defaults. Returns NULL on invalid config; the message
 * is then available via sp_last_error(NULL). */
SP_API sp_ctx* sp_ctx_new(const char* config_json);
SP_API void sp_ctx_free(sp_ctx* ctx);

/* message of the most recent failure on this context (or of the most recent
 * failed sp_ctx_new when ctx is NULL); empty string when none */
SP_API const char* sp_last_error(const sp_ctx* ctx);

/* resolved config as canonical JSON, and its content hash */
SP_API const char* sp_ctx_config(const sp_ctx* ctx);
SP_API const char* sp_ctx_config_hash(const sp_ctx* ctx);

/* -------------------------------- pipeline -------------------------------- */

/* Build the attribute dictionary and the regularization set for the subject
 * images in subject_dir; writes images/, masks/, manifest.json and
 * dictionary.json under out_dir. subject_class may be NULL to use the config. */
SP_API sp_status sp_run_adm(sp_ctx* ctx, const char* subject_dir, const char* subject_class,
                            const char* out_dir);

/* Fine-tune low-rank adapters on the subject images (masks taken from
 * <name>_mask.png when present). reg_dir may be NULL to train without the
 * regularization term. Writes an adapter checkpoint into out_dir. */
SP_API sp_status sp_run_finetune(sp_ctx* ctx, const char* subject_dir, const char* reg_dir,
                                 const char* out_dir);

/* Two-stage inpaint of mask_png inside background_png guided by prompt.
 * checkpoint_dir may be NULL for base weights. Writes out_png plus an
 * out_png.json sidecar with step counts and the substitution outcome. */
SP_API sp_status sp_run_inpaint(sp_ctx* ctx, const char* background_png, const char* mask_png,
                                const char* prompt, const char* checkpoint_dir,
                                const char* out_png);

/* requests_json: {"background": path, "requests": [{"mask": path, "prompt":
 * str, "checkpoint": path?, "seed": int?}, ...]} applied iteratively. */
SP_API sp_status sp_run_inpaint_multi(sp_ctx* ctx, const char* requests_json,
                                      const char* out_png);

/* corpus_dir must hold annotations.json ([{image, boxes:[[x,y,w,h]]}]) plus
 * the images; subjects_json is a list of {id, class, prompts?}. Writes
 * benchmark.json and masks/ under out_dir. */
SP_API sp_status sp_run_bench(sp_ctx* ctx, const char* corpus_dir, const char* subjects_json,
                              const char* out_dir);

/* Score <id>.png files in results_dir against the benchmark manifest with the
 * mock embedders. task may be "identity", "editing" or NULL for both. Writes
 * the JSON report to out_report and a rendered table to out_report.txt. */
SP_API sp_status sp_run_eval(sp_ctx* ctx, const char* results_dir, const char* bench_manifest,
                             const char* sources_dir, const char* task, const char* out_report);

/* ------------------------------ in-memory API ----------------------------- */

/* float pixels in [0,1], row-major h*w*c */
typedef struct sp_image {
    uint32_t height;
    uint32_t width;
    uint32_t channels;
    float* data;
} sp_image;

/* mask: h*w single channel, nonzero marks the inpaint region. out->data is
 * allocated with malloc; release with sp_image_free. */
SP_API sp_status sp_inpaint_image(sp_ctx* ctx, const sp_image* background, const sp_image* mask,
                                  const char* prompt, const char* checkpoint_dir, sp_image* out);
SP_API void sp_image_free(sp_image* image);

/* ------------------------------ backbone seam ----------------------------- */

/* row-major float tensor; implementations allocate data with malloc, the
 * library frees it with free */
typedef struct sp_tensor {
    uint32_t ndim;
    uint32_t dims[4];
    float* data;
} sp_tensor;

/* Narrow adapter interface for real diffusion backbones: latent codec, text
 * encoder, and the conditional noise predictor. Every callback returns 0 on
 * success. cond_tokens is an L x d token matrix (ndim 2). */
typedef struct sp_backbone_vtable {
    void* user;
    int (*encode)(void* user, const sp_tensor* image, sp_tensor* out_latent);
    int (*decode)(void* user, const sp_tensor* latent, sp_tensor* out_image);
    int (*encode_text)(void* user, const char* prompt, sp_tensor* out_tokens);
    int (*predict_noise)(void* user, const sp_tensor* latent, const sp_tensor* cond_tokens,
                         float guidance_scale, int32_t t, int32_t total_steps,
                         sp_tensor* out_noise);
    int32_t latent_downscale;
    int32_t working_resolution; /* 0 = native */
} sp_backbone_vtable;

/* Bind an adapter under a backbone id (e.g. "sdxl-inpaint") so configs can
 * select it. The vtable is copied; user must stay alive until process exit. */
SP_API sp_status sp_register_backbone(const char* name, const sp_backbone_vtable* vtable);

#ifdef __cplusplus
}
#endif

#endif /* SUBJECTPAINT_H */
