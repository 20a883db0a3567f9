#ifndef SP_BACKBONE_HPP
#define SP_BACKBONE_HPP

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rng.hpp"
#include "types.hpp"

namespace sp {

// dense row-major matrix, small sizes only
struct Mat {
    int rows = 0, cols = 0;
    std::vector<float> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.f) {}

    float& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    float at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }

    static Mat identity(int n);
    static Mat randn(int r, int c, float scale, Rng& rng);

    // y = M x
    void mul_vec(const float* x, float* y) const;
};

enum class ProjTarget { query, key, value, output };

const char* proj_target_name(ProjTarget t);
ProjTarget proj_target_from_name(const std::string& name);

// low-rank delta W += A * B
struct LoraPair {
    Mat A;  // out x rank
    Mat B;  // rank x in
};

using AdapterSet = std::map<ProjTarget, LoraPair>;

// x_t = alpha[t] * latent + delta[t] * noise
LatentGrid forward_noise(const LatentGrid& latent, int t, const LatentGrid& noise,
                         const SamplerSchedule& schedule);

LatentGrid gaussian_latent(int h, int w, int c, Rng& rng);

struct StepResult {
    LatentGrid z_prev;  // state at step t
    LatentGrid z0;      // clean prediction implied by the noise estimate
};

// Narrow model contract: latent codec, text encoder, conditional noise
// predictor. predict_step() is the deterministic reverse update built on
// predict_noise(); instances are not safe for concurrent calls.
class Backbone {
public:
    virtual ~Backbone() = default;

    virtual std::string name() const = 0;

    virtual LatentGrid encode(const ImageGrid& image) const;
    virtual ImageGrid decode(const LatentGrid& latent) const;
    virtual TextEmbedding encode_text(const std::string& prompt) const = 0;

    // epsilon estimate for the state z at noise level t
    virtual LatentGrid predict_noise(const LatentGrid& z, const Conditioning& cond, int t,
                                     const SamplerSchedule& schedule) = 0;

    // one reverse update from the state at t+1 to the state at t, 0 <= t < T
    virtual StepResult predict_step(const LatentGrid& z, const Conditioning& cond, int t,
                                    const SamplerSchedule& schedule);

    // spatial downscale factor of the codec
    virtual int latent_downscale() const { return 1; }
    // fixed crop resolution demanded by the model, 0 = native size
    virtual int working_resolution() const { return 0; }
};

// Deterministic toy model for desk-scale runs. Codec is identity (factor 1)
// or 8x average-pool / nearest-upsample. The predictor is a pooled
// single-query cross-attention readout
//   eps_hat_i = Wo (u (*) (Wq z_i) + w),  u = Wk ebar, w = Wv ebar
// over the mean text token ebar (prompt tokens plus a Fourier time token),
// with optional low-rank adapters on any of the four projections.
struct ToyOptions {
    uint64_t seed = 0;
    int text_dim = 32;
    int downscale = 1;      // 1 or 8
    int working_res = 0;    // 0 = native
    float base_scale = 0.05f;
};

class ToyBackbone : public Backbone {
public:
    explicit ToyBackbone(const ToyOptions& opt);

    std::string name() const override { return opt_.downscale == 8 ? "toy-f8" : "toy"; }

    LatentGrid encode(const ImageGrid& image) const override;
    ImageGrid decode(const LatentGrid& latent) const override;
    TextEmbedding encode_text(const std::string& prompt) const override;
    LatentGrid predict_noise(const LatentGrid& z, const Conditioning& cond, int t,
                             const SamplerSchedule& schedule) override;

    int latent_downscale() const override { return opt_.downscale; }
    int working_resolution() const override { return opt_.working_res; }

    int text_dim() const { return opt_.text_dim; }
    int latent_channels() const { return 3; }

    uint64_t base_weights_hash() const;

    AdapterSet& adapters() { return adapters_; }
    const AdapterSet& adapters() const { return adapters_; }
    void set_adapters(AdapterSet a) { adapters_ = std::move(a); }

    Mat effective_proj(ProjTarget t) const;

    // training-path forward/backward with cached intermediates
    struct ForwardCache {
        std::vector<float> ebar;  // d
        std::vector<float> u, w;  // c
        LatentGrid s;             // Wq z
        LatentGrid phi;           // u (*) s + w
        const LatentGrid* z = nullptr;
    };
    LatentGrid forward_train(const LatentGrid& z, const TextEmbedding& emb, int t,
                             const SamplerSchedule& schedule, ForwardCache& cache) const;
    // d_eps is dL/d eps_hat; accumulates per-target (dA, dB) into grads
    void backward_train(const ForwardCache& cache, const LatentGrid& d_eps,
                        std::map<ProjTarget, LoraPair>& grads) const;

    std::vector<float> time_token(int t, int total_steps) const;

private:
    std::vector<float> pooled_context(const TextEmbedding& emb, int t, int total_steps) const;

    ToyOptions opt_;
    Mat wq_, wk_, wv_, wo_;
    AdapterSet adapters_;
};

// test/instrumentation predictor: returns a fixed noise grid so the reverse
// update inverts forward_noise exactly
class OracleBackbone : public Backbone {
public:
    explicit OracleBackbone(LatentGrid injected_noise, int text_dim = 32);

    std::string name() const override { return "toy-oracle"; }
    TextEmbedding encode_text(const std::string& prompt) const override;
    LatentGrid predict_noise(const LatentGrid& z, const Conditioning& cond, int t,
                             const SamplerSchedule& schedule) override;

private:
    LatentGrid noise_;
    int text_dim_;
};

// counts predict_step / predict_noise invocations of a wrapped backbone
class CountingBackbone : public Backbone {
public:
    explicit CountingBackbone(std::shared_ptr<Backbone> inner) : inner_(std::move(inner)) {}

    std::string name() const override { return inner_->name(); }
    LatentGrid encode(const ImageGrid& image) const override { return inner_->encode(image); }
    ImageGrid decode(const LatentGrid& latent) const override { return inner_->decode(latent); }
    TextEmbedding encode_text(const std::string& prompt) const override {
        return inner_->encode_text(prompt);
    }
    LatentGrid predict_noise(const LatentGrid& z, const Conditioning& cond, int t,
                             const SamplerSchedule& schedule) override {
        noise_calls++;
        return inner_->predict_noise(z, cond, t, schedule);
    }
    StepResult predict_step(const LatentGrid& z, const Conditioning& cond, int t,
                            const SamplerSchedule& schedule) override {
        step_calls++;
        return inner_->predict_step(z, cond, t, schedule);
    }
    int latent_downscale() const override { return inner_->latent_downscale(); }
    int working_resolution() const override { return inner_->working_resolution(); }

    int step_calls = 0;
    int noise_calls = 0;

private:
    std::shared_ptr<Backbone> inner_;
};

// factory signature used for externally registered adapters
using BackboneFactory = std::shared_ptr<Backbone> (*)(void* user);

// "toy" and "toy-f8" are built in; sd15-inpaint / sd20-inpaint /
// sdxl-inpaint / flux-fill are declared seams that fail with
// backbone-unavailable until an adapter is registered under that name.
std::shared_ptr<Backbone> create_backbone(const std::string& id, const ToyOptions& opt);
void register_backbone_adapter(const std::string& id, BackboneFactory factory, void* user);
bool backbone_id_known(const std::string& id);

}  // namespace sp

#endif
