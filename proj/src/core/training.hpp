#ifndef SP_TRAINING_HPP
#define SP_TRAINING_HPP

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "adm.hpp"
#include "backbone.hpp"
#include "types.hpp"

namespace sp {
namespace train {

struct LossWeights {
    double tau1 = 1.5;  // fill-in region
    double tau2 = 0.7;  // background
    double beta = 0.4;  // regularization trade-off

    void validate() const;
};

struct AdapterConfig {
    int rank = 4;
    std::set<ProjTarget> targets = {ProjTarget::key, ProjTarget::value};

    void validate() const;
};

enum class SampleSource { subject, regularization };

struct TrainSample {
    ImageGrid image;
    BinaryMask mask;
    PromptRecord prompt;
    SampleSource source = SampleSource::subject;
};

// mean over all elements of tau1*m(*)(eps_hat-eps)^2 + tau2*(1-m)(*)(eps_hat-eps)^2
double loss_re(const LatentGrid& predicted_noise, const LatentGrid& true_noise,
               const BinaryMask& mask, const LossWeights& weights);

// dL/d predicted_noise for the loss above
LatentGrid loss_re_grad(const LatentGrid& predicted_noise, const LatentGrid& true_noise,
                        const BinaryMask& mask, const LossWeights& weights);

// L_RE over the subject batch plus beta times L_RE over the regularization
// batch, each sample scored at a seeded random timestep
double loss_final(const std::vector<TrainSample>& subject_batch,
                  const std::vector<TrainSample>& reg_batch, const LossWeights& weights,
                  ToyBackbone& model, const SamplerSchedule& schedule, uint64_t noise_seed);

// Chebyshev dilation by radius pixels
BinaryMask dilate_mask(const BinaryMask& mask, int radius);

// nearest resample of a frame mask to latent resolution
BinaryMask mask_to_latent(const BinaryMask& mask, int downscale);

struct FinetuneOptions {
    int steps = 800;
    double lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_subject = 1;
    int batch_reg = 1;
    uint64_t seed = 0;
    SamplerSchedule schedule = SamplerSchedule::linear(50, 0.7f);
    // random mask inflation range, fraction of the larger box side per step
    double inflate_min = 0.05;
    double inflate_max = 0.25;
    bool use_regularization = true;  // off drops the beta term entirely
};

struct FinetuneResult {
    std::vector<double> loss_log;  // one entry per optimizer step
    uint64_t base_hash_before = 0;
    uint64_t base_hash_after = 0;
    AdapterSet adapters;
};

// optimize low-rank adapters on the configured projections; base weights are
// never touched. Aborts with a divergence error on non-finite loss.
FinetuneResult finetune(const std::vector<TrainSample>& subjects,
                        const std::vector<TrainSample>& regularization,
                        const AdapterConfig& adapters, const LossWeights& weights,
                        const FinetuneOptions& options, ToyBackbone& model);

struct CheckpointMeta {
    std::string backbone_id;
    int text_dim = 0;
    int rank = 0;
    std::vector<std::string> targets;
    uint64_t base_weights_hash = 0;
    uint64_t seed = 0;
    int steps = 0;
    double final_loss = 0.0;
};

// adapter-only archive: metadata.json plus one DMLT tensor per adapter matrix
void save_checkpoint(const std::string& dir, const AdapterSet& adapters,
                     const CheckpointMeta& meta);
CheckpointMeta load_checkpoint(const std::string& dir, AdapterSet& adapters);

std::vector<TrainSample> to_train_samples(const adm::RegularizationSet& set);

}  // namespace train
}  // namespace sp

#endif
