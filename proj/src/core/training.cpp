#include "training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

#include "dif.hpp"
#include "dmlt.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace fs = std::filesystem;

namespace sp {
namespace train {

using nlohmann::json;

void LossWeights::validate() const {
    if (tau1 < 0 || tau2 < 0 || beta < 0)
        fail(ErrorCode::config, "loss weights must be >= 0");
}

void AdapterConfig::validate() const {
    if (rank < 1) fail(ErrorCode::config, "adapter rank must be >= 1");
    if (targets.empty()) fail(ErrorCode::config, "adapter targets must be nonempty");
}

double loss_re(const LatentGrid& predicted_noise, const LatentGrid& true_noise,
               const BinaryMask& mask, const LossWeights& weights) {
    if (!predicted_noise.same_shape(true_noise))
        fail(ErrorCode::shape_mismatch, "loss_re: noise shapes differ");
    if (mask.h != predicted_noise.h || mask.w != predicted_noise.w)
        fail(ErrorCode::shape_mismatch, "loss_re: mask dims differ from latent");
    double acc = 0.0;
    const int c = predicted_noise.c;
    for (int y = 0; y < mask.h; y++)
        for (int x = 0; x < mask.w; x++) {
            const double tau = mask.at(y, x) ? weights.tau1 : weights.tau2;
            for (int ch = 0; ch < c; ch++) {
                double d = static_cast<double>(predicted_noise.at(y, x, ch)) -
                           true_noise.at(y, x, ch);
                acc += tau * d * d;
            }
        }
    return acc / static_cast<double>(predicted_noise.size());
}

LatentGrid loss_re_grad(const LatentGrid& predicted_noise, const LatentGrid& true_noise,
                        const BinaryMask& mask, const LossWeights& weights) {
    if (!predicted_noise.same_shape(true_noise))
        fail(ErrorCode::shape_mismatch, "loss_re_grad: noise shapes differ");
    if (mask.h != predicted_noise.h || mask.w != predicted_noise.w)
        fail(ErrorCode::shape_mismatch, "loss_re_grad: mask dims differ from latent");
    LatentGrid g(predicted_noise.h, predicted_noise.w, predicted_noise.c);
    const double inv_n = 1.0 / static_cast<double>(predicted_noise.size());
    for (int y = 0; y < mask.h; y++)
        for (int x = 0; x < mask.w; x++) {
            const double tau = mask.at(y, x) ? weights.tau1 : weights.tau2;
            for (int ch = 0; ch < g.c; ch++) {
                double d = static_cast<double>(predicted_noise.at(y, x, ch)) -
                           true_noise.at(y, x, ch);
                g.at(y, x, ch) = static_cast<float>(2.0 * tau * d * inv_n);
            }
        }
    return g;
}

BinaryMask dilate_mask(const BinaryMask& mask, int radius) {
    BinaryMask cur = mask;
    for (int r = 0; r < radius; r++) {
        BinaryMask next = cur;
        for (int y = 0; y < cur.h; y++)
            for (int x = 0; x < cur.w; x++) {
                if (cur.at(y, x)) continue;
                bool on = false;
                for (int dy = -1; dy <= 1 && !on; dy++)
                    for (int dx = -1; dx <= 1 && !on; dx++) {
                        int ny = y + dy, nx = x + dx;
                        if (ny >= 0 && ny < cur.h && nx >= 0 && nx < cur.w && cur.at(ny, nx))
                            on = true;
                    }
                if (on) next.at(y, x) = 1;
            }
        cur = std::move(next);
    }
    return cur;
}

BinaryMask mask_to_latent(const BinaryMask& mask, int downscale) {
    if (downscale == 1) return mask;
    Box full{0, 0, mask.w, mask.h};
    return dif::resample_mask(mask, full, mask.h / downscale, mask.w / downscale);
}

namespace {

struct EmbeddingCache {
    std::unordered_map<std::string, TextEmbedding> map;

    const TextEmbedding& get(ToyBackbone& model, const std::string& text) {
        auto it = map.find(text);
        if (it != map.end()) return it->second;
        return map.emplace(text, model.encode_text(text)).first->second;
    }
};

// one loss term: forward-noise the encoded sample at a drawn t, score the
// model's noise estimate. z_store keeps the noised latent alive for backward.
double sample_loss(ToyBackbone& model, const TrainSample& sample, const BinaryMask& frame_mask,
                   const LossWeights& weights, const SamplerSchedule& schedule, Rng& rng,
                   EmbeddingCache& embeds, ToyBackbone::ForwardCache* cache, LatentGrid* z_store,
                   LatentGrid* grad_out) {
    LatentGrid z0 = model.encode(sample.image);
    int t = static_cast<int>(rng.uniform_int(0, schedule.steps));
    LatentGrid noise = gaussian_latent(z0.h, z0.w, z0.c, rng);
    LatentGrid zt = forward_noise(z0, t, noise, schedule);
    BinaryMask lat_mask = mask_to_latent(frame_mask, model.latent_downscale());
    const TextEmbedding& emb = embeds.get(model, sample.prompt.text);

    ToyBackbone::ForwardCache local;
    ToyBackbone::ForwardCache& fc = cache ? *cache : local;
    if (z_store) {
        *z_store = std::move(zt);
        LatentGrid eps_hat = model.forward_train(*z_store, emb, t, schedule, fc);
        double loss = loss_re(eps_hat, noise, lat_mask, weights);
        if (grad_out) *grad_out = loss_re_grad(eps_hat, noise, lat_mask, weights);
        return loss;
    }
    LatentGrid eps_hat = model.forward_train(zt, emb, t, schedule, fc);
    return loss_re(eps_hat, noise, lat_mask, weights);
}

}  // namespace

double loss_final(const std::vector<TrainSample>& subject_batch,
                  const std::vector<TrainSample>& reg_batch, const LossWeights& weights,
                  ToyBackbone& model, const SamplerSchedule& schedule, uint64_t noise_seed) {
    weights.validate();
    if (subject_batch.empty() || reg_batch.empty())
        fail(ErrorCode::invalid_argument, "loss_final: batches must be nonempty");
    EmbeddingCache embeds;
    Rng rng(noise_seed);
    double ls = 0.0;
    for (const auto& s : subject_batch)
        ls += sample_loss(model, s, s.mask, weights, schedule, rng, embeds, nullptr, nullptr,
                          nullptr);
    ls /= static_cast<double>(subject_batch.size());
    double lr_term = 0.0;
    for (const auto& s : reg_batch)
        lr_term += sample_loss(model, s, s.mask, weights, schedule, rng, embeds, nullptr, nullptr,
                               nullptr);
    lr_term /= static_cast<double>(reg_batch.size());
    return ls + weights.beta * lr_term;
}

namespace {

struct AdamState {
    Mat m, v;
};

void adam_update(Mat& param, const Mat& grad, AdamState& st, const FinetuneOptions& opt,
                 int step1) {
    if (st.m.rows == 0) {
        st.m = Mat(param.rows, param.cols);
        st.v = Mat(param.rows, param.cols);
    }
    const double b1 = opt.adam_beta1, b2 = opt.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, step1);
    const double bc2 = 1.0 - std::pow(b2, step1);
    for (size_t i = 0; i < param.a.size(); i++) {
        double g = grad.a[i];
        double m = st.m.a[i] = b1 * st.m.a[i] + (1 - b1) * g;
        double v = st.v.a[i] = b2 * st.v.a[i] + (1 - b2) * g * g;
        param.a[i] -= static_cast<float>(opt.lr * (m / bc1) / (std::sqrt(v / bc2) + opt.adam_eps));
    }
}

BinaryMask inflate_subject_mask(const BinaryMask& mask, Rng& rng, double lo, double hi) {
    if (mask.empty_region()) return mask;
    Box b = dif::mask_bbox(mask);
    double pct = lo + (hi - lo) * rng.uniform();
    int radius = static_cast<int>(std::lround(pct * std::max(b.w, b.h)));
    return dilate_mask(mask, radius);
}

}  // namespace

FinetuneResult finetune(const std::vector<TrainSample>& subjects,
                        const std::vector<TrainSample>& regularization,
                        const AdapterConfig& adapters, const LossWeights& weights,
                        const FinetuneOptions& options, ToyBackbone& model) {
    adapters.validate();
    weights.validate();
    options.schedule.validate();
    if (subjects.empty())
        fail(ErrorCode::invalid_argument, "finetune: need at least one subject sample");
    const bool use_reg = options.use_regularization && !regularization.empty();
    if (options.use_regularization && regularization.empty() && weights.beta > 0)
        fail(ErrorCode::invalid_argument,
             "finetune: regularization set is empty; pass use_regularization=false to train without it");

    FinetuneResult res;
    res.base_hash_before = model.base_weights_hash();

    // adapters start at zero delta: A seeded random, B zero
    const int c = model.latent_channels();
    const int d = model.text_dim();
    Rng init_rng = Rng(options.seed).fork("adapter-init");
    AdapterSet init;
    for (ProjTarget tgt : adapters.targets) {
        int in_dim = (tgt == ProjTarget::key || tgt == ProjTarget::value) ? d : c;
        LoraPair lp;
        lp.A = Mat::randn(c, adapters.rank, 0.1f, init_rng);
        lp.B = Mat(adapters.rank, in_dim);
        init.emplace(tgt, std::move(lp));
    }
    model.set_adapters(init);

    std::map<ProjTarget, AdamState> adam_a, adam_b;
    EmbeddingCache embeds;
    Rng rng = Rng(options.seed).fork("train");

    for (int step = 0; step < options.steps; step++) {
        std::map<ProjTarget, LoraPair> grads;
        double loss = 0.0;

        for (int b = 0; b < options.batch_subject; b++) {
            const TrainSample& s =
                subjects[static_cast<size_t>(rng.uniform_int(0, subjects.size() - 1))];
            BinaryMask inflated =
                inflate_subject_mask(s.mask, rng, options.inflate_min, options.inflate_max);
            ToyBackbone::ForwardCache fc;
            LatentGrid zt, grad;
            double l = sample_loss(model, s, inflated, weights, options.schedule, rng, embeds,
                                   &fc, &zt, &grad);
            for (float& g : grad.data) g /= static_cast<float>(options.batch_subject);
            model.backward_train(fc, grad, grads);
            loss += l / options.batch_subject;
        }
        if (use_reg) {
            double reg_loss = 0.0;
            for (int b = 0; b < options.batch_reg; b++) {
                const TrainSample& s = regularization[static_cast<size_t>(
                    rng.uniform_int(0, regularization.size() - 1))];
                ToyBackbone::ForwardCache fc;
                LatentGrid zt, grad;
                double l = sample_loss(model, s, s.mask, weights, options.schedule, rng, embeds,
                                       &fc, &zt, &grad);
                for (float& g : grad.data)
                    g = static_cast<float>(g * weights.beta / options.batch_reg);
                model.backward_train(fc, grad, grads);
                reg_loss += l / options.batch_reg;
            }
            loss += weights.beta * reg_loss;
        }

        if (!std::isfinite(loss))
            fail(ErrorCode::divergence,
                 "finetune: non-finite loss at step " + std::to_string(step));

        for (auto& [tgt, g] : grads) {
            LoraPair& lp = model.adapters().at(tgt);
            adam_update(lp.A, g.A, adam_a[tgt], options, step + 1);
            adam_update(lp.B, g.B, adam_b[tgt], options, step + 1);
        }
        res.loss_log.push_back(loss);
    }

    res.base_hash_after = model.base_weights_hash();
    res.adapters = model.adapters();
    return res;
}

/*-------------------------------- checkpoints -------------------------------*/

void save_checkpoint(const std::string& dir, const AdapterSet& adapters,
                     const CheckpointMeta& meta) {
    fs::create_directories(dir);
    json j;
    j["backbone"] = meta.backbone_id;
    j["text_dim"] = meta.text_dim;
    j["rank"] = meta.rank;
    j["targets"] = meta.targets;
    j["base_weights_hash"] = meta.base_weights_hash;
    j["seed"] = meta.seed;
    j["steps"] = meta.steps;
    j["final_loss"] = meta.final_loss;
    json tensors = json::array();
    for (const auto& [tgt, lp] : adapters) {
        std::string name = proj_target_name(tgt);
        for (const char* side : {"A", "B"}) {
            const Mat& m = side[0] == 'A' ? lp.A : lp.B;
            std::string file = name + std::string("_") + side + ".dmlt";
            DmltTensor t;
            t.dims = {static_cast<uint32_t>(m.rows), static_cast<uint32_t>(m.cols)};
            t.data = m.a;
            dmlt_write((fs::path(dir) / file).string(), t);
            tensors.push_back({{"target", name}, {"side", side}, {"file", file},
                               {"rows", m.rows}, {"cols", m.cols}});
        }
    }
    j["tensors"] = tensors;
    std::ofstream out(fs::path(dir) / "metadata.json", std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write checkpoint metadata in " + dir);
    out << j.dump(2) << "\n";
}

CheckpointMeta load_checkpoint(const std::string& dir, AdapterSet& adapters) {
    std::ifstream in(fs::path(dir) / "metadata.json");
    if (!in) fail(ErrorCode::io, "no checkpoint metadata in " + dir);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail(ErrorCode::io, "checkpoint metadata is not valid JSON: " + std::string(e.what()));
    }
    CheckpointMeta meta;
    meta.backbone_id = j.value("backbone", "");
    meta.text_dim = j.value("text_dim", 0);
    meta.rank = j.value("rank", 0);
    for (const auto& t : j.value("targets", json::array()))
        meta.targets.push_back(t.get<std::string>());
    meta.base_weights_hash = j.value("base_weights_hash", 0ULL);
    meta.seed = j.value("seed", 0ULL);
    meta.steps = j.value("steps", 0);
    meta.final_loss = j.value("final_loss", 0.0);

    adapters.clear();
    for (const auto& t : j.at("tensors")) {
        ProjTarget tgt = proj_target_from_name(t.at("target").get<std::string>());
        DmltTensor tensor = dmlt_read((fs::path(dir) / t.at("file").get<std::string>()).string());
        if (tensor.dims.size() != 2)
            fail(ErrorCode::io, "checkpoint tensor is not 2-D: " + t.at("file").get<std::string>());
        Mat m(static_cast<int>(tensor.dims[0]), static_cast<int>(tensor.dims[1]));
        m.a = tensor.data;
        if (t.at("side").get<std::string>() == "A")
            adapters[tgt].A = std::move(m);
        else
            adapters[tgt].B = std::move(m);
    }
    return meta;
}

std::vector<TrainSample> to_train_samples(const adm::RegularizationSet& set) {
    std::vector<TrainSample> out;
    for (const auto& s : set.samples) {
        TrainSample ts;
        ts.image = s.image;
        ts.mask = s.mask;
        ts.prompt = s.prompt;
        ts.source = SampleSource::regularization;
        out.push_back(std::move(ts));
    }
    return out;
}

}  // namespace train
}  // namespace sp
