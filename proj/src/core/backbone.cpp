#include "backbone.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <mutex>
#include <unordered_map>

#include "error.hpp"
#include "hash.hpp"

namespace sp {

Mat Mat::identity(int n) {
    Mat m(n, n);
    for (int i = 0; i < n; i++) m.at(i, i) = 1.f;
    return m;
}

Mat Mat::randn(int r, int c, float scale, Rng& rng) {
    Mat m(r, c);
    for (float& v : m.a) v = scale * static_cast<float>(rng.normal());
    return m;
}

void Mat::mul_vec(const float* x, float* y) const {
    for (int r = 0; r < rows; r++) {
        float acc = 0.f;
        const float* row = a.data() + static_cast<size_t>(r) * cols;
        for (int c = 0; c < cols; c++) acc += row[c] * x[c];
        y[r] = acc;
    }
}

const char* proj_target_name(ProjTarget t) {
    switch (t) {
        case ProjTarget::query: return "query";
        case ProjTarget::key: return "key";
        case ProjTarget::value: return "value";
        case ProjTarget::output: return "output";
    }
    return "?";
}

ProjTarget proj_target_from_name(const std::string& name) {
    if (name == "query") return ProjTarget::query;
    if (name == "key") return ProjTarget::key;
    if (name == "value") return ProjTarget::value;
    if (name == "output") return ProjTarget::output;
    fail(ErrorCode::config, "unknown projection target: " + name);
}

LatentGrid forward_noise(const LatentGrid& latent, int t, const LatentGrid& noise,
                         const SamplerSchedule& schedule) {
    if (t < 0 || t > schedule.steps)
        fail(ErrorCode::step_out_of_range, "forward_noise: t out of [0,T]");
    if (!latent.same_shape(noise))
        fail(ErrorCode::shape_mismatch, "forward_noise: noise shape differs from latent");
    LatentGrid out(latent.h, latent.w, latent.c);
    const float a = schedule.alpha[t];
    const float d = schedule.delta[t];
    for (size_t i = 0; i < out.data.size(); i++)
        out.data[i] = a * latent.data[i] + d * noise.data[i];
    return out;
}

LatentGrid gaussian_latent(int h, int w, int c, Rng& rng) {
    LatentGrid z(h, w, c);
    for (float& v : z.data) v = static_cast<float>(rng.normal());
    return z;
}

/*--------------------------------- Backbone ---------------------------------*/

LatentGrid Backbone::encode(const ImageGrid& image) const {
    LatentGrid z(image.h, image.w, image.c);
    z.data = image.data;
    return z;
}

ImageGrid Backbone::decode(const LatentGrid& latent) const {
    ImageGrid img(latent.h, latent.w, latent.c);
    for (size_t i = 0; i < latent.data.size(); i++)
        img.data[i] = std::clamp(latent.data[i], 0.f, 1.f);
    return img;
}

StepResult Backbone::predict_step(const LatentGrid& z, const Conditioning& cond, int t,
                                  const SamplerSchedule& schedule) {
    if (t < 0 || t >= schedule.steps)
        fail(ErrorCode::step_out_of_range, "predict_step: t must be in [0,T)");
    LatentGrid eps = predict_noise(z, cond, t, schedule);
    const double a1 = schedule.alpha[t + 1];
    const double d1 = schedule.delta[t + 1];
    const double a0 = schedule.alpha[t];
    const double d0 = schedule.delta[t];
    StepResult r;
    r.z0 = LatentGrid(z.h, z.w, z.c);
    r.z_prev = LatentGrid(z.h, z.w, z.c);
    for (size_t i = 0; i < z.data.size(); i++) {
        double z0 = (z.data[i] - d1 * eps.data[i]) / a1;
        r.z0.data[i] = static_cast<float>(z0);
        r.z_prev.data[i] = static_cast<float>(a0 * z0 + d0 * eps.data[i]);
    }
    return r;
}

/*-------------------------------- ToyBackbone -------------------------------*/

ToyBackbone::ToyBackbone(const ToyOptions& opt) : opt_(opt) {
    if (opt_.downscale != 1 && opt_.downscale != 8)
        fail(ErrorCode::config, "toy backbone supports downscale 1 or 8");
    const int c = latent_channels();
    const int d = opt_.text_dim;
    Rng rng(splitmix64(opt_.seed ^ 0x746f79ULL));
    wq_ = Mat::identity(c);
    wo_ = Mat::identity(c);
    wk_ = Mat::randn(c, d, opt_.base_scale, rng);
    wv_ = Mat::randn(c, d, opt_.base_scale, rng);
}

LatentGrid ToyBackbone::encode(const ImageGrid& image) const {
    const int f = opt_.downscale;
    if (image.h % f != 0 || image.w % f != 0)
        fail(ErrorCode::dimension_mismatch,
             "encode: image dimensions must be divisible by " + std::to_string(f));
    if (f == 1) return Backbone::encode(image);
    LatentGrid z(image.h / f, image.w / f, image.c);
    const float inv = 1.f / static_cast<float>(f * f);
    for (int y = 0; y < z.h; y++)
        for (int x = 0; x < z.w; x++)
            for (int ch = 0; ch < z.c; ch++) {
                float acc = 0.f;
                for (int dy = 0; dy < f; dy++)
                    for (int dx = 0; dx < f; dx++)
                        acc += image.at(y * f + dy, x * f + dx, ch);
                z.at(y, x, ch) = acc * inv;
            }
    return z;
}

ImageGrid ToyBackbone::decode(const LatentGrid& latent) const {
    const int f = opt_.downscale;
    if (f == 1) return Backbone::decode(latent);
    ImageGrid img(latent.h * f, latent.w * f, latent.c);
    for (int y = 0; y < img.h; y++)
        for (int x = 0; x < img.w; x++)
            for (int ch = 0; ch < img.c; ch++)
                img.at(y, x, ch) = std::clamp(latent.at(y / f, x / f, ch), 0.f, 1.f);
    return img;
}

namespace {

std::vector<std::string> tokenize(const std::string& prompt) {
    std::vector<std::string> toks;
    std::string cur;
    for (char ch : prompt) {
        if (std::isalnum(static_cast<unsigned char>(ch))) {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            toks.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) toks.push_back(cur);
    return toks;
}

}  // namespace

TextEmbedding ToyBackbone::encode_text(const std::string& prompt) const {
    std::vector<std::string> toks = tokenize(prompt);
    if (toks.empty()) toks.push_back("");
    const int d = opt_.text_dim;
    TextEmbedding emb(static_cast<int>(toks.size()), d);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (size_t i = 0; i < toks.size(); i++) {
        Rng rng(splitmix64(hash_tag(toks[i]) ^ opt_.seed));
        for (int j = 0; j < d; j++)
            emb.tok(static_cast<int>(i), j) = inv_sqrt_d * rng.normal();
    }
    emb.repool();
    return emb;
}

std::vector<float> ToyBackbone::time_token(int t, int total_steps) const {
    const int d = opt_.text_dim;
    std::vector<float> tau(d, 0.f);
    const float tn = static_cast<float>(t) / static_cast<float>(std::max(1, total_steps));
    const float inv_sqrt_d = 1.f / std::sqrt(static_cast<float>(d));
    const int half = d / 2;
    for (int j = 0; j < half; j++) {
        float om = 6.2831853f * std::pow(2.f, static_cast<float>(j) / 4.f);
        tau[j] = inv_sqrt_d * std::sin(om * tn);
        tau[half + j] = inv_sqrt_d * std::cos(om * tn);
    }
    return tau;
}

std::vector<float> ToyBackbone::pooled_context(const TextEmbedding& emb, int t,
                                               int total_steps) const {
    const int d = opt_.text_dim;
    std::vector<float> ebar = time_token(t, total_steps);
    if (emb.toks > 0) {
        if (emb.dim != d)
            fail(ErrorCode::shape_mismatch, "toy backbone: embedding dim mismatch");
        for (int i = 0; i < emb.toks; i++)
            for (int j = 0; j < d; j++) ebar[j] += static_cast<float>(emb.tok(i, j));
        for (int j = 0; j < d; j++) ebar[j] /= static_cast<float>(emb.toks + 1);
    }
    return ebar;
}

Mat ToyBackbone::effective_proj(ProjTarget t) const {
    const Mat* base = nullptr;
    switch (t) {
        case ProjTarget::query: base = &wq_; break;
        case ProjTarget::key: base = &wk_; break;
        case ProjTarget::value: base = &wv_; break;
        case ProjTarget::output: base = &wo_; break;
    }
    Mat m = *base;
    auto it = adapters_.find(t);
    if (it != adapters_.end()) {
        const Mat& A = it->second.A;
        const Mat& B = it->second.B;
        for (int r = 0; r < m.rows; r++)
            for (int c = 0; c < m.cols; c++) {
                float acc = 0.f;
                for (int k = 0; k < A.cols; k++) acc += A.at(r, k) * B.at(k, c);
                m.at(r, c) += acc;
            }
    }
    return m;
}

LatentGrid ToyBackbone::forward_train(const LatentGrid& z, const TextEmbedding& emb, int t,
                                      const SamplerSchedule& schedule, ForwardCache& cache) const {
    const int c = latent_channels();
    if (z.c != c) fail(ErrorCode::shape_mismatch, "toy backbone: latent channel mismatch");
    Mat q = effective_proj(ProjTarget::query);
    Mat k = effective_proj(ProjTarget::key);
    Mat v = effective_proj(ProjTarget::value);
    Mat o = effective_proj(ProjTarget::output);

    cache.ebar = pooled_context(emb, t, schedule.steps);
    cache.u.assign(c, 0.f);
    cache.w.assign(c, 0.f);
    k.mul_vec(cache.ebar.data(), cache.u.data());
    v.mul_vec(cache.ebar.data(), cache.w.data());

    cache.s = LatentGrid(z.h, z.w, z.c);
    cache.phi = LatentGrid(z.h, z.w, z.c);
    cache.z = &z;
    LatentGrid eps(z.h, z.w, z.c);
    std::vector<float> tmp(c), out(c);
    const size_t cells = static_cast<size_t>(z.h) * z.w;
    for (size_t i = 0; i < cells; i++) {
        const float* zi = z.data.data() + i * c;
        float* si = cache.s.data.data() + i * c;
        float* pi = cache.phi.data.data() + i * c;
        q.mul_vec(zi, si);
        for (int ch = 0; ch < c; ch++) pi[ch] = cache.u[ch] * si[ch] + cache.w[ch];
        o.mul_vec(pi, out.data());
        std::copy(out.begin(), out.end(), eps.data.begin() + i * c);
    }
    return eps;
}

LatentGrid ToyBackbone::predict_noise(const LatentGrid& z, const Conditioning& cond, int t,
                                      const SamplerSchedule& schedule) {
    ForwardCache cache;
    LatentGrid eps_c = forward_train(z, cond.embedding, t, schedule, cache);
    if (cond.guidance_scale == 1.f) return eps_c;
    TextEmbedding empty;  // unconditional path: time token only
    ForwardCache ucache;
    LatentGrid eps_u = forward_train(z, empty, t, schedule, ucache);
    const float g = cond.guidance_scale;
    for (size_t i = 0; i < eps_c.data.size(); i++)
        eps_u.data[i] += g * (eps_c.data[i] - eps_u.data[i]);
    return eps_u;
}

void ToyBackbone::backward_train(const ForwardCache& cache, const LatentGrid& d_eps,
                                 std::map<ProjTarget, LoraPair>& grads) const {
    const int c = latent_channels();
    const int d = opt_.text_dim;
    Mat q = effective_proj(ProjTarget::query);
    Mat o = effective_proj(ProjTarget::output);

    const bool want_q = adapters_.count(ProjTarget::query) > 0;
    const bool want_k = adapters_.count(ProjTarget::key) > 0;
    const bool want_v = adapters_.count(ProjTarget::value) > 0;
    const bool want_o = adapters_.count(ProjTarget::output) > 0;

    std::vector<float> gu(c, 0.f), gw(c, 0.f);
    Mat gWq(c, c), gWo(c, c);
    std::vector<float> gphi(c), gs(c);
    const size_t cells = static_cast<size_t>(d_eps.h) * d_eps.w;
    for (size_t i = 0; i < cells; i++) {
        const float* ri = d_eps.data.data() + i * c;
        const float* si = cache.s.data.data() + i * c;
        const float* pi = cache.phi.data.data() + i * c;
        const float* zi = cache.z->data.data() + i * c;
        // gphi = Wo^T r
        for (int ch = 0; ch < c; ch++) {
            float acc = 0.f;
            for (int r = 0; r < c; r++) acc += o.at(r, ch) * ri[r];
            gphi[ch] = acc;
        }
        for (int ch = 0; ch < c; ch++) {
            gu[ch] += gphi[ch] * si[ch];
            gw[ch] += gphi[ch];
            gs[ch] = gphi[ch] * cache.u[ch];
        }
        if (want_o)
            for (int r = 0; r < c; r++)
                for (int ch = 0; ch < c; ch++) gWo.at(r, ch) += ri[r] * pi[ch];
        if (want_q)
            for (int r = 0; r < c; r++)
                for (int ch = 0; ch < c; ch++) gWq.at(r, ch) += gs[r] * zi[ch];
    }

    auto accumulate = [&](ProjTarget target, const Mat& gW) {
        const LoraPair& lp = adapters_.at(target);
        LoraPair& g = grads[target];
        if (g.A.rows == 0) {
            g.A = Mat(lp.A.rows, lp.A.cols);
            g.B = Mat(lp.B.rows, lp.B.cols);
        }
        // dA = gW B^T, dB = A^T gW
        for (int r = 0; r < lp.A.rows; r++)
            for (int k = 0; k < lp.A.cols; k++) {
                float acc = 0.f;
                for (int c2 = 0; c2 < gW.cols; c2++) acc += gW.at(r, c2) * lp.B.at(k, c2);
                g.A.at(r, k) += acc;
            }
        for (int k = 0; k < lp.B.rows; k++)
            for (int c2 = 0; c2 < lp.B.cols; c2++) {
                float acc = 0.f;
                for (int r = 0; r < lp.A.rows; r++) acc += lp.A.at(r, k) * gW.at(r, c2);
                g.B.at(k, c2) += acc;
            }
    };

    if (want_k) {
        Mat gWk(c, d);
        for (int r = 0; r < c; r++)
            for (int j = 0; j < d; j++) gWk.at(r, j) = gu[r] * cache.ebar[j];
        accumulate(ProjTarget::key, gWk);
    }
    if (want_v) {
        Mat gWv(c, d);
        for (int r = 0; r < c; r++)
            for (int j = 0; j < d; j++) gWv.at(r, j) = gw[r] * cache.ebar[j];
        accumulate(ProjTarget::value, gWv);
    }
    if (want_q) accumulate(ProjTarget::query, gWq);
    if (want_o) accumulate(ProjTarget::output, gWo);
}

uint64_t ToyBackbone::base_weights_hash() const {
    Fnv1a64 h;
    h.update(wq_.a);
    h.update(wk_.a);
    h.update(wv_.a);
    h.update(wo_.a);
    return h.digest();
}

/*------------------------------- OracleBackbone -----------------------------*/

OracleBackbone::OracleBackbone(LatentGrid injected_noise, int text_dim)
    : noise_(std::move(injected_noise)), text_dim_(text_dim) {}

TextEmbedding OracleBackbone::encode_text(const std::string& prompt) const {
    ToyOptions opt;
    opt.text_dim = text_dim_;
    return ToyBackbone(opt).encode_text(prompt);
}

LatentGrid OracleBackbone::predict_noise(const LatentGrid& z, const Conditioning&, int,
                                         const SamplerSchedule&) {
    if (!z.same_shape(noise_))
        fail(ErrorCode::shape_mismatch, "oracle backbone: latent shape differs from injected noise");
    return noise_;
}

/*--------------------------------- registry ---------------------------------*/

namespace {

struct RegisteredAdapter {
    BackboneFactory factory;
    void* user;
};

std::mutex g_registry_mutex;
std::unordered_map<std::string, RegisteredAdapter>& adapter_registry() {
    static std::unordered_map<std::string, RegisteredAdapter> reg;
    return reg;
}

const char* kDeclaredSeams[] = {"sd15-inpaint", "sd20-inpaint", "sdxl-inpaint", "flux-fill"};

}  // namespace

void register_backbone_adapter(const std::string& id, BackboneFactory factory, void* user) {
    std::lock_guard<std::mutex> lock(g_registry_mutex);
    adapter_registry()[id] = {factory, user};
}

bool backbone_id_known(const std::string& id) {
    if (id == "toy" || id == "toy-f8") return true;
    for (const char* s : kDeclaredSeams)
        if (id == s) return true;
    std::lock_guard<std::mutex> lock(g_registry_mutex);
    return adapter_registry().count(id) > 0;
}

std::shared_ptr<Backbone> create_backbone(const std::string& id, const ToyOptions& opt) {
    {
        std::lock_guard<std::mutex> lock(g_registry_mutex);
        auto it = adapter_registry().find(id);
        if (it != adapter_registry().end()) {
            auto bb = it->second.factory(it->second.user);
            if (!bb) fail(ErrorCode::backbone_unavailable,
                          "backbone adapter '" + id + "' failed to construct");
            return bb;
        }
    }
    if (id == "toy") {
        ToyOptions o = opt;
        o.downscale = 1;
        return std::make_shared<ToyBackbone>(o);
    }
    if (id == "toy-f8") {
        ToyOptions o = opt;
        o.downscale = 8;
        if (o.working_res == 0) o.working_res = 64;
        return std::make_shared<ToyBackbone>(o);
    }
    for (const char* s : kDeclaredSeams)
        if (id == s)
            fail(ErrorCode::backbone_unavailable,
                 "backbone '" + id + "' is a declared adapter seam with no implementation bound");
    fail(ErrorCode::config, "unknown backbone id: " + id);
}

}  // namespace sp
