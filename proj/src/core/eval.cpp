#include "eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dif.hpp"
#include "error.hpp"
#include "rng.hpp"

namespace sp {
namespace eval {

using nlohmann::json;

std::vector<float> Embedder::embed_image(const ImageGrid&) const {
    fail(ErrorCode::invalid_argument, "embedder '" + handle().name + "' has no image modality");
}

std::vector<float> Embedder::embed_text(const std::string&) const {
    fail(ErrorCode::invalid_argument, "embedder '" + handle().name + "' has no text modality");
}

namespace {

std::vector<float> normalize_or_fail(std::vector<float> v, const std::string& who) {
    double n2 = 0.0;
    for (float x : v) n2 += static_cast<double>(x) * x;
    double n = std::sqrt(n2);
    if (n < 1e-12) fail(ErrorCode::pipeline, who + ": produced a zero embedding");
    for (float& x : v) x = static_cast<float>(x / n);
    return v;
}

// 16x16x3 average-pooled features of the image
std::vector<float> pooled_pixels(const ImageGrid& img) {
    constexpr int G = 16;
    std::vector<float> feat(G * G * 3, 0.f);
    std::vector<int> cnt(G * G, 0);
    for (int y = 0; y < img.h; y++) {
        int gy = std::min(G - 1, y * G / std::max(1, img.h));
        for (int x = 0; x < img.w; x++) {
            int gx = std::min(G - 1, x * G / std::max(1, img.w));
            int cell = gy * G + gx;
            cnt[cell]++;
            for (int ch = 0; ch < 3; ch++)
                feat[cell * 3 + ch] += img.at(y, x, std::min(ch, img.c - 1));
        }
    }
    for (int cell = 0; cell < G * G; cell++)
        if (cnt[cell])
            for (int ch = 0; ch < 3; ch++) feat[cell * 3 + ch] /= static_cast<float>(cnt[cell]);
    return feat;
}

std::vector<float> random_projection(const std::vector<float>& feat, uint64_t seed, int dim) {
    std::vector<float> out(dim, 0.f);
    Rng rng(seed);
    for (int r = 0; r < dim; r++)
        for (size_t i = 0; i < feat.size(); i++)
            out[r] += feat[i] * static_cast<float>(rng.normal());
    return out;
}

std::vector<float> bag_of_words(const std::string& text, int dim) {
    std::vector<float> feat(dim, 0.f);
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        uint64_t h = hash_tag(cur);
        feat[h % dim] += 1.f;
        feat[splitmix64(h) % dim] += (splitmix64(h) >> 32 & 1) ? 1.f : -1.f;
        cur.clear();
    };
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        else
            flush();
    }
    flush();
    return feat;
}

}  // namespace

MockImageEmbedder::MockImageEmbedder(std::string name, uint64_t seed, int dim)
    : name_(std::move(name)), seed_(seed), dim_(dim) {}

std::vector<float> MockImageEmbedder::embed_image(const ImageGrid& image) const {
    return normalize_or_fail(random_projection(pooled_pixels(image), seed_, dim_), name_);
}

MockClipEmbedder::MockClipEmbedder(std::string name, uint64_t seed, int dim)
    : name_(std::move(name)), seed_(seed), dim_(dim) {}

std::vector<float> MockClipEmbedder::embed_image(const ImageGrid& image) const {
    return normalize_or_fail(random_projection(pooled_pixels(image), seed_, dim_), name_);
}

std::vector<float> MockClipEmbedder::embed_text(const std::string& text) const {
    std::vector<float> feat = bag_of_words(text, dim_ * 4);
    return normalize_or_fail(random_projection(feat, splitmix64(seed_ ^ 0x7e87ULL), dim_), name_);
}

double cosine(std::span<const float> u, std::span<const float> v) {
    if (u.size() != v.size())
        fail(ErrorCode::shape_mismatch, "cosine: vector sizes differ");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); i++) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu < 1e-24 || nv < 1e-24)
        fail(ErrorCode::invalid_argument, "cosine: zero-norm vector");
    // identical vectors score exactly 1.0, free of rounding
    if (std::equal(u.begin(), u.end(), v.begin())) return 1.0;
    return std::clamp(dot / std::sqrt(nu * nv), -1.0, 1.0);
}

ImageGrid crop_metric_region(const ImageGrid& result, const BinaryMask& mask, double ratio) {
    BinaryMask enlarged = dif::enlarge_mask(mask, ratio);
    auto [patch, _] = dif::crop_region(result, enlarged, 0);
    return patch;
}

void check_id_alignment(const std::vector<std::string>& expected,
                        const std::vector<std::string>& present) {
    std::set<std::string> have(present.begin(), present.end());
    std::vector<std::string> missing;
    for (const auto& id : expected)
        if (!have.count(id)) missing.push_back(id);
    if (!missing.empty()) {
        std::string msg = "missing result ids:";
        for (const auto& id : missing) msg += " " + id;
        fail(ErrorCode::id_misalignment, msg);
    }
}

std::vector<TaskReport> evaluate_run(const std::vector<EvalSample>& samples,
                                     const EmbedderSet& embedders, double crop_ratio,
                                     Instrumentation* instr) {
    if (samples.empty())
        fail(ErrorCode::invalid_argument, "evaluate_run: no samples to score");
    if (!embedders.clip || !embedders.dino)
        fail(ErrorCode::invalid_argument, "evaluate_run: embedders not bound");

    std::vector<TaskReport> reports;
    auto task_report = [&](const std::string& task) -> TaskReport& {
        for (auto& r : reports)
            if (r.task == task) return r;
        reports.push_back({task, 0, 0, 0, 0, {}});
        return reports.back();
    };

    for (const auto& s : samples) {
        if (s.sources.empty())
            fail(ErrorCode::invalid_argument, "evaluate_run: sample '" + s.id + "' has no sources");
        BinaryMask enlarged = dif::enlarge_mask(s.mask, crop_ratio);
        Box crop_box = dif::mask_bbox(enlarged);
        ImageGrid crop = crop_metric_region(s.result, s.mask, crop_ratio);
        if (instr) instr->crops.emplace_back(s.id, crop_box);

        std::vector<float> gen_clip = embedders.clip->embed_image(crop);
        std::vector<float> gen_dino = embedders.dino->embed_image(crop);
        std::vector<float> txt = embedders.clip->embed_text(s.prompt);

        EvalRecord rec;
        rec.sample_id = s.id;
        rec.task = s.task;
        rec.crop_box = crop_box;
        rec.clip_t = cosine(txt, gen_clip);
        double ci = 0.0, di = 0.0;
        for (const auto& src : s.sources) {
            ci += cosine(gen_clip, embedders.clip->embed_image(src));
            di += cosine(gen_dino, embedders.dino->embed_image(src));
        }
        rec.clip_i = ci / static_cast<double>(s.sources.size());
        rec.dino = di / static_cast<double>(s.sources.size());

        TaskReport& tr = task_report(s.task);
        tr.records.push_back(rec);
    }

    for (auto& tr : reports) {
        tr.n = static_cast<int>(tr.records.size());
        double st = 0, si = 0, sd = 0;
        for (const auto& r : tr.records) {
            st += r.clip_t;
            si += r.clip_i;
            sd += r.dino;
        }
        tr.mean_clip_t = st / tr.n;
        tr.mean_clip_i = si / tr.n;
        tr.mean_dino = sd / tr.n;
    }
    return reports;
}

std::string report_to_json(const std::vector<TaskReport>& reports) {
    json arr = json::array();
    for (const auto& tr : reports) {
        json records = json::array();
        for (const auto& r : tr.records)
            records.push_back({{"sample_id", r.sample_id},
                               {"task", r.task},
                               {"clip_t", r.clip_t},
                               {"clip_i", r.clip_i},
                               {"dino", r.dino},
                               {"crop_box", {r.crop_box.x0, r.crop_box.y0, r.crop_box.w,
                                             r.crop_box.h}}});
        arr.push_back({{"task", tr.task},
                       {"n", tr.n},
                       {"means",
                        {{"clip_t", tr.mean_clip_t},
                         {"clip_i", tr.mean_clip_i},
                         {"dino", tr.mean_dino}}},
                       {"records", records}});
    }
    return arr.dump(2);
}

std::string report_to_table(const std::vector<TaskReport>& reports) {
    std::ostringstream os;
    os << "Task                  n   CLIP-T   CLIP-I     DINO\n";
    for (const auto& tr : reports) {
        char line[128];
        std::snprintf(line, sizeof(line), "%-20s %3d   %.4f   %.4f   %.4f\n", tr.task.c_str(),
                      tr.n, tr.mean_clip_t, tr.mean_clip_i, tr.mean_dino);
        os << line;
    }
    return os.str();
}

void write_judge_requests(const std::vector<JudgeItem>& items, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write judge requests: " + path);
    for (const auto& it : items) {
        json line{{"id", it.id},
                  {"prompt", it.prompt},
                  {"image", it.image_path},
                  {"dimensions", {"color", "shape", "texture"}},
                  {"scale", {1, 5}}};
        out << line.dump() << "\n";
    }
}

}  // namespace eval
}  // namespace sp
