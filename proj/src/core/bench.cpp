#include "bench.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <map>

#include <json.hpp>

#include "error.hpp"
#include "image_io.hpp"
#include "rng.hpp"
#include "tas.hpp"

namespace fs = std::filesystem;

namespace sp {
namespace bench {

using nlohmann::json;

BackgroundManifest filter_backgrounds(const std::string& image_dir, int min_resolution,
                                      int min_box_side) {
    fs::path ann_path = fs::path(image_dir) / "annotations.json";
    std::ifstream in(ann_path);
    if (!in) fail(ErrorCode::io, "no annotations.json in " + image_dir);
    json ann;
    try {
        in >> ann;
    } catch (const std::exception& e) {
        fail(ErrorCode::io, "annotations.json is not valid JSON: " + std::string(e.what()));
    }
    if (!ann.is_array()) fail(ErrorCode::io, "annotations.json must be a JSON list");

    BackgroundManifest manifest;
    manifest.min_resolution = min_resolution;
    manifest.min_box_side = min_box_side;

    std::vector<std::string> errors;
    for (const auto& entry : ann) {
        std::string img_name;
        try {
            img_name = entry.at("image").get<std::string>();
            fs::path img_path = fs::path(image_dir) / img_name;
            auto [h, w] = png_dims(img_path.string());
            if (std::min(h, w) < min_resolution) continue;
            for (const auto& b : entry.at("boxes")) {
                if (!b.is_array() || b.size() != 4) {
                    errors.push_back(img_name + ": box is not [x,y,w,h]");
                    continue;
                }
                Box box{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
                if (box.w < min_box_side || box.h < min_box_side) continue;
                if (box.x0 < 0 || box.y0 < 0 || box.x0 + box.w > w || box.y0 + box.h > h) {
                    errors.push_back(img_name + ": box outside image bounds");
                    continue;
                }
                manifest.entries.push_back({img_path.string(), h, w, box});
            }
        } catch (const Error& e) {
            errors.push_back(img_name.empty() ? e.what() : img_name + ": " + e.what());
        } catch (const std::exception& e) {
            errors.push_back("bad annotation entry: " + std::string(e.what()));
        }
    }
    if (!errors.empty()) {
        std::string msg = "unreadable annotations:";
        for (const auto& e : errors) msg += "\n  " + e;
        fail(ErrorCode::io, msg);
    }
    return manifest;
}

const PromptSet& default_prompts() {
    static const PromptSet set{
        {"a [sks] {class}", "a photo of a [sks] {class}", "a [sks] {class} in the scene"},
        {"a red [sks] {class}", "a blue [sks] {class}", "a wooden [sks] {class}",
         "a furry [sks] {class}"},
    };
    return set;
}

namespace {

std::string expand_class(std::string s, const std::string& cls) {
    size_t pos;
    while ((pos = s.find("{class}")) != std::string::npos) s.replace(pos, 7, cls);
    return s;
}

PromptRecord make_prompt_record(const std::string& text) {
    PromptRecord rec;
    rec.text = text;
    rec.has_identity_token = contains_identity_token(text);
    std::string cur;
    auto flush = [&] {
        if (cur.empty()) return;
        for (const auto& cat : tas::category_order()) {
            const auto& lex = tas::category_lexicon(cat);
            if (std::find(lex.begin(), lex.end(), cur) != lex.end()) {
                rec.attributes_used.emplace_back(cat, cur);
                break;
            }
        }
        cur.clear();
    };
    for (char ch : text) {
        if (std::isalnum(static_cast<unsigned char>(ch)))
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        else
            flush();
    }
    flush();
    return rec;
}

std::vector<PromptRecord> build_prompts(const std::vector<std::string>& templates,
                                        const std::string& cls, const std::string& split,
                                        const std::string& subject_id) {
    if (templates.empty())
        fail(ErrorCode::invalid_argument,
             "assemble: subject '" + subject_id + "' has no " + split + " prompts");
    std::vector<PromptRecord> out;
    for (const auto& t : templates) {
        PromptRecord rec = make_prompt_record(expand_class(t, cls));
        if (split == "editing" && rec.attributes_used.empty())
            fail(ErrorCode::invalid_argument,
                 "assemble: editing prompt references no attribute word: " + rec.text);
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace

std::vector<BenchTuple> assemble(const std::vector<SubjectSpec>& subjects,
                                 const BackgroundManifest& backgrounds, int per_subject,
                                 const std::map<std::string, PromptSet>& prompt_sets,
                                 uint64_t seed, const std::string& masks_dir) {
    if (per_subject < 1)
        fail(ErrorCode::invalid_argument, "assemble: per_subject must be >= 1");

    // one candidate per background image: the largest qualifying box
    std::map<std::string, BackgroundEntry> best;
    for (const auto& e : backgrounds.entries) {
        auto it = best.find(e.image_path);
        if (it == best.end() || e.box.w * e.box.h > it->second.box.w * it->second.box.h)
            best[e.image_path] = e;
    }
    std::vector<BackgroundEntry> pool;
    for (const auto& [_, e] : best) pool.push_back(e);

    if (pool.size() < static_cast<size_t>(per_subject))
        fail(ErrorCode::insufficient_backgrounds,
             "assemble: " + std::to_string(pool.size()) + " backgrounds for " +
                 std::to_string(per_subject) + " draws per subject");

    if (!masks_dir.empty()) fs::create_directories(masks_dir);

    std::vector<BenchTuple> tuples;
    for (const auto& subj : subjects) {
        const PromptSet* prompts = &default_prompts();
        auto pit = prompt_sets.find(subj.id);
        if (pit != prompt_sets.end()) prompts = &pit->second;

        // seed stream keyed by subject id, independent of list order
        Rng rng = Rng(seed).fork("bench-" + subj.id);
        std::vector<size_t> idx(pool.size());
        for (size_t i = 0; i < idx.size(); i++) idx[i] = i;
        for (int k = 0; k < per_subject; k++) {
            size_t j = k + static_cast<size_t>(rng.uniform_int(0, idx.size() - 1 - k));
            std::swap(idx[k], idx[j]);
        }

        for (int k = 0; k < per_subject; k++) {
            const BackgroundEntry& bg = pool[idx[k]];
            BenchTuple t;
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%s-%04d", subj.id.c_str(), k);
            t.id = buf;
            t.subject_id = subj.id;
            t.subject_class = subj.class_name;
            t.background_path = bg.image_path;
            t.box = bg.box;
            t.img_h = bg.img_h;
            t.img_w = bg.img_w;
            t.split = (k % 2 == 0) ? "identity" : "editing";
            t.prompts = build_prompts(t.split == "identity" ? prompts->identity
                                                            : prompts->editing,
                                      subj.class_name, t.split, subj.id);
            if (!masks_dir.empty()) {
                BinaryMask m(bg.img_h, bg.img_w);
                for (int y = bg.box.y0; y < bg.box.y0 + bg.box.h; y++)
                    for (int x = bg.box.x0; x < bg.box.x0 + bg.box.w; x++) m.at(y, x) = 1;
                t.mask_path = (fs::path(masks_dir) / (t.id + ".png")).string();
                save_mask_png(t.mask_path, m);
            }
            tuples.push_back(std::move(t));
        }
    }
    return tuples;
}

void save_benchmark_manifest(const std::vector<BenchTuple>& tuples, const std::string& path) {
    json arr = json::array();
    for (const auto& t : tuples) {
        json prompts = json::array();
        for (const auto& p : t.prompts) prompts.push_back(p.text);
        arr.push_back({{"id", t.id},
                       {"subject", t.subject_id},
                       {"class", t.subject_class},
                       {"background", t.background_path},
                       {"mask", t.mask_path},
                       {"box", {t.box.x0, t.box.y0, t.box.w, t.box.h}},
                       {"image_dims", {t.img_h, t.img_w}},
                       {"split", t.split},
                       {"prompts", prompts}});
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write benchmark manifest: " + path);
    out << arr.dump(2) << "\n";
}

std::vector<BenchTuple> load_benchmark_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read benchmark manifest: " + path);
    json arr;
    try {
        in >> arr;
    } catch (const std::exception& e) {
        fail(ErrorCode::io, "benchmark manifest is not valid JSON: " + std::string(e.what()));
    }
    std::vector<BenchTuple> tuples;
    for (const auto& j : arr) {
        BenchTuple t;
        t.id = j.at("id").get<std::string>();
        t.subject_id = j.at("subject").get<std::string>();
        t.subject_class = j.value("class", "");
        t.background_path = j.at("background").get<std::string>();
        t.mask_path = j.value("mask", "");
        auto b = j.at("box");
        t.box = Box{b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()};
        if (j.contains("image_dims")) {
            t.img_h = j["image_dims"][0].get<int>();
            t.img_w = j["image_dims"][1].get<int>();
        }
        t.split = j.at("split").get<std::string>();
        for (const auto& p : j.at("prompts")) t.prompts.push_back(make_prompt_record(p.get<std::string>()));
        tuples.push_back(std::move(t));
    }
    return tuples;
}

}  // namespace bench
}  // namespace sp
