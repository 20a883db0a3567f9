#include "adm.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "error.hpp"
#include "hash.hpp"
#include "image_io.hpp"
#include "rng.hpp"

namespace fs = std::filesystem;

namespace sp {
namespace adm {

using nlohmann::json;

namespace {

const char* kExtractInstruction =
    "List the visual attributes of the subject in the provided images as JSON "
    "{\"categories\":{\"color\":[],\"material\":[],\"texture\":[],\"shape\":[],\"accessory\":[]}}.";

std::string to_lower(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

// lowercase + dedup, order preserved
std::vector<std::string> normalize_words(const json& arr) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& w : arr) {
        std::string s = to_lower(w.get<std::string>());
        if (s.empty() || seen.count(s)) continue;
        seen.insert(s);
        out.push_back(s);
    }
    return out;
}

AttributeDictionary parse_dictionary_response(const json& response,
                                              const std::string& subject_class) {
    if (!response.is_object() || !response.contains("categories") ||
        !response["categories"].is_object())
        fail(ErrorCode::malformed_vlm_response, "vlm response missing 'categories' object");
    AttributeDictionary dict;
    dict.subject_class = subject_class;
    const auto& known = dictionary_categories();
    for (const auto& [name, words] : response["categories"].items()) {
        if (std::find(known.begin(), known.end(), name) == known.end())
            fail(ErrorCode::malformed_vlm_response, "vlm response has unknown category: " + name);
        if (!words.is_array())
            fail(ErrorCode::malformed_vlm_response, "vlm category '" + name + "' is not an array");
        for (const auto& w : words)
            if (!w.is_string())
                fail(ErrorCode::malformed_vlm_response,
                     "vlm category '" + name + "' holds a non-string entry");
        dict.categories[name] = normalize_words(words);
    }
    for (const auto& name : known)
        if (!dict.categories.count(name)) dict.categories[name] = {};
    return dict;
}

}  // namespace

AttributeDictionary extract_dictionary(const std::vector<ImageGrid>& subject_images,
                                       const std::string& subject_class, VlmClient& vlm) {
    if (subject_images.empty())
        fail(ErrorCode::invalid_argument, "extract_dictionary: need at least one subject image");
    if (subject_class.empty())
        fail(ErrorCode::invalid_argument, "extract_dictionary: subject class must be nonempty");

    json images = json::array();
    for (const auto& img : subject_images) {
        Fnv1a64 h;
        h.update(img.data);
        images.push_back({{"h", img.h}, {"w", img.w}, {"c", img.c}, {"pixels_fnv", h.hex()}});
    }
    VlmRequest req;
    req.id = "extract-" + hash_hex(subject_class);
    req.task = "extract_attributes";
    req.payload = {{"subject_class", subject_class},
                   {"instruction", kExtractInstruction},
                   {"images", images}};

    AttributeDictionary dict;
    try {
        dict = parse_dictionary_response(vlm.complete(req), subject_class);
    } catch (const Error& e) {
        if (e.code() != ErrorCode::malformed_vlm_response) throw;
        // one retry on schema failure
        dict = parse_dictionary_response(vlm.complete(req), subject_class);
    }
    dict.vlm_model = vlm.model_id();
    dict.prompt_hash = hash_hex(kExtractInstruction);
    return dict;
}

namespace {

std::string render_prompt(const std::vector<std::pair<std::string, std::string>>& attrs,
                          const std::string& subject_class) {
    // "a {attr1} {class}" for one attribute, "a {attr1} ({attr2}, ...) {class}" beyond
    std::string s = "a " + attrs[0].second;
    if (attrs.size() > 1) {
        s += " (";
        for (size_t i = 1; i < attrs.size(); i++) {
            if (i > 1) s += ", ";
            s += attrs[i].second;
        }
        s += ")";
    }
    return s + " " + subject_class;
}

size_t count_ordered_arrangements(size_t m, int max_k) {
    size_t total = 0;
    for (int k = 1; k <= max_k && static_cast<size_t>(k) <= m; k++) {
        size_t p = 1;
        for (int i = 0; i < k; i++) p *= m - i;
        total += p;
    }
    return total;
}

}  // namespace

std::vector<PromptRecord> compose_prompts(const AttributeDictionary& dictionary, int n,
                                          VlmClient* vlm, uint64_t rng_seed) {
    if (n < 1) fail(ErrorCode::invalid_argument, "compose_prompts: n must be >= 1");
    if (dictionary.empty() || dictionary.subject_class.empty())
        fail(ErrorCode::invalid_argument, "compose_prompts: dictionary is empty");

    std::vector<std::pair<std::string, std::string>> pool;  // (category, word)
    for (const auto& cat : dictionary_categories()) {
        const auto* ws = dictionary.words(cat);
        if (!ws) continue;
        for (const auto& w : *ws) pool.emplace_back(cat, w);
    }

    if (vlm) {
        VlmRequest req;
        req.id = "compose-" + hash_hex(dictionary.subject_class);
        req.task = "compose_prompts";
        req.payload = {{"subject_class", dictionary.subject_class}, {"n", n}};
        try {
            json resp = vlm->complete(req);
            if (resp.contains("prompts") && resp["prompts"].is_array() &&
                resp["prompts"].size() == static_cast<size_t>(n)) {
                std::vector<PromptRecord> out;
                for (const auto& p : resp["prompts"]) {
                    PromptRecord rec;
                    rec.text = p.get<std::string>();
                    if (contains_identity_token(rec.text))
                        fail(ErrorCode::malformed_vlm_response,
                             "vlm composed a prompt containing the identity token");
                    out.push_back(rec);
                }
                return out;
            }
        } catch (const Error& e) {
            if (e.code() != ErrorCode::vlm_unavailable) throw;
            // fall through to the template composer
        }
    }

    const int max_k = 3;
    if (count_ordered_arrangements(pool.size(), max_k) < static_cast<size_t>(n))
        fail(ErrorCode::insufficient_combinations,
             "compose_prompts: dictionary supports fewer than " + std::to_string(n) +
                 " distinct prompts");

    Rng rng(rng_seed);
    std::vector<PromptRecord> out;
    std::set<std::string> seen;
    int attempts = 0;
    while (static_cast<int>(out.size()) < n) {
        if (++attempts > 100000)
            fail(ErrorCode::insufficient_combinations,
                 "compose_prompts: could not reach " + std::to_string(n) + " distinct prompts");
        int k = static_cast<int>(rng.uniform_int(1, std::min<int64_t>(max_k, pool.size())));
        std::vector<std::pair<std::string, std::string>> attrs;
        std::set<size_t> used;
        while (static_cast<int>(attrs.size()) < k) {
            size_t idx = static_cast<size_t>(rng.uniform_int(0, pool.size() - 1));
            if (used.count(idx)) continue;
            used.insert(idx);
            attrs.push_back(pool[idx]);
        }
        PromptRecord rec;
        rec.text = render_prompt(attrs, dictionary.subject_class);
        rec.attributes_used = attrs;
        rec.has_identity_token = false;
        if (contains_identity_token(rec.text)) continue;
        if (!seen.insert(rec.text).second) continue;
        out.push_back(std::move(rec));
    }
    return out;
}

RegularizationSet synthesize_regularization(const std::vector<PromptRecord>& prompts,
                                            Backbone& generator, const SynthesisOptions& options,
                                            uint64_t seed) {
    if (prompts.empty())
        fail(ErrorCode::invalid_argument, "synthesize_regularization: no prompts");
    options.schedule.validate();

    RegularizationSet set;
    set.target_count = static_cast<int>(prompts.size());
    set.provenance = generator.name();

    const int f = generator.latent_downscale();
    const int size = options.image_size;
    if (size % f != 0)
        fail(ErrorCode::config, "synthesize_regularization: image size not divisible by codec factor");

    std::vector<std::string> failures;
    for (size_t i = 0; i < prompts.size(); i++) {
        if (prompts[i].has_identity_token || contains_identity_token(prompts[i].text))
            fail(ErrorCode::invalid_argument,
                 "synthesize_regularization: prompt " + std::to_string(i) +
                     " carries the identity token");
        uint64_t sample_seed = splitmix64(seed ^ (0x5eedULL + i));
        try {
            Conditioning cond;
            cond.embedding = generator.encode_text(prompts[i].text);
            Rng rng(sample_seed);
            LatentGrid z = gaussian_latent(size / f, size / f, 3, rng);
            for (int t = options.schedule.steps - 1; t >= 0; t--)
                z = generator.predict_step(z, cond, t, options.schedule).z_prev;
            RegularizationSample s;
            s.image = generator.decode(z);
            s.prompt = prompts[i];
            s.seed = sample_seed;
            // centered box mask with a seeded area fraction
            Rng mrng = Rng(sample_seed).fork("mask");
            double area = options.mask_policy.min_area +
                          (options.mask_policy.max_area - options.mask_policy.min_area) *
                              mrng.uniform();
            int side = std::max(1, static_cast<int>(std::lround(size * std::sqrt(area))));
            side = std::min(side, size);
            int off = (size - side) / 2;
            s.mask = BinaryMask(size, size);
            for (int y = off; y < off + side; y++)
                for (int x = off; x < off + side; x++) s.mask.at(y, x) = 1;
            set.samples.push_back(std::move(s));
        } catch (const Error& e) {
            failures.push_back("sample " + std::to_string(i) + ": " + e.what());
        }
    }
    if (failures.size() * 10 > prompts.size()) {
        std::string msg = "synthesize_regularization: too many failures:";
        for (const auto& f2 : failures) msg += "\n  " + f2;
        fail(ErrorCode::pipeline, msg);
    }
    if (!failures.empty()) set.target_count = static_cast<int>(set.samples.size());
    return set;
}

/*-------------------------------- persistence -------------------------------*/

void save_dictionary(const AttributeDictionary& dict, const std::string& path) {
    json j;
    j["subject_class"] = dict.subject_class;
    j["categories"] = json::object();
    for (const auto& [cat, words] : dict.categories) j["categories"][cat] = words;
    j["provenance"] = {{"vlm_model", dict.vlm_model}, {"prompt_hash", dict.prompt_hash}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write dictionary: " + path);
    out << j.dump(2) << "\n";
}

AttributeDictionary load_dictionary(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read dictionary: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail(ErrorCode::io, "dictionary is not valid JSON: " + std::string(e.what()));
    }
    AttributeDictionary dict;
    dict.subject_class = j.value("subject_class", "");
    for (auto& [cat, words] : j.at("categories").items())
        dict.categories[cat] = normalize_words(words);
    if (j.contains("provenance")) {
        dict.vlm_model = j["provenance"].value("vlm_model", "");
        dict.prompt_hash = j["provenance"].value("prompt_hash", "");
    }
    return dict;
}

namespace {

std::string sample_name(size_t i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04zu", i);
    return buf;
}

}  // namespace

void save_regularization_set(const RegularizationSet& set, const AttributeDictionary& dictionary,
                             const std::string& dir) {
    fs::create_directories(fs::path(dir) / "images");
    fs::create_directories(fs::path(dir) / "masks");
    json manifest;
    manifest["count"] = set.samples.size();
    manifest["provenance"] = set.provenance;
    manifest["samples"] = json::array();
    for (size_t i = 0; i < set.samples.size(); i++) {
        const auto& s = set.samples[i];
        std::string name = sample_name(i);
        std::string img_rel = "images/" + name + ".png";
        std::string mask_rel = "masks/" + name + ".png";
        save_image_png((fs::path(dir) / img_rel).string(), s.image);
        save_mask_png((fs::path(dir) / mask_rel).string(), s.mask);
        json attrs = json::array();
        for (const auto& [cat, word] : s.prompt.attributes_used)
            attrs.push_back({{"category", cat}, {"word", word}});
        manifest["samples"].push_back({{"id", name},
                                       {"image", img_rel},
                                       {"mask", mask_rel},
                                       {"prompt", s.prompt.text},
                                       {"attributes", attrs},
                                       {"seed", s.seed}});
    }
    save_dictionary(dictionary, (fs::path(dir) / "dictionary.json").string());
    std::ofstream out(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write manifest in " + dir);
    out << manifest.dump(2) << "\n";
}

RegularizationSet load_regularization_set(const std::string& dir) {
    std::ifstream in(fs::path(dir) / "manifest.json");
    if (!in) fail(ErrorCode::io, "no manifest.json in " + dir);
    json manifest;
    try {
        in >> manifest;
    } catch (const std::exception& e) {
        fail(ErrorCode::io, "manifest is not valid JSON: " + std::string(e.what()));
    }
    RegularizationSet set;
    set.target_count = manifest.value("count", 0);
    set.provenance = manifest.value("provenance", "");
    for (const auto& s : manifest.at("samples")) {
        RegularizationSample sample;
        sample.image = load_image_png((fs::path(dir) / s.at("image").get<std::string>()).string());
        sample.mask = load_mask_png((fs::path(dir) / s.at("mask").get<std::string>()).string());
        sample.prompt.text = s.at("prompt").get<std::string>();
        sample.prompt.has_identity_token = false;
        if (contains_identity_token(sample.prompt.text))
            fail(ErrorCode::pipeline,
                 "regularization manifest contains an identity-token prompt: " + sample.prompt.text);
        if (s.contains("attributes"))
            for (const auto& a : s["attributes"])
                sample.prompt.attributes_used.emplace_back(a.at("category").get<std::string>(),
                                                           a.at("word").get<std::string>());
        sample.seed = s.value("seed", 0ULL);
        set.samples.push_back(std::move(sample));
    }
    if (static_cast<int>(set.samples.size()) != set.target_count)
        fail(ErrorCode::pipeline, "regularization manifest count does not match samples");
    return set;
}

}  // namespace adm
}  // namespace sp
