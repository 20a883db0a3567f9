#include "runner.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "adm.hpp"
#include "bench.hpp"
#include "dif.hpp"
#include "dmlt.hpp"
#include "error.hpp"
#include "eval.hpp"
#include "hash.hpp"
#include "image_io.hpp"
#include "rng.hpp"

#include <cmath>
#include <cstdio>

namespace fs = std::filesystem;

namespace sp {

using nlohmann::json;

namespace {

bool is_mask_file(const fs::path& p) {
    std::string stem = p.stem().string();
    return stem.size() > 5 && stem.substr(stem.size() - 5) == "_mask";
}

// sorted list of image files in a subject directory, masks excluded
std::vector<fs::path> list_subject_images(const std::string& dir) {
    if (!fs::is_directory(dir))
        fail(ErrorCode::invalid_argument, "subject directory not found: " + dir);
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file() || e.path().extension() != ".png") continue;
        if (is_mask_file(e.path())) continue;
        files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty())
        fail(ErrorCode::invalid_argument, "no subject images (*.png) in " + dir);
    return files;
}

BinaryMask default_subject_mask(int h, int w, uint64_t seed) {
    // same centered-box policy as the regularization masks
    Rng rng = Rng(seed).fork("subject-mask");
    double area = 0.4 + 0.3 * rng.uniform();
    int side_h = std::max(1, static_cast<int>(std::lround(h * std::sqrt(area))));
    int side_w = std::max(1, static_cast<int>(std::lround(w * std::sqrt(area))));
    BinaryMask m(h, w);
    int oy = (h - side_h) / 2, ox = (w - side_w) / 2;
    for (int y = oy; y < oy + side_h; y++)
        for (int x = ox; x < ox + side_w; x++) m.at(y, x) = 1;
    return m;
}

std::string expand_class(std::string s, const std::string& cls) {
    size_t pos;
    while ((pos = s.find("{class}")) != std::string::npos) s.replace(pos, 7, cls);
    return s;
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorCode::io, "cannot write " + path);
    out << j.dump(2) << "\n";
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot read " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        fail(ErrorCode::io, path + " is not valid JSON: " + std::string(e.what()));
    }
    return j;
}

}  // namespace

std::shared_ptr<Backbone> Runner::make_backbone(const std::string& checkpoint_dir) const {
    auto backbone = create_backbone(cfg_.backbone.id, cfg_.toy_options());
    if (!checkpoint_dir.empty()) {
        auto* toy = dynamic_cast<ToyBackbone*>(backbone.get());
        if (!toy)
            fail(ErrorCode::pipeline,
                 "backbone '" + cfg_.backbone.id + "' cannot load adapter checkpoints");
        AdapterSet adapters;
        train::CheckpointMeta meta = train::load_checkpoint(checkpoint_dir, adapters);
        if (meta.backbone_id != backbone->name())
            fail(ErrorCode::pipeline, "checkpoint was trained for backbone '" + meta.backbone_id +
                                          "', config asks for '" + backbone->name() + "'");
        if (meta.text_dim != toy->text_dim())
            fail(ErrorCode::pipeline, "checkpoint text_dim differs from config");
        toy->set_adapters(std::move(adapters));
    }
    return backbone;
}

Conditioning Runner::build_conditioning(const std::string& prompt, Backbone& backbone,
                                        const std::string& dictionary_path, bool& tas_applied,
                                        std::string& matched_category) const {
    tas_applied = false;
    matched_category.clear();
    Conditioning cond;
    cond.guidance_scale = static_cast<float>(cfg_.guidance_scale);
    if (!cfg_.tas.enabled || dictionary_path.empty() || !fs::exists(dictionary_path)) {
        cond.embedding = backbone.encode_text(prompt);
        return cond;
    }
    AttributeDictionary dict = adm::load_dictionary(dictionary_path);

    tas::Matcher matcher;
    std::shared_ptr<VlmClient> client;
    if (cfg_.tas.matcher == "vlm") client = make_vlm_client(cfg_.vlm);
    std::string tmpl = cfg_.tas.eliminate_template;
    matcher = [this, client, tmpl](const std::string& p, const AttributeDictionary& d) {
        if (client) {
            VlmRequest req;
            req.id = "match-" + hash_hex(p);
            req.task = "match_attributes";
            json dict_json = json::object();
            for (const auto& [cat, words] : d.categories) dict_json[cat] = words;
            req.payload = {{"prompt", p},
                           {"subject_class", d.subject_class},
                           {"dictionary", dict_json}};
            try {
                json resp = client->complete(req);
                tas::AttributeMatch m;
                for (const auto& w : resp.value("matched_words", json::array()))
                    m.matched_words.push_back(w.get<std::string>());
                m.category = resp.value("category", "");
                if (!m.matched_words.empty())
                    m.eliminate_prompt =
                        tas::render_eliminate_prompt(tmpl, m.matched_words, d.subject_class);
                return m;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::vlm_unavailable) throw;
                // fall back to the keyword matcher
            }
        }
        return tas::match_attributes_keyword(p, d, tmpl);
    };

    auto result = tas::substitute(
        prompt, dict, [&backbone](const std::string& p) { return backbone.encode_text(p); },
        matcher, tas::decompose_mode_from_name(cfg_.tas.mode),
        static_cast<float>(cfg_.guidance_scale));
    tas_applied = result.decomposed;
    matched_category = result.match.category;
    return result.conditioning;
}

Runner::AdmArtifacts Runner::run_adm(const std::string& subject_dir,
                                     const std::string& subject_class,
                                     const std::string& out_dir) {
    std::string cls = subject_class.empty() ? cfg_.subject.class_name : subject_class;
    std::vector<ImageGrid> images;
    for (const auto& p : list_subject_images(subject_dir)) images.push_back(load_image_png(p.string()));

    auto client = make_vlm_client(cfg_.vlm);
    if (!client)
        fail(ErrorCode::vlm_unavailable, "adm requires a vlm client (vlm.mode is 'none')");

    AttributeDictionary dict = adm::extract_dictionary(images, cls, *client);
    std::vector<PromptRecord> prompts =
        adm::compose_prompts(dict, cfg_.adm.reg_count, client.get(), cfg_.seeds.adm);

    auto backbone = make_backbone("");
    adm::SynthesisOptions opt;
    opt.image_size = cfg_.adm.image_size;
    opt.schedule = cfg_.make_schedule();
    opt.mask_policy.min_area = cfg_.adm.mask_area_min;
    opt.mask_policy.max_area = cfg_.adm.mask_area_max;
    adm::RegularizationSet set =
        adm::synthesize_regularization(prompts, *backbone, opt, cfg_.seeds.adm);

    fs::create_directories(out_dir);
    adm::save_regularization_set(set, dict, out_dir);

    AdmArtifacts art;
    art.reg_dir = out_dir;
    art.dictionary_path = (fs::path(out_dir) / "dictionary.json").string();
    art.sample_count = static_cast<int>(set.samples.size());
    return art;
}

std::string Runner::run_finetune(const std::string& subject_dir, const std::string& reg_dir,
                                 const std::string& out_dir) {
    std::string prompt = expand_class(cfg_.subject.prompt_template, cfg_.subject.class_name);
    if (!contains_identity_token(prompt))
        fail(ErrorCode::config,
             "subject.prompt_template must contain the identity token: " + prompt);

    std::vector<train::TrainSample> subjects;
    for (const auto& p : list_subject_images(subject_dir)) {
        train::TrainSample s;
        s.image = load_image_png(p.string());
        fs::path mask_path = p.parent_path() / (p.stem().string() + "_mask.png");
        if (fs::exists(mask_path)) {
            s.mask = load_mask_png(mask_path.string());
            if (s.mask.h != s.image.h || s.mask.w != s.image.w)
                fail(ErrorCode::shape_mismatch, "mask dims differ from image: " + mask_path.string());
        } else {
            s.mask = default_subject_mask(s.image.h, s.image.w,
                                          cfg_.seeds.train ^ hash_tag(p.filename().string()));
        }
        s.prompt.text = prompt;
        s.prompt.has_identity_token = true;
        s.source = train::SampleSource::subject;
        subjects.push_back(std::move(s));
    }

    std::vector<train::TrainSample> reg;
    bool use_reg = cfg_.training.use_regularization && !reg_dir.empty();
    if (use_reg) reg = train::to_train_samples(adm::load_regularization_set(reg_dir));

    auto backbone = make_backbone("");
    auto* toy = dynamic_cast<ToyBackbone*>(backbone.get());
    if (!toy)
        fail(ErrorCode::pipeline,
             "backbone '" + cfg_.backbone.id + "' does not support adapter fine-tuning");

    train::FinetuneOptions opt = cfg_.finetune_options();
    opt.use_regularization = use_reg;
    train::FinetuneResult result =
        train::finetune(subjects, reg, cfg_.adapter_config(), cfg_.loss_weights(), opt, *toy);

    fs::create_directories(out_dir);
    train::CheckpointMeta meta;
    meta.backbone_id = toy->name();
    meta.text_dim = toy->text_dim();
    meta.rank = cfg_.adapters.rank;
    meta.targets = cfg_.adapters.targets;
    meta.base_weights_hash = result.base_hash_after;
    meta.seed = opt.seed;
    meta.steps = opt.steps;
    meta.final_loss = result.loss_log.empty() ? 0.0 : result.loss_log.back();
    train::save_checkpoint(out_dir, result.adapters, meta);

    {
        std::ofstream log(fs::path(out_dir) / "training_log.jsonl", std::ios::trunc);
        for (size_t i = 0; i < result.loss_log.size(); i++)
            log << json{{"step", i}, {"loss", result.loss_log[i]}}.dump() << "\n";
    }
    if (use_reg) {
        fs::path dict_src = fs::path(reg_dir) / "dictionary.json";
        if (fs::exists(dict_src))
            fs::copy_file(dict_src, fs::path(out_dir) / "dictionary.json",
                          fs::copy_options::overwrite_existing);
    }
    return out_dir;
}

Runner::InpaintInfo Runner::run_inpaint(const std::string& background_png,
                                        const std::string& mask_png, const std::string& prompt,
                                        const std::string& checkpoint_dir,
                                        const std::string& out_png) {
    auto backbone = make_backbone(checkpoint_dir);

    std::string dict_path;
    if (!checkpoint_dir.empty()) {
        fs::path p = fs::path(checkpoint_dir) / "dictionary.json";
        if (fs::exists(p)) dict_path = p.string();
    }

    InpaintInfo info;
    info.out_png = out_png;

    dif::InpaintRequest req;
    req.background = load_image_png(background_png);
    req.mask = load_mask_png(mask_png);
    req.conditioning =
        build_conditioning(prompt, *backbone, dict_path, info.tas_applied, info.matched_category);
    req.schedule = cfg_.make_schedule();
    req.seed = cfg_.seeds.inpaint;
    req.enlarge_ratio = cfg_.dif.enlarge_ratio;
    req.gch_full_frame = cfg_.dif.gch_full_frame;
    req.capture_trace = cfg_.dif.dump_trace;

    dif::InpaintResult result = cfg_.dif.enabled ? dif::inpaint(req, *backbone)
                                                 : dif::inpaint_baseline(req, *backbone);
    info.lcg_steps = result.lcg_steps;
    info.gch_steps = result.gch_steps;

    if (fs::path(out_png).has_parent_path())
        fs::create_directories(fs::path(out_png).parent_path());
    if (cfg_.dif.dump_trace) {
        fs::path trace_dir = fs::path(out_png).parent_path() / "trace";
        fs::create_directories(trace_dir);
        for (const auto& e : result.trace) {
            char name[48];
            std::snprintf(name, sizeof(name), "%s_t%03d.dmlt",
                          e.stage == dif::Stage::LCG ? "lcg" : "gch", e.step_t);
            dmlt_write((trace_dir / name).string(), to_dmlt(e.blended_latent));
        }
    }
    save_image_png(out_png, result.image);
    write_json_file(json{{"prompt", prompt},
                         {"tas_applied", info.tas_applied},
                         {"matched_category", info.matched_category},
                         {"lcg_steps", result.lcg_steps},
                         {"gch_steps", result.gch_steps},
                         {"dif_enabled", cfg_.dif.enabled},
                         {"seed", cfg_.seeds.inpaint},
                         {"config_hash", cfg_.hash()}},
                    out_png + ".json");
    return info;
}

ImageGrid Runner::inpaint_image(const ImageGrid& background, const BinaryMask& mask,
                                const std::string& prompt, const std::string& checkpoint_dir) {
    auto backbone = make_backbone(checkpoint_dir);
    std::string dict_path;
    if (!checkpoint_dir.empty()) {
        fs::path p = fs::path(checkpoint_dir) / "dictionary.json";
        if (fs::exists(p)) dict_path = p.string();
    }
    bool tas_applied = false;
    std::string matched;
    dif::InpaintRequest req;
    req.background = background;
    req.mask = mask;
    req.conditioning = build_conditioning(prompt, *backbone, dict_path, tas_applied, matched);
    req.schedule = cfg_.make_schedule();
    req.seed = cfg_.seeds.inpaint;
    req.enlarge_ratio = cfg_.dif.enlarge_ratio;
    req.gch_full_frame = cfg_.dif.gch_full_frame;
    return cfg_.dif.enabled ? dif::inpaint(req, *backbone).image
                            : dif::inpaint_baseline(req, *backbone).image;
}

std::string Runner::run_inpaint_multi(const std::string& requests_json,
                                      const std::string& out_png) {
    json spec = read_json_file(requests_json);
    if (!spec.is_object() || !spec.contains("background"))
        fail(ErrorCode::invalid_argument,
             "multi-inpaint manifest must be {background, requests:[...]}");
    ImageGrid current = load_image_png(spec.at("background").get<std::string>());

    const json& requests = spec.value("requests", json::array());
    for (size_t i = 0; i < requests.size(); i++) {
        const json& r = requests[i];
        try {
            std::string ckpt = r.value("checkpoint", "");
            auto backbone = make_backbone(ckpt);
            std::string dict_path;
            if (!ckpt.empty() && fs::exists(fs::path(ckpt) / "dictionary.json"))
                dict_path = (fs::path(ckpt) / "dictionary.json").string();

            dif::InpaintRequest req;
            req.background = current;
            req.mask = load_mask_png(r.at("mask").get<std::string>());
            bool tas_applied = false;
            std::string matched;
            req.conditioning = build_conditioning(r.at("prompt").get<std::string>(), *backbone,
                                                  dict_path, tas_applied, matched);
            req.schedule = cfg_.make_schedule();
            req.seed = r.contains("seed") ? r.at("seed").get<uint64_t>() : cfg_.seeds.inpaint + i;
            req.enlarge_ratio = cfg_.dif.enlarge_ratio;
            req.gch_full_frame = cfg_.dif.gch_full_frame;
            current = cfg_.dif.enabled ? dif::inpaint(req, *backbone).image
                                       : dif::inpaint_baseline(req, *backbone).image;
        } catch (const Error& e) {
            fail(e.code(), "multi-inpaint request " + std::to_string(i) + ": " + e.what());
        }
    }

    if (fs::path(out_png).has_parent_path())
        fs::create_directories(fs::path(out_png).parent_path());
    save_image_png(out_png, current);
    return out_png;
}

std::string Runner::run_bench(const std::string& corpus_dir, const std::string& subjects_json,
                              const std::string& out_dir) {
    json sj = read_json_file(subjects_json);
    if (!sj.is_array() || sj.empty())
        fail(ErrorCode::invalid_argument, "subjects file must be a nonempty JSON list");
    std::vector<bench::SubjectSpec> subjects;
    std::map<std::string, bench::PromptSet> prompt_sets;
    for (const auto& s : sj) {
        bench::SubjectSpec spec;
        spec.id = s.at("id").get<std::string>();
        spec.class_name = s.value("class", spec.id);
        subjects.push_back(spec);
        if (s.contains("prompts")) {
            bench::PromptSet ps;
            for (const auto& p : s["prompts"].value("identity", json::array()))
                ps.identity.push_back(p.get<std::string>());
            for (const auto& p : s["prompts"].value("editing", json::array()))
                ps.editing.push_back(p.get<std::string>());
            prompt_sets[spec.id] = ps;
        }
    }

    bench::BackgroundManifest manifest =
        bench::filter_backgrounds(corpus_dir, cfg_.bench.min_resolution, cfg_.bench.min_box_side);

    fs::create_directories(out_dir);
    auto tuples = bench::assemble(subjects, manifest, cfg_.bench.per_subject, prompt_sets,
                                  cfg_.seeds.bench, (fs::path(out_dir) / "masks").string());
    std::string manifest_path = (fs::path(out_dir) / "benchmark.json").string();
    bench::save_benchmark_manifest(tuples, manifest_path);
    return manifest_path;
}

std::string Runner::run_eval(const std::string& results_dir, const std::string& bench_manifest,
                             const std::string& sources_dir, const std::string& out_report,
                             const std::string& task_filter) {
    std::vector<bench::BenchTuple> tuples = bench::load_benchmark_manifest(bench_manifest);
    if (!task_filter.empty()) {
        std::erase_if(tuples, [&](const auto& t) { return t.split != task_filter; });
        if (tuples.empty())
            fail(ErrorCode::invalid_argument, "no benchmark tuples with split '" + task_filter + "'");
    }

    std::vector<std::string> expected, present;
    for (const auto& t : tuples) expected.push_back(t.id);
    for (const auto& t : tuples)
        if (fs::exists(fs::path(results_dir) / (t.id + ".png"))) present.push_back(t.id);
    eval::check_id_alignment(expected, present);

    // per-subject source images loaded once
    std::map<std::string, std::vector<ImageGrid>> sources;
    for (const auto& t : tuples) {
        if (sources.count(t.subject_id)) continue;
        std::vector<ImageGrid> imgs;
        fs::path subj_dir = fs::path(sources_dir) / t.subject_id;
        if (fs::is_directory(subj_dir)) {
            for (const auto& p : list_subject_images(subj_dir.string()))
                imgs.push_back(load_image_png(p.string()));
        } else if (fs::exists(fs::path(sources_dir) / (t.subject_id + ".png"))) {
            imgs.push_back(load_image_png((fs::path(sources_dir) / (t.subject_id + ".png")).string()));
        }
        if (imgs.empty())
            fail(ErrorCode::id_misalignment,
                 "no source images for subject '" + t.subject_id + "' in " + sources_dir);
        sources[t.subject_id] = std::move(imgs);
    }

    std::vector<eval::EvalSample> samples;
    for (const auto& t : tuples) {
        eval::EvalSample s;
        s.id = t.id;
        s.task = t.split;
        s.result = load_image_png((fs::path(results_dir) / (t.id + ".png")).string());
        if (!t.mask_path.empty() && fs::exists(t.mask_path)) {
            s.mask = load_mask_png(t.mask_path);
        } else {
            s.mask = BinaryMask(t.img_h, t.img_w);
            for (int y = t.box.y0; y < t.box.y0 + t.box.h; y++)
                for (int x = t.box.x0; x < t.box.x0 + t.box.w; x++) s.mask.at(y, x) = 1;
        }
        // the prompt actually used for the run when the sidecar exists
        fs::path sidecar = fs::path(results_dir) / (t.id + ".png.json");
        if (fs::exists(sidecar))
            s.prompt = read_json_file(sidecar.string()).value("prompt", "");
        if (s.prompt.empty()) s.prompt = t.prompts.empty() ? "" : t.prompts.front().text;
        s.sources = sources[t.subject_id];
        samples.push_back(std::move(s));
    }

    eval::MockClipEmbedder clip("mock-clip", cfg_.eval.embedder_seed, cfg_.eval.embed_dim);
    eval::MockImageEmbedder dino("mock-dino", splitmix64(cfg_.eval.embedder_seed ^ 0xd170ULL),
                                 cfg_.eval.embed_dim);
    eval::EmbedderSet set{&clip, &dino};
    auto reports = eval::evaluate_run(samples, set, cfg_.eval.crop_ratio);

    if (fs::path(out_report).has_parent_path())
        fs::create_directories(fs::path(out_report).parent_path());
    {
        std::ofstream out(out_report, std::ios::trunc);
        if (!out) fail(ErrorCode::io, "cannot write report: " + out_report);
        out << eval::report_to_json(reports) << "\n";
    }
    {
        std::ofstream out(out_report + ".txt", std::ios::trunc);
        out << eval::report_to_table(reports);
    }
    // editing-split pairs serialized for an external attribute-binding judge
    std::vector<eval::JudgeItem> judge_items;
    for (const auto& s : samples)
        if (s.task == "editing")
            judge_items.push_back(
                {s.id, s.prompt, (fs::path(results_dir) / (s.id + ".png")).string()});
    if (!judge_items.empty())
        eval::write_judge_requests(judge_items,
                                   (fs::path(out_report).parent_path() /
                                    "judge_requests.jsonl").string());
    return out_report;
}

}  // namespace sp
