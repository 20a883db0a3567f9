#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "subjectpaint.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitPipeline = 3;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string run_base = "runs";
    std::string run_name;  // fixed run dir name instead of timestamp-hash
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "config JSON (or a run manifest to replay)");
    cmd->add_option("--set", opts.overrides, "override a config value, e.g. --set training.lr=0.01")
        ->take_all();
    cmd->add_option("--run-dir", opts.run_base, "base directory for run outputs");
    cmd->add_option("--run-name", opts.run_name, "fixed run directory name");
}

json load_config_json(const CommonOpts& opts) {
    json cfg = json::object();
    if (!opts.config_path.empty()) {
        std::ifstream in(opts.config_path);
        if (!in) {
            std::cerr << "error: config file not found: " << opts.config_path << "\n";
            std::exit(kExitConfig);
        }
        try {
            in >> cfg;
        } catch (const std::exception& e) {
            std::cerr << "error: config is not valid JSON: " << e.what() << "\n";
            std::exit(kExitConfig);
        }
        // a run manifest carries its config inline
        if (cfg.is_object() && cfg.contains("config") && cfg.contains("config_hash"))
            cfg = cfg["config"];
    }
    return cfg;
}

void apply_dotted(json& cfg, const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
        std::cerr << "error: --set expects section.key=value, got: " << kv << "\n";
        std::exit(kExitConfig);
    }
    std::string path = kv.substr(0, eq), value = kv.substr(eq + 1);
    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const std::exception&) {
        parsed = value;
    }
    json* cur = &cfg;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (dot == std::string::npos) {
            (*cur)[key] = parsed;
            return;
        }
        if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

sp_ctx* make_ctx_or_die(const json& cfg) {
    std::string text = cfg.dump();
    sp_ctx* ctx = sp_ctx_new(text.c_str());
    if (!ctx) {
        std::cerr << "error: " << sp_last_error(nullptr) << "\n";
        std::exit(kExitConfig);
    }
    return ctx;
}

std::string utc_stamp() {
    std::time_t now = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y%m%d-%H%M%S", std::gmtime(&now));
    return buf;
}

// validated config in hand -> create the run directory and write its manifest
// before any artifact
std::string open_run_dir(const CommonOpts& opts, sp_ctx* ctx, const std::string& command,
                         const std::vector<std::string>& args) {
    std::string hash = sp_ctx_config_hash(ctx);
    std::string name = opts.run_name.empty() ? utc_stamp() + "-" + hash.substr(0, 8)
                                             : opts.run_name;
    fs::path dir = fs::path(opts.run_base) / name;
    fs::create_directories(dir);
    json manifest;
    manifest["command"] = command;
    manifest["version"] = sp_version();
    manifest["config_hash"] = hash;
    manifest["config"] = json::parse(sp_ctx_config(ctx));
    manifest["seeds"] = manifest["config"]["seeds"];
    manifest["args"] = args;
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
    return dir.string();
}

int finish(sp_ctx* ctx, sp_status status, const std::string& what) {
    if (status != SP_OK) {
        std::cerr << "error: " << what << ": " << sp_last_error(ctx) << "\n";
        sp_ctx_free(ctx);
        return status == SP_STATUS_CONFIG_ERROR ? kExitConfig : kExitPipeline;
    }
    sp_ctx_free(ctx);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"subjectpaint: subject-driven inpainting with attribute-decoupled training"};
    app.require_subcommand(1);

    std::vector<std::string> raw_args(argv + 1, argv + argc);

    /*--------------------------------- adm ----------------------------------*/
    CommonOpts adm_opts;
    std::string adm_subject_dir, adm_class, adm_out;
    int adm_reg_count = -1;
    auto* cmd_adm = app.add_subcommand("adm", "build the attribute dictionary and regularization set");
    add_common(cmd_adm, adm_opts);
    cmd_adm->add_option("--subject-dir", adm_subject_dir, "directory of subject images")->required();
    cmd_adm->add_option("--class", adm_class, "subject class word, e.g. teapot");
    cmd_adm->add_option("--out", adm_out, "output directory (default <run>/reg)");
    cmd_adm->add_option("--reg-count", adm_reg_count, "number of regularization prompts");

    /*------------------------------- finetune -------------------------------*/
    CommonOpts ft_opts;
    std::string ft_subject_dir, ft_reg_dir, ft_out, ft_class;
    int ft_steps = -1;
    bool ft_no_adm = false;
    std::vector<std::string> ft_ablate;
    auto* cmd_ft = app.add_subcommand("finetune", "fine-tune adapters on a subject");
    add_common(cmd_ft, ft_opts);
    cmd_ft->add_option("--subject-dir", ft_subject_dir, "directory of subject images")->required();
    cmd_ft->add_option("--reg-dir", ft_reg_dir, "regularization set directory from 'adm'");
    cmd_ft->add_option("--out", ft_out, "checkpoint directory (default <run>/checkpoint)");
    cmd_ft->add_option("--class", ft_class, "subject class word");
    cmd_ft->add_option("--steps", ft_steps, "optimizer steps");
    cmd_ft->add_flag("--no-adm", ft_no_adm, "train without the regularization term");
    cmd_ft->add_option("--ablate", ft_ablate, "stage toggles: no-adm, no-tas, no-dif")->take_all();

    /*-------------------------------- inpaint -------------------------------*/
    CommonOpts ip_opts;
    std::string ip_background, ip_mask, ip_prompt, ip_checkpoint, ip_out, ip_multi;
    double ip_lambda = -1.0;
    long long ip_seed = -1;
    bool ip_no_tas = false, ip_no_dif = false, ip_no_adm = false, ip_dump_trace = false;
    std::vector<std::string> ip_ablate;
    auto* cmd_ip = app.add_subcommand("inpaint", "insert and text-edit the subject in a masked region");
    add_common(cmd_ip, ip_opts);
    cmd_ip->add_option("--background", ip_background, "background PNG");
    cmd_ip->add_option("--mask", ip_mask, "single-channel mask PNG (255 = region)");
    cmd_ip->add_option("--prompt", ip_prompt, "text prompt");
    cmd_ip->add_option("--checkpoint", ip_checkpoint, "adapter checkpoint directory");
    cmd_ip->add_option("--out", ip_out, "output PNG (default <run>/output.png)");
    cmd_ip->add_option("--multi", ip_multi, "multi-subject manifest JSON; runs requests iteratively");
    cmd_ip->add_option("--lambda", ip_lambda, "stage split in [0,1]");
    cmd_ip->add_option("--seed", ip_seed, "inpaint seed");
    cmd_ip->add_flag("--no-tas", ip_no_tas, "skip textual attribute substitution");
    cmd_ip->add_flag("--no-dif", ip_no_dif, "single-stage full-frame baseline sampler");
    cmd_ip->add_flag("--no-adm", ip_no_adm, "record the no-regularization toggle in the manifest");
    cmd_ip->add_flag("--dump-trace", ip_dump_trace,
                     "write per-step blended latents as DMLT files next to the output");
    cmd_ip->add_option("--ablate", ip_ablate, "stage toggles: no-adm, no-tas, no-dif")->take_all();

    /*--------------------------------- bench --------------------------------*/
    CommonOpts bn_opts;
    std::string bn_corpus, bn_subjects, bn_out;
    int bn_per_subject = -1;
    auto* cmd_bn = app.add_subcommand("bench", "assemble evaluation tuples from a background corpus");
    add_common(cmd_bn, bn_opts);
    cmd_bn->add_option("--corpus", bn_corpus, "directory with images + annotations.json")->required();
    cmd_bn->add_option("--subjects", bn_subjects, "subjects JSON list")->required();
    cmd_bn->add_option("--out", bn_out, "output directory (default <run>/bench)");
    cmd_bn->add_option("--per-subject", bn_per_subject, "backgrounds per subject");

    /*---------------------------------- eval --------------------------------*/
    CommonOpts ev_opts;
    std::string ev_results, ev_manifest, ev_sources, ev_task, ev_out;
    auto* cmd_ev = app.add_subcommand("eval", "score inpainted results with the metric harness");
    add_common(cmd_ev, ev_opts);
    cmd_ev->add_option("--results", ev_results, "directory of <tuple-id>.png results")->required();
    cmd_ev->add_option("--bench-manifest", ev_manifest, "benchmark.json from 'bench'")->required();
    cmd_ev->add_option("--sources", ev_sources, "subject source images directory")->required();
    cmd_ev->add_option("--task", ev_task, "restrict to split: identity | editing");
    cmd_ev->add_option("--out", ev_out, "report path (default <run>/report.json)");

    /*--------------------------------- sweep --------------------------------*/
    CommonOpts sw_opts;
    std::string sw_background, sw_mask, sw_prompt, sw_checkpoint;
    std::vector<double> sw_lambdas;
    std::vector<std::string> sw_toggles;
    auto* cmd_sw = app.add_subcommand("sweep", "ablation sweeps: child inpaint runs per setting");
    add_common(cmd_sw, sw_opts);
    cmd_sw->add_option("--background", sw_background)->required();
    cmd_sw->add_option("--mask", sw_mask)->required();
    cmd_sw->add_option("--prompt", sw_prompt)->required();
    cmd_sw->add_option("--checkpoint", sw_checkpoint);
    cmd_sw->add_option("--lambdas", sw_lambdas, "lambda values, e.g. --lambdas 0 0.7 1")->take_all();
    cmd_sw->add_option("--toggles", sw_toggles, "baseline, no-dif, no-tas, no-adm, full")->take_all();

    auto* cmd_schema = app.add_subcommand("schema", "print the config schema");
    auto* cmd_version = app.add_subcommand("version", "print the version");

    CLI11_PARSE(app, argc, argv);

    if (cmd_schema->parsed()) {
        std::cout << sp_config_schema() << "\n";
        return 0;
    }
    if (cmd_version->parsed()) {
        std::cout << sp_version() << "\n";
        return 0;
    }

    auto apply_toggles = [&](json& cfg, const std::vector<std::string>& toggles) {
        for (const auto& t : toggles) {
            if (t == "no-adm")
                apply_dotted(cfg, "training.use_regularization=false");
            else if (t == "no-tas")
                apply_dotted(cfg, "tas.enabled=false");
            else if (t == "no-dif")
                apply_dotted(cfg, "dif.enabled=false");
            else {
                std::cerr << "error: unknown ablation toggle: " << t << "\n";
                std::exit(kExitConfig);
            }
        }
    };

    if (cmd_adm->parsed()) {
        json cfg = load_config_json(adm_opts);
        for (const auto& kv : adm_opts.overrides) apply_dotted(cfg, kv);
        if (adm_reg_count >= 0) apply_dotted(cfg, "adm.reg_count=" + std::to_string(adm_reg_count));
        if (!adm_class.empty()) apply_dotted(cfg, "subject.class=\"" + adm_class + "\"");
        sp_ctx* ctx = make_ctx_or_die(cfg);
        std::string run = open_run_dir(adm_opts, ctx, "adm", raw_args);
        std::string out = adm_out.empty() ? run + "/reg" : adm_out;
        sp_status st = sp_run_adm(ctx, adm_subject_dir.c_str(),
                                  adm_class.empty() ? nullptr : adm_class.c_str(), out.c_str());
        if (st == SP_OK) std::cout << out << "\n";
        return finish(ctx, st, "adm");
    }

    if (cmd_ft->parsed()) {
        json cfg = load_config_json(ft_opts);
        for (const auto& kv : ft_opts.overrides) apply_dotted(cfg, kv);
        if (ft_steps >= 0) apply_dotted(cfg, "training.steps=" + std::to_string(ft_steps));
        if (!ft_class.empty()) apply_dotted(cfg, "subject.class=\"" + ft_class + "\"");
        if (ft_no_adm) apply_dotted(cfg, "training.use_regularization=false");
        apply_toggles(cfg, ft_ablate);
        sp_ctx* ctx = make_ctx_or_die(cfg);
        std::string run = open_run_dir(ft_opts, ctx, "finetune", raw_args);
        std::string out = ft_out.empty() ? run + "/checkpoint" : ft_out;
        json parsed = json::parse(sp_ctx_config(ctx));
        bool use_reg = parsed["training"]["use_regularization"].get<bool>();
        sp_status st = sp_run_finetune(ctx, ft_subject_dir.c_str(),
                                       (use_reg && !ft_reg_dir.empty()) ? ft_reg_dir.c_str()
                                                                        : nullptr,
                                       out.c_str());
        if (st == SP_OK) std::cout << out << "\n";
        return finish(ctx, st, "finetune");
    }

    if (cmd_ip->parsed()) {
        json cfg = load_config_json(ip_opts);
        for (const auto& kv : ip_opts.overrides) apply_dotted(cfg, kv);
        if (ip_lambda >= 0) apply_dotted(cfg, "schedule.lambda=" + std::to_string(ip_lambda));
        if (ip_seed >= 0) apply_dotted(cfg, "seeds.inpaint=" + std::to_string(ip_seed));
        if (ip_no_tas) apply_dotted(cfg, "tas.enabled=false");
        if (ip_no_dif) apply_dotted(cfg, "dif.enabled=false");
        if (ip_no_adm) apply_dotted(cfg, "training.use_regularization=false");
        if (ip_dump_trace) apply_dotted(cfg, "dif.dump_trace=true");
        apply_toggles(cfg, ip_ablate);
        sp_ctx* ctx = make_ctx_or_die(cfg);
        std::string run = open_run_dir(ip_opts, ctx, "inpaint", raw_args);
        std::string out = ip_out.empty() ? run + "/output.png" : ip_out;
        sp_status st;
        if (!ip_multi.empty()) {
            st = sp_run_inpaint_multi(ctx, ip_multi.c_str(), out.c_str());
        } else {
            if (ip_background.empty() || ip_mask.empty() || ip_prompt.empty()) {
                std::cerr << "error: --background, --mask and --prompt are required "
                             "(or use --multi)\n";
                sp_ctx_free(ctx);
                return kExitConfig;
            }
            st = sp_run_inpaint(ctx, ip_background.c_str(), ip_mask.c_str(), ip_prompt.c_str(),
                                ip_checkpoint.empty() ? nullptr : ip_checkpoint.c_str(),
                                out.c_str());
        }
        if (st == SP_OK) std::cout << out << "\n";
        return finish(ctx, st, "inpaint");
    }

    if (cmd_bn->parsed()) {
        json cfg = load_config_json(bn_opts);
        for (const auto& kv : bn_opts.overrides) apply_dotted(cfg, kv);
        if (bn_per_subject >= 0)
            apply_dotted(cfg, "bench.per_subject=" + std::to_string(bn_per_subject));
        sp_ctx* ctx = make_ctx_or_die(cfg);
        std::string run = open_run_dir(bn_opts, ctx, "bench", raw_args);
        std::string out = bn_out.empty() ? run + "/bench" : bn_out;
        sp_status st = sp_run_bench(ctx, bn_corpus.c_str(), bn_subjects.c_str(), out.c_str());
        if (st == SP_OK) std::cout << out << "/benchmark.json\n";
        return finish(ctx, st, "bench");
    }

    if (cmd_ev->parsed()) {
        json cfg = load_config_json(ev_opts);
        for (const auto& kv : ev_opts.overrides) apply_dotted(cfg, kv);
        sp_ctx* ctx = make_ctx_or_die(cfg);
        std::string run = open_run_dir(ev_opts, ctx, "eval", raw_args);
        std::string out = ev_out.empty() ? run + "/report.json" : ev_out;
        sp_status st = sp_run_eval(ctx, ev_results.c_str(), ev_manifest.c_str(),
                                   ev_sources.c_str(), ev_task.empty() ? nullptr : ev_task.c_str(),
                                   out.c_str());
        if (st == SP_OK) std::cout << out << "\n";
        return finish(ctx, st, "eval");
    }

    if (cmd_sw->parsed()) {
        json base_cfg = load_config_json(sw_opts);
        for (const auto& kv : sw_opts.overrides) apply_dotted(base_cfg, kv);
        if (sw_lambdas.empty() && sw_toggles.empty()) {
            std::cerr << "error: sweep needs --lambdas and/or --toggles\n";
            return kExitConfig;
        }
        struct Child {
            std::string name;
            json cfg;
        };
        std::vector<Child> children;
        for (double l : sw_lambdas) {
            json cfg = base_cfg;
            apply_dotted(cfg, "schedule.lambda=" + std::to_string(l));
            char name[32];
            std::snprintf(name, sizeof(name), "lambda-%.2f", l);
            children.push_back({name, cfg});
        }
        for (const auto& t : sw_toggles) {
            json cfg = base_cfg;
            if (t != "full" && t != "baseline") apply_toggles(cfg, {t});
            if (t == "baseline") apply_toggles(cfg, {"no-dif", "no-tas", "no-adm"});
            children.push_back({"toggle-" + t, cfg});
        }
        // child runs under one sweep directory, one manifest each
        sp_ctx* probe = make_ctx_or_die(base_cfg);
        CommonOpts sweep_root = sw_opts;
        std::string root = open_run_dir(sweep_root, probe, "sweep", raw_args);
        sp_ctx_free(probe);
        for (const auto& child : children) {
            sp_ctx* ctx = make_ctx_or_die(child.cfg);
            CommonOpts child_opts;
            child_opts.run_base = root;
            child_opts.run_name = child.name;
            std::string dir = open_run_dir(child_opts, ctx, "inpaint", raw_args);
            std::string out = dir + "/output.png";
            sp_status st = sp_run_inpaint(ctx, sw_background.c_str(), sw_mask.c_str(),
                                          sw_prompt.c_str(),
                                          sw_checkpoint.empty() ? nullptr : sw_checkpoint.c_str(),
                                          out.c_str());
            if (st != SP_OK) {
                std::cerr << "error: sweep child " << child.name << ": " << sp_last_error(ctx)
                          << "\n";
                sp_ctx_free(ctx);
                return st == SP_STATUS_CONFIG_ERROR ? kExitConfig : kExitPipeline;
            }
            std::cout << child.name << " -> " << out << "\n";
            sp_ctx_free(ctx);
        }
        return 0;
    }

    return 0;
}
