#include "config.hpp"

#include <fstream>

#include "error.hpp"
#include "hash.hpp"

namespace sp {

using nlohmann::json;

json RunConfig::to_json() const {
    json j;
    j["backbone"] = {{"id", backbone.id},
                     {"seed", backbone.seed},
                     {"text_dim", backbone.text_dim},
                     {"working_res", backbone.working_res}};
    j["schedule"] = {{"steps", schedule.steps},
                     {"lambda", schedule.lambda},
                     {"alpha_end", schedule.alpha_end}};
    j["loss"] = {{"tau1", loss.tau1}, {"tau2", loss.tau2}, {"beta", loss.beta}};
    j["adapters"] = {{"rank", adapters.rank}, {"targets", adapters.targets}};
    j["adm"] = {{"reg_count", adm.reg_count},
                {"image_size", adm.image_size},
                {"mask_area_min", adm.mask_area_min},
                {"mask_area_max", adm.mask_area_max}};
    j["vlm"] = {{"mode", vlm.mode},
                {"endpoint", vlm.endpoint},
                {"model", vlm.model},
                {"api_key_env", vlm.api_key_env},
                {"fixture", vlm.fixture_path}};
    j["tas"] = {{"enabled", tas.enabled},
                {"mode", tas.mode},
                {"matcher", tas.matcher},
                {"template", tas.eliminate_template}};
    j["dif"] = {{"enabled", dif.enabled},
                {"enlarge_ratio", dif.enlarge_ratio},
                {"gch_full_frame", dif.gch_full_frame},
                {"dump_trace", dif.dump_trace}};
    j["training"] = {{"steps", training.steps},
                     {"lr", training.lr},
                     {"batch_subject", training.batch_subject},
                     {"batch_reg", training.batch_reg},
                     {"inflate_min", training.inflate_min},
                     {"inflate_max", training.inflate_max},
                     {"use_regularization", training.use_regularization}};
    j["eval"] = {{"crop_ratio", eval.crop_ratio},
                 {"embed_dim", eval.embed_dim},
                 {"embedder_seed", eval.embedder_seed}};
    j["bench"] = {{"min_resolution", bench.min_resolution},
                  {"min_box_side", bench.min_box_side},
                  {"per_subject", bench.per_subject}};
    j["subject"] = {{"class", subject.class_name}, {"prompt_template", subject.prompt_template}};
    j["guidance_scale"] = guidance_scale;
    j["seeds"] = {{"train", seeds.train},
                  {"inpaint", seeds.inpaint},
                  {"adm", seeds.adm},
                  {"bench", seeds.bench}};
    return j;
}

std::string RunConfig::hash() const { return hash_hex(to_json().dump()); }

SamplerSchedule RunConfig::make_schedule() const {
    SamplerSchedule s = SamplerSchedule::linear(schedule.steps, static_cast<float>(schedule.lambda),
                                                static_cast<float>(schedule.alpha_end));
    s.validate();
    return s;
}

ToyOptions RunConfig::toy_options() const {
    ToyOptions opt;
    opt.seed = backbone.seed;
    opt.text_dim = backbone.text_dim;
    opt.working_res = backbone.working_res;
    return opt;
}

train::LossWeights RunConfig::loss_weights() const {
    train::LossWeights w;
    w.tau1 = loss.tau1;
    w.tau2 = loss.tau2;
    w.beta = loss.beta;
    return w;
}

train::AdapterConfig RunConfig::adapter_config() const {
    train::AdapterConfig a;
    a.rank = adapters.rank;
    a.targets.clear();
    for (const auto& t : adapters.targets) a.targets.insert(proj_target_from_name(t));
    return a;
}

train::FinetuneOptions RunConfig::finetune_options() const {
    train::FinetuneOptions o;
    o.steps = training.steps;
    o.lr = training.lr;
    o.batch_subject = training.batch_subject;
    o.batch_reg = training.batch_reg;
    o.seed = seeds.train;
    o.schedule = make_schedule();
    o.inflate_min = training.inflate_min;
    o.inflate_max = training.inflate_max;
    o.use_regularization = training.use_regularization;
    return o;
}

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& why) {
    fail(ErrorCode::config, "config: " + path + ": " + why);
}

class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j.is_object()) bad(path_, "must be an object");
    }

    ~Section() = default;

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) bad(path_ + "." + key, "unknown key");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& get(const std::string& key) { return j_.at(key); }

    template <typename T>
    void read(const std::string& key, T& out) {
        if (!has(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const std::exception&) {
            bad(path_ + "." + key, "wrong type");
        }
    }

    void read_int(const std::string& key, int& out, int lo, int hi) {
        if (!has(key)) return;
        if (!j_.at(key).is_number_integer()) bad(path_ + "." + key, "must be an integer");
        int64_t v = j_.at(key).get<int64_t>();
        if (v < lo || v > hi)
            bad(path_ + "." + key, "must be in [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
        out = static_cast<int>(v);
    }

    void read_real(const std::string& key, double& out, double lo, double hi) {
        if (!has(key)) return;
        if (!j_.at(key).is_number()) bad(path_ + "." + key, "must be a number");
        double v = j_.at(key).get<double>();
        if (v < lo || v > hi)
            bad(path_ + "." + key,
                "must be in [" + std::to_string(lo) + "," + std::to_string(hi) + "]");
        out = v;
    }

    void read_seed(const std::string& key, uint64_t& out) {
        if (!has(key)) return;
        if (!j_.at(key).is_number_unsigned() && !j_.at(key).is_number_integer())
            bad(path_ + "." + key, "must be a nonnegative integer");
        out = j_.at(key).get<uint64_t>();
    }

    void read_enum(const std::string& key, std::string& out,
                   const std::vector<std::string>& allowed) {
        if (!has(key)) return;
        if (!j_.at(key).is_string()) bad(path_ + "." + key, "must be a string");
        std::string v = j_.at(key).get<std::string>();
        for (const auto& a : allowed)
            if (v == a) {
                out = v;
                return;
            }
        std::string opts;
        for (const auto& a : allowed) opts += (opts.empty() ? "" : ", ") + a;
        bad(path_ + "." + key, "must be one of: " + opts);
    }

    const std::string& path() const { return path_; }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

}  // namespace

RunConfig config_from_json(const json& root_in) {
    const json* root = &root_in;
    // accept a run manifest and unwrap its embedded config
    if (root_in.is_object() && root_in.contains("config") && root_in.contains("config_hash"))
        root = &root_in.at("config");

    RunConfig cfg;
    Section top(*root, "$");

    if (top.has("backbone")) {
        Section s(top.get("backbone"), "backbone");
        s.read("id", cfg.backbone.id);
        if (cfg.backbone.id.empty()) bad("backbone.id", "must be nonempty");
        s.read_seed("seed", cfg.backbone.seed);
        s.read_int("text_dim", cfg.backbone.text_dim, 2, 4096);
        s.read_int("working_res", cfg.backbone.working_res, 0, 4096);
        s.finish();
    }
    if (top.has("schedule")) {
        Section s(top.get("schedule"), "schedule");
        s.read_int("steps", cfg.schedule.steps, 1, 10000);
        s.read_real("lambda", cfg.schedule.lambda, 0.0, 1.0);
        s.read_real("alpha_end", cfg.schedule.alpha_end, 1e-6, 1.0);
        s.finish();
    }
    if (top.has("loss")) {
        Section s(top.get("loss"), "loss");
        s.read_real("tau1", cfg.loss.tau1, 0.0, 1e6);
        s.read_real("tau2", cfg.loss.tau2, 0.0, 1e6);
        s.read_real("beta", cfg.loss.beta, 0.0, 1e6);
        s.finish();
    }
    if (top.has("adapters")) {
        Section s(top.get("adapters"), "adapters");
        s.read_int("rank", cfg.adapters.rank, 1, 1024);
        if (s.has("targets")) {
            const json& t = s.get("targets");
            if (!t.is_array() || t.empty()) bad("adapters.targets", "must be a nonempty array");
            cfg.adapters.targets.clear();
            for (const auto& v : t) {
                if (!v.is_string()) bad("adapters.targets", "entries must be strings");
                proj_target_from_name(v.get<std::string>());  // validates
                cfg.adapters.targets.push_back(v.get<std::string>());
            }
        }
        s.finish();
    }
    if (top.has("adm")) {
        Section s(top.get("adm"), "adm");
        s.read_int("reg_count", cfg.adm.reg_count, 1, 100000);
        s.read_int("image_size", cfg.adm.image_size, 8, 4096);
        s.read_real("mask_area_min", cfg.adm.mask_area_min, 0.0, 1.0);
        s.read_real("mask_area_max", cfg.adm.mask_area_max, 0.0, 1.0);
        s.finish();
        if (cfg.adm.mask_area_min > cfg.adm.mask_area_max)
            bad("adm.mask_area_min", "must be <= adm.mask_area_max");
    }
    if (top.has("vlm")) {
        Section s(top.get("vlm"), "vlm");
        s.read_enum("mode", cfg.vlm.mode, {"mock", "fixture", "http", "none"});
        s.read("endpoint", cfg.vlm.endpoint);
        s.read("model", cfg.vlm.model);
        s.read("api_key_env", cfg.vlm.api_key_env);
        s.read("fixture", cfg.vlm.fixture_path);
        s.finish();
    }
    if (top.has("tas")) {
        Section s(top.get("tas"), "tas");
        s.read("enabled", cfg.tas.enabled);
        s.read_enum("mode", cfg.tas.mode, {"pooled-per-token", "flattened"});
        s.read_enum("matcher", cfg.tas.matcher, {"keyword", "vlm"});
        s.read("template", cfg.tas.eliminate_template);
        s.finish();
    }
    if (top.has("dif")) {
        Section s(top.get("dif"), "dif");
        s.read("enabled", cfg.dif.enabled);
        s.read_real("enlarge_ratio", cfg.dif.enlarge_ratio, 0.0, 10.0);
        s.read("gch_full_frame", cfg.dif.gch_full_frame);
        s.read("dump_trace", cfg.dif.dump_trace);
        s.finish();
    }
    if (top.has("training")) {
        Section s(top.get("training"), "training");
        s.read_int("steps", cfg.training.steps, 0, 10000000);
        s.read_real("lr", cfg.training.lr, 1e-12, 10.0);
        s.read_int("batch_subject", cfg.training.batch_subject, 1, 1024);
        s.read_int("batch_reg", cfg.training.batch_reg, 1, 1024);
        s.read_real("inflate_min", cfg.training.inflate_min, 0.0, 1.0);
        s.read_real("inflate_max", cfg.training.inflate_max, 0.0, 1.0);
        s.read("use_regularization", cfg.training.use_regularization);
        s.finish();
        if (cfg.training.inflate_min > cfg.training.inflate_max)
            bad("training.inflate_min", "must be <= training.inflate_max");
    }
    if (top.has("eval")) {
        Section s(top.get("eval"), "eval");
        s.read_real("crop_ratio", cfg.eval.crop_ratio, 0.0, 10.0);
        s.read_int("embed_dim", cfg.eval.embed_dim, 1, 65536);
        s.read_seed("embedder_seed", cfg.eval.embedder_seed);
        s.finish();
    }
    if (top.has("bench")) {
        Section s(top.get("bench"), "bench");
        s.read_int("min_resolution", cfg.bench.min_resolution, 0, 100000);
        s.read_int("min_box_side", cfg.bench.min_box_side, 0, 100000);
        s.read_int("per_subject", cfg.bench.per_subject, 1, 1000000);
        s.finish();
    }
    if (top.has("subject")) {
        Section s(top.get("subject"), "subject");
        s.read("class", cfg.subject.class_name);
        s.read("prompt_template", cfg.subject.prompt_template);
        s.finish();
    }
    if (top.has("guidance_scale")) {
        const json& g = top.get("guidance_scale");
        if (!g.is_number() || g.get<double>() < 0.0)
            bad("guidance_scale", "must be a nonnegative number");
        cfg.guidance_scale = g.get<double>();
    }
    if (top.has("seeds")) {
        Section s(top.get("seeds"), "seeds");
        s.read_seed("train", cfg.seeds.train);
        s.read_seed("inpaint", cfg.seeds.inpaint);
        s.read_seed("adm", cfg.seeds.adm);
        s.read_seed("bench", cfg.seeds.bench);
        s.finish();
    }
    top.finish();
    return cfg;
}

RunConfig config_from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const std::exception& e) {
        fail(ErrorCode::config, std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

RunConfig config_from_file_or_default(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream in(path);
    if (!in) fail(ErrorCode::config, "config file not found: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_string(text);
}

void apply_override(json& j, const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        fail(ErrorCode::config, "override must look like section.key=value: " + kv);
    std::string path = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);

    json parsed;
    try {
        parsed = json::parse(value);
    } catch (const std::exception&) {
        parsed = value;  // bare strings stay strings
    }

    json* cur = &j;
    size_t start = 0;
    while (true) {
        size_t dot = path.find('.', start);
        std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
        if (key.empty()) fail(ErrorCode::config, "override has an empty key segment: " + kv);
        if (dot == std::string::npos) {
            (*cur)[key] = parsed;
            return;
        }
        if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
        cur = &(*cur)[key];
        start = dot + 1;
    }
}

const char* config_schema_json() {
    // kept in lockstep with config_from_json; docs/config_schema.json ships the
    // same text and a test guards against drift
    static const char* schema = R"JSON({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "run configuration",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "backbone": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "id": {"type": "string", "default": "toy"},
        "seed": {"type": "integer", "minimum": 0, "default": 0},
        "text_dim": {"type": "integer", "minimum": 2, "maximum": 4096, "default": 32},
        "working_res": {"type": "integer", "minimum": 0, "maximum": 4096, "default": 0}
      }
    },
    "schedule": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "steps": {"type": "integer", "minimum": 1, "maximum": 10000, "default": 50},
        "lambda": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.7},
        "alpha_end": {"type": "number", "exclusiveMinimum": 0, "maximum": 1, "default": 0.1}
      }
    },
    "loss": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "tau1": {"type": "number", "minimum": 0, "default": 1.5},
        "tau2": {"type": "number", "minimum": 0, "default": 0.7},
        "beta": {"type": "number", "minimum": 0, "default": 0.4}
      }
    },
    "adapters": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "rank": {"type": "integer", "minimum": 1, "maximum": 1024, "default": 4},
        "targets": {
          "type": "array", "minItems": 1, "default": ["key", "value"],
          "items": {"enum": ["query", "key", "value", "output"]}
        }
      }
    },
    "adm": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "reg_count": {"type": "integer", "minimum": 1, "default": 30},
        "image_size": {"type": "integer", "minimum": 8, "maximum": 4096, "default": 64},
        "mask_area_min": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.4},
        "mask_area_max": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.7}
      }
    },
    "vlm": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "mode": {"enum": ["mock", "fixture", "http", "none"], "default": "mock"},
        "endpoint": {"type": "string", "default": ""},
        "model": {"type": "string", "default": "mock-vlm"},
        "api_key_env": {"type": "string", "default": "SP_VLM_API_KEY"},
        "fixture": {"type": "string", "default": ""}
      }
    },
    "tas": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "enabled": {"type": "boolean", "default": true},
        "mode": {"enum": ["pooled-per-token", "flattened"], "default": "pooled-per-token"},
        "matcher": {"enum": ["keyword", "vlm"], "default": "keyword"},
        "template": {"type": "string", "default": "a {attributes} [class]"}
      }
    },
    "dif": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "enabled": {"type": "boolean", "default": true},
        "enlarge_ratio": {"type": "number", "minimum": 0, "maximum": 10, "default": 0.2},
        "gch_full_frame": {"type": "boolean", "default": false},
        "dump_trace": {"type": "boolean", "default": false}
      }
    },
    "training": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "steps": {"type": "integer", "minimum": 0, "default": 800},
        "lr": {"type": "number", "exclusiveMinimum": 0, "maximum": 10, "default": 0.0001},
        "batch_subject": {"type": "integer", "minimum": 1, "maximum": 1024, "default": 1},
        "batch_reg": {"type": "integer", "minimum": 1, "maximum": 1024, "default": 1},
        "inflate_min": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.05},
        "inflate_max": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.25},
        "use_regularization": {"type": "boolean", "default": true}
      }
    },
    "eval": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "crop_ratio": {"type": "number", "minimum": 0, "maximum": 10, "default": 0.2},
        "embed_dim": {"type": "integer", "minimum": 1, "maximum": 65536, "default": 64},
        "embedder_seed": {"type": "integer", "minimum": 0, "default": 0}
      }
    },
    "bench": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "min_resolution": {"type": "integer", "minimum": 0, "default": 256},
        "min_box_side": {"type": "integer", "minimum": 0, "default": 64},
        "per_subject": {"type": "integer", "minimum": 1, "default": 5}
      }
    },
    "subject": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "class": {"type": "string", "default": "object"},
        "prompt_template": {"type": "string", "default": "a [sks] {class}"}
      }
    },
    "guidance_scale": {"type": "number", "minimum": 0, "default": 1.0},
    "seeds": {
      "type": "object", "additionalProperties": false,
      "properties": {
        "train": {"type": "integer", "minimum": 0, "default": 0},
        "inpaint": {"type": "integer", "minimum": 0, "default": 0},
        "adm": {"type": "integer", "minimum": 0, "default": 0},
        "bench": {"type": "integer", "minimum": 0, "default": 0}
      }
    }
  }
})JSON";
    return schema;
}

}  // namespace sp
