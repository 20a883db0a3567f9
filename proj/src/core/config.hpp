#ifndef SP_CONFIG_HPP
#define SP_CONFIG_HPP

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "backbone.hpp"
#include "tas.hpp"
#include "training.hpp"
#include "vlm.hpp"

namespace sp {

// Whole-run configuration. Defaults carry the reference operating point:
// lambda 0.7, tau1 1.5, tau2 0.7, beta 0.4, rank 4, 30 regularization prompts.
struct RunConfig {
    struct BackboneCfg {
        std::string id = "toy";
        uint64_t seed = 0;
        int text_dim = 32;
        int working_res = 0;
    } backbone;

    struct ScheduleCfg {
        int steps = 50;
        double lambda = 0.7;
        double alpha_end = 0.1;
    } schedule;

    struct LossCfg {
        double tau1 = 1.5;
        double tau2 = 0.7;
        double beta = 0.4;
    } loss;

    struct AdaptersCfg {
        int rank = 4;
        std::vector<std::string> targets = {"key", "value"};
    } adapters;

    struct AdmCfg {
        int reg_count = 30;
        int image_size = 64;
        double mask_area_min = 0.4;
        double mask_area_max = 0.7;
    } adm;

    VlmSettings vlm;

    struct TasCfg {
        bool enabled = true;
        std::string mode = "pooled-per-token";
        std::string matcher = "keyword";
        std::string eliminate_template = tas::kDefaultEliminateTemplate;
    } tas;

    struct DifCfg {
        bool enabled = true;
        double enlarge_ratio = 0.2;
        bool gch_full_frame = false;
        bool dump_trace = false;
    } dif;

    struct TrainingCfg {
        int steps = 800;
        double lr = 1e-4;
        int batch_subject = 1;
        int batch_reg = 1;
        double inflate_min = 0.05;
        double inflate_max = 0.25;
        bool use_regularization = true;
    } training;

    struct EvalCfg {
        double crop_ratio = 0.2;
        int embed_dim = 64;
        uint64_t embedder_seed = 0;
    } eval;

    struct BenchCfg {
        int min_resolution = 256;
        int min_box_side = 64;
        int per_subject = 5;
    } bench;

    struct SubjectCfg {
        std::string class_name = "object";
        std::string prompt_template = "a [sks] {class}";
    } subject;

    double guidance_scale = 1.0;

    struct SeedsCfg {
        uint64_t train = 0;
        uint64_t inpaint = 0;
        uint64_t adm = 0;
        uint64_t bench = 0;
    } seeds;

    nlohmann::json to_json() const;
    std::string hash() const;

    SamplerSchedule make_schedule() const;
    ToyOptions toy_options() const;
    train::LossWeights loss_weights() const;
    train::AdapterConfig adapter_config() const;
    train::FinetuneOptions finetune_options() const;
};

// strict parse: unknown keys, wrong types, and out-of-range values all fail
// with a config error naming the offending path. A {"config": {...}} run
// manifest is accepted and unwrapped.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig config_from_string(const std::string& text);
RunConfig config_from_file_or_default(const std::string& path);  // empty path = defaults

// "training.lr=0.01" style override
void apply_override(nlohmann::json& j, const std::string& dotted_key_equals_value);

const char* config_schema_json();

}  // namespace sp

#endif
