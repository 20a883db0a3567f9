#ifndef SP_RUNNER_HPP
#define SP_RUNNER_HPP

#include <memory>
#include <string>
#include <vector>

#include "config.hpp"

namespace sp {

// Pipeline commands behind the public API. Paths in, artifact paths out; all
// failures surface as sp::Error.
class Runner {
public:
    explicit Runner(RunConfig cfg) : cfg_(std::move(cfg)) {}

    const RunConfig& config() const { return cfg_; }

    struct AdmArtifacts {
        std::string reg_dir;
        std::string dictionary_path;
        int sample_count = 0;
    };
    AdmArtifacts run_adm(const std::string& subject_dir, const std::string& subject_class,
                         const std::string& out_dir);

    std::string run_finetune(const std::string& subject_dir, const std::string& reg_dir,
                             const std::string& out_dir);

    struct InpaintInfo {
        std::string out_png;
        int lcg_steps = 0;
        int gch_steps = 0;
        bool tas_applied = false;
        std::string matched_category;
    };
    InpaintInfo run_inpaint(const std::string& background_png, const std::string& mask_png,
                            const std::string& prompt, const std::string& checkpoint_dir,
                            const std::string& out_png);

    std::string run_inpaint_multi(const std::string& requests_json, const std::string& out_png);

    std::string run_bench(const std::string& corpus_dir, const std::string& subjects_json,
                          const std::string& out_dir);

    std::string run_eval(const std::string& results_dir, const std::string& bench_manifest,
                         const std::string& sources_dir, const std::string& out_report,
                         const std::string& task_filter = "");

    // in-memory variant of run_inpaint
    ImageGrid inpaint_image(const ImageGrid& background, const BinaryMask& mask,
                            const std::string& prompt, const std::string& checkpoint_dir);

private:
    std::shared_ptr<Backbone> make_backbone(const std::string& checkpoint_dir) const;
    Conditioning build_conditioning(const std::string& prompt, Backbone& backbone,
                                    const std::string& dictionary_path, bool& tas_applied,
                                    std::string& matched_category) const;

    RunConfig cfg_;
};

}  // namespace sp

#endif
