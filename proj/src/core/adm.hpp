#ifndef SP_ADM_HPP
#define SP_ADM_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "adm_types.hpp"
#include "backbone.hpp"
#include "types.hpp"
#include "vlm.hpp"

namespace sp {
namespace adm {

struct RegularizationSample {
    ImageGrid image;
    BinaryMask mask;
    PromptRecord prompt;
    uint64_t seed = 0;
};

struct RegularizationSet {
    std::vector<RegularizationSample> samples;
    int target_count = 0;
    std::string provenance;
};

struct MaskPolicy {
    std::string kind = "centered-box";
    double min_area = 0.4;
    double max_area = 0.7;
};

// ask the VLM for the subject's attribute words; response is validated against
// the {categories:{name:[words]}} schema, retried once when malformed
AttributeDictionary extract_dictionary(const std::vector<ImageGrid>& subject_images,
                                       const std::string& subject_class, VlmClient& vlm);

// n distinct attribute prompts for the subject class, no identity token.
// With a null vlm the deterministic template composer is used.
std::vector<PromptRecord> compose_prompts(const AttributeDictionary& dictionary, int n,
                                          VlmClient* vlm, uint64_t rng_seed);

struct SynthesisOptions {
    int image_size = 64;
    SamplerSchedule schedule = SamplerSchedule::linear(50, 0.7f);
    MaskPolicy mask_policy;
};

// one generated image + mask per prompt; fails when more than 10% of the
// samples fail to generate
RegularizationSet synthesize_regularization(const std::vector<PromptRecord>& prompts,
                                            Backbone& generator, const SynthesisOptions& options,
                                            uint64_t seed);

// directory layout: images/NNNN.png, masks/NNNN.png, manifest.json
void save_regularization_set(const RegularizationSet& set, const AttributeDictionary& dictionary,
                             const std::string& dir);
RegularizationSet load_regularization_set(const std::string& dir);

void save_dictionary(const AttributeDictionary& dictionary, const std::string& path);
AttributeDictionary load_dictionary(const std::string& path);

}  // namespace adm
}  // namespace sp

#endif
