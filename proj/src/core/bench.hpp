#ifndef SP_BENCH_HPP
#define SP_BENCH_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "adm_types.hpp"
#include "types.hpp"

namespace sp {
namespace bench {

struct BackgroundEntry {
    std::string image_path;
    int img_h = 0, img_w = 0;
    Box box;
};

struct BackgroundManifest {
    std::vector<BackgroundEntry> entries;
    int min_resolution = 0;
    int min_box_side = 0;
};

// Scans image_dir/annotations.json ([{image, boxes:[[x,y,w,h]]}]) and keeps
// (image, box) pairs where min(image side) >= min_resolution and
// min(box side) >= min_box_side. Unreadable images or bad entries fail with
// one aggregated error listing every offender.
BackgroundManifest filter_backgrounds(const std::string& image_dir, int min_resolution,
                                      int min_box_side);

struct SubjectSpec {
    std::string id;
    std::string class_name;
};

struct PromptSet {
    std::vector<std::string> identity;
    std::vector<std::string> editing;
};

struct BenchTuple {
    std::string id;
    std::string subject_id;
    std::string subject_class;
    std::string background_path;
    std::string mask_path;  // empty until masks are materialized
    Box box;
    int img_h = 0, img_w = 0;
    std::string split;  // identity | editing
    std::vector<PromptRecord> prompts;
};

// Deterministic assignment of per_subject backgrounds to each subject: each
// subject draws without replacement from its own seed-derived stream, so the
// (subject, background) multiset does not depend on subject order. The
// largest qualifying box per background becomes the mask box; splits
// alternate identity/editing per draw. With a nonempty masks_dir the box
// masks are written as PNGs.
std::vector<BenchTuple> assemble(const std::vector<SubjectSpec>& subjects,
                                 const BackgroundManifest& backgrounds, int per_subject,
                                 const std::map<std::string, PromptSet>& prompt_sets,
                                 uint64_t seed, const std::string& masks_dir = "");

const PromptSet& default_prompts();

void save_benchmark_manifest(const std::vector<BenchTuple>& tuples, const std::string& path);
std::vector<BenchTuple> load_benchmark_manifest(const std::string& path);

}  // namespace bench
}  // namespace sp

#endif
