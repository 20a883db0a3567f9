#ifndef SP_EVAL_HPP
#define SP_EVAL_HPP

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "types.hpp"

namespace sp {
namespace eval {

struct EmbedderHandle {
    std::string name;
    std::string modality;  // image | text | both
    int dim = 0;
};

// unit-normalized embeddings for images and/or prompts
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual EmbedderHandle handle() const = 0;
    virtual std::vector<float> embed_image(const ImageGrid& image) const;
    virtual std::vector<float> embed_text(const std::string& text) const;
};

// seeded random projection of a 16x16 downsample of the pixels
class MockImageEmbedder : public Embedder {
public:
    MockImageEmbedder(std::string name, uint64_t seed, int dim);
    EmbedderHandle handle() const override { return {name_, "image", dim_}; }
    std::vector<float> embed_image(const ImageGrid& image) const override;

private:
    std::string name_;
    uint64_t seed_;
    int dim_;
};

// image and text mapped into one space: image side like MockImageEmbedder,
// text side a hashed bag-of-words projection
class MockClipEmbedder : public Embedder {
public:
    MockClipEmbedder(std::string name, uint64_t seed, int dim);
    EmbedderHandle handle() const override { return {name_, "both", dim_}; }
    std::vector<float> embed_image(const ImageGrid& image) const override;
    std::vector<float> embed_text(const std::string& text) const override;

private:
    std::string name_;
    uint64_t seed_;
    int dim_;
};

// cosine similarity clamped to [-1,1]; zero-norm error on degenerate input
double cosine(std::span<const float> u, std::span<const float> v);

// the shared crop geometry: enlarge the mask box by ratio, crop, native size
ImageGrid crop_metric_region(const ImageGrid& result, const BinaryMask& mask, double ratio);

struct EvalRecord {
    std::string sample_id;
    std::string task;  // identity | editing
    double clip_t = 0.0;
    double clip_i = 0.0;
    double dino = 0.0;
    Box crop_box;
};

struct TaskReport {
    std::string task;
    int n = 0;
    double mean_clip_t = 0.0;
    double mean_clip_i = 0.0;
    double mean_dino = 0.0;
    std::vector<EvalRecord> records;
};

struct EvalSample {
    std::string id;
    std::string task;
    std::string prompt;
    ImageGrid result;
    BinaryMask mask;
    std::vector<ImageGrid> sources;
};

struct EmbedderSet {
    const Embedder* clip = nullptr;  // both modalities, one space
    const Embedder* dino = nullptr;  // image only
};

// records which pixel grids the metric actually scored
struct Instrumentation {
    std::vector<std::pair<std::string, Box>> crops;
};

// throws id-misalignment listing every expected id that is absent
void check_id_alignment(const std::vector<std::string>& expected,
                        const std::vector<std::string>& present);

std::vector<TaskReport> evaluate_run(const std::vector<EvalSample>& samples,
                                     const EmbedderSet& embedders, double crop_ratio,
                                     Instrumentation* instr = nullptr);

// report JSON: array of {task, n, means:{clip_t,clip_i,dino}, records:[...]}
std::string report_to_json(const std::vector<TaskReport>& reports);
std::string report_to_table(const std::vector<TaskReport>& reports);

struct JudgeItem {
    std::string id;
    std::string prompt;
    std::string image_path;
};

// serialize (prompt, image) pairs for an external attribute-binding judge:
// one JSON object per line asking for 1-5 ratings on color/shape/texture
void write_judge_requests(const std::vector<JudgeItem>& items, const std::string& path);

}  // namespace eval
}  // namespace sp

#endif
