#ifndef SP_TYPES_HPP
#define SP_TYPES_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "error.hpp"

namespace sp {

// H x W x C pixel grid, float values in [0,1], row-major
struct ImageGrid {
    int h = 0, w = 0, c = 0;
    std::vector<float> data;

    ImageGrid() = default;
    ImageGrid(int h_, int w_, int c_, float fill = 0.f)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

    float& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    size_t size() const { return data.size(); }
    bool same_shape(const ImageGrid& o) const { return h == o.h && w == o.w && c == o.c; }
};

// H x W {0,1} mask
struct BinaryMask {
    int h = 0, w = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int h_, int w_, uint8_t fill = 0)
        : h(h_), w(w_), data(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int y, int x) { return data[static_cast<size_t>(y) * w + x]; }
    uint8_t at(int y, int x) const { return data[static_cast<size_t>(y) * w + x]; }

    size_t count() const {
        size_t n = 0;
        for (uint8_t v : data) n += (v != 0);
        return n;
    }
    bool empty_region() const { return count() == 0; }
};

// h x w x c latent values, row-major
struct LatentGrid {
    int h = 0, w = 0, c = 0;
    std::vector<float> data;

    LatentGrid() = default;
    LatentGrid(int h_, int w_, int c_, float fill = 0.f)
        : h(h_), w(w_), c(c_), data(static_cast<size_t>(h_) * w_ * c_, fill) {}

    float& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * w + x) * c + ch]; }
    size_t size() const { return data.size(); }
    bool same_shape(const LatentGrid& o) const { return h == o.h && w == o.w && c == o.c; }
};

// L x d token matrix plus a pooled d-vector (mean of token rows unless the
// encoder supplies its own pooling). Double precision: the embedding surgery
// guarantees orthogonality to 1e-9, beyond float32 resolution.
struct TextEmbedding {
    int toks = 0, dim = 0;
    std::vector<double> tokens;  // row-major L x d
    std::vector<double> pooled;  // d

    TextEmbedding() = default;
    TextEmbedding(int l, int d)
        : toks(l), dim(d), tokens(static_cast<size_t>(l) * d, 0.0), pooled(d, 0.0) {}

    double& tok(int i, int j) { return tokens[static_cast<size_t>(i) * dim + j]; }
    double tok(int i, int j) const { return tokens[static_cast<size_t>(i) * dim + j]; }

    void repool() {
        pooled.assign(dim, 0.0);
        if (toks == 0) return;
        for (int i = 0; i < toks; i++)
            for (int j = 0; j < dim; j++) pooled[j] += tok(i, j);
        for (int j = 0; j < dim; j++) pooled[j] /= static_cast<double>(toks);
    }
};

struct Conditioning {
    TextEmbedding embedding;
    float guidance_scale = 1.f;
};

// Noise schedule: alpha non-increasing from 1, delta non-decreasing from 0,
// both length T+1 so index t addresses the state after t noising steps.
struct SamplerSchedule {
    int steps = 50;
    float lambda_split = 0.7f;
    std::vector<float> alpha;
    std::vector<float> delta;

    static SamplerSchedule linear(int steps, float lambda_split, float alpha_end = 0.1f);

    void validate() const;
    int lcg_steps() const;  // ceil(lambda * T)
};

// integer pixel rectangle, [x0, x0+w) x [y0, y0+h)
struct Box {
    int x0 = 0, y0 = 0, w = 0, h = 0;

    bool contains(int y, int x) const {
        return x >= x0 && x < x0 + w && y >= y0 && y < y0 + h;
    }
    bool operator==(const Box& o) const = default;
};

}  // namespace sp

#endif
