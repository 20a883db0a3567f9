#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "core/backbone.hpp"
#include "core/error.hpp"
#include "test_util.hpp"

using namespace sp;

namespace {

ToyBackbone make_toy(int downscale = 1, uint64_t seed = 0) {
    ToyOptions opt;
    opt.seed = seed;
    opt.downscale = downscale;
    return ToyBackbone(opt);
}

}  // namespace

TEST_CASE("schedule invariants and lcg step counts") {
    SamplerSchedule s = SamplerSchedule::linear(50, 0.7f);
    s.validate();
    CHECK(s.alpha[0] == 1.f);
    CHECK(s.delta[0] == 0.f);
    CHECK(s.lcg_steps() == 35);

    s.lambda_split = 0.f;
    CHECK(s.lcg_steps() == 0);
    s.lambda_split = 1.f;
    CHECK(s.lcg_steps() == 50);
    // float32 lambda values must not round up across exact integers
    for (int i = 0; i <= 10; i++) {
        s.lambda_split = static_cast<float>(i) / 10.f;
        CHECK(s.lcg_steps() == 5 * i);
    }

    SamplerSchedule bad = s;
    bad.alpha[10] = 1.5f;
    CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("identity codec: encode equals input, round trip exact") {
    ToyBackbone toy = make_toy();
    ImageGrid img = sptest::random_image(64, 64, 3, 11);
    LatentGrid z = toy.encode(img);
    CHECK(z.h == 64);
    CHECK(z.c == 3);
    CHECK(z.data == img.data);

    ImageGrid back = toy.decode(z);
    float max_err = 0.f;
    for (size_t i = 0; i < img.data.size(); i++)
        max_err = std::max(max_err, std::abs(back.data[i] - img.data[i]));
    CHECK(max_err <= 1e-6f);

    ImageGrid zero(64, 64, 3);
    CHECK(toy.encode(zero).data == zero.data);
}

TEST_CASE("decode clamps out-of-range latents") {
    ToyBackbone toy = make_toy();
    LatentGrid z(4, 4, 3);
    z.data[0] = -3.f;
    z.data[1] = 7.f;
    ImageGrid img = toy.decode(z);
    CHECK(img.data[0] == 0.f);
    CHECK(img.data[1] == 1.f);
    for (float v : img.data) {
        CHECK(v >= 0.f);
        CHECK(v <= 1.f);
    }
}

TEST_CASE("factor-8 codec shapes and divisibility") {
    ToyBackbone toy = make_toy(8);
    ImageGrid img = sptest::random_image(64, 64, 3, 5);
    LatentGrid z = toy.encode(img);
    CHECK(z.h == 8);
    CHECK(z.w == 8);
    CHECK(z.c == 3);
    ImageGrid up = toy.decode(z);
    CHECK(up.h == 64);
    CHECK(up.w == 64);

    ImageGrid odd(60, 64, 3);
    CHECK_THROWS_AS(toy.encode(odd), Error);
    try {
        toy.encode(odd);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::dimension_mismatch);
    }
}

TEST_CASE("forward_noise matches the affine formula") {
    SamplerSchedule s;
    s.steps = 1;
    s.lambda_split = 0.5f;
    s.alpha = {1.f, 0.5f};
    s.delta = {0.f, 0.5f};
    s.validate();

    LatentGrid ones(3, 3, 2, 1.f);
    LatentGrid neg(3, 3, 2, -1.f);

    SUBCASE("t=0 returns the latent unchanged") {
        LatentGrid out = forward_noise(ones, 0, neg, s);
        CHECK(out.data == ones.data);
    }
    SUBCASE("alpha=delta=0.5, latent 1s, noise -1s gives zeros") {
        LatentGrid out = forward_noise(ones, 1, neg, s);
        for (float v : out.data) CHECK(v == 0.f);
    }
    SUBCASE("zero noise scales by alpha") {
        LatentGrid zero(3, 3, 2, 0.f);
        LatentGrid out = forward_noise(ones, 1, zero, s);
        for (float v : out.data) CHECK(v == 0.5f);
    }
    SUBCASE("shape and range errors") {
        LatentGrid small(2, 2, 2);
        CHECK_THROWS_AS(forward_noise(ones, 1, small, s), Error);
        CHECK_THROWS_AS(forward_noise(ones, 2, neg, s), Error);
        CHECK_THROWS_AS(forward_noise(ones, -1, neg, s), Error);
    }
}

TEST_CASE("forward_noise is affine in the latent") {
    SamplerSchedule s = SamplerSchedule::linear(10, 0.5f);
    LatentGrid z1 = sptest::random_latent(6, 5, 3, 1);
    LatentGrid z2 = sptest::random_latent(6, 5, 3, 2);
    LatentGrid n = sptest::random_latent(6, 5, 3, 3);
    LatentGrid zero(6, 5, 3, 0.f);
    const float a = 1.7f, b = -0.4f;

    for (int t : {0, 3, 7, 10}) {
        LatentGrid combo(6, 5, 3);
        for (size_t i = 0; i < combo.data.size(); i++)
            combo.data[i] = a * z1.data[i] + b * z2.data[i];
        LatentGrid lhs = forward_noise(combo, t, n, s);
        LatentGrid f1 = forward_noise(z1, t, zero, s);
        LatentGrid f2 = forward_noise(z2, t, zero, s);
        for (size_t i = 0; i < lhs.data.size(); i++) {
            float rhs = a * f1.data[i] + b * f2.data[i] + s.delta[t] * n.data[i];
            CHECK(lhs.data[i] == doctest::Approx(rhs).epsilon(1e-5));
        }
    }
}

TEST_CASE("oracle predictor inverts forward_noise over 100 random latents") {
    SamplerSchedule s = SamplerSchedule::linear(50, 0.7f);
    Conditioning cond;
    cond.embedding = make_toy().encode_text("anything");

    for (int trial = 0; trial < 100; trial++) {
        LatentGrid z0 = sptest::random_latent(8, 8, 3, 100 + trial);
        LatentGrid eps = sptest::random_latent(8, 8, 3, 9000 + trial);
        int t = trial % s.steps;  // step t+1 -> t
        OracleBackbone oracle(eps);
        LatentGrid z_next = forward_noise(z0, t + 1, eps, s);
        StepResult r = oracle.predict_step(z_next, cond, t, s);
        LatentGrid expect = forward_noise(z0, t, eps, s);
        for (size_t i = 0; i < expect.data.size(); i++) {
            CHECK(std::abs(r.z_prev.data[i] - expect.data[i]) <= 1e-6f);
            // z0 recovery divides the float32 storage error of z by alpha[t+1]
            float bound = 1.5e-7f * (std::abs(z_next.data[i]) + std::abs(eps.data[i])) /
                              s.alpha[t + 1] +
                          1e-7f;
            CHECK(std::abs(r.z0.data[i] - z0.data[i]) <= bound);
        }
    }
}

TEST_CASE("single oracle step from a forward-noised latent recovers the clean latent") {
    SamplerSchedule s = SamplerSchedule::linear(50, 0.7f);
    LatentGrid z0 = sptest::random_latent(8, 8, 3, 77);
    LatentGrid eps = sptest::random_latent(8, 8, 3, 78);
    OracleBackbone oracle(eps);
    Conditioning cond;
    cond.embedding = make_toy().encode_text("x");
    LatentGrid z1 = forward_noise(z0, 1, eps, s);
    StepResult r = oracle.predict_step(z1, cond, 0, s);
    for (size_t i = 0; i < z0.data.size(); i++)
        CHECK(std::abs(r.z_prev.data[i] - z0.data[i]) <= 1e-6f);
}

TEST_CASE("predict_step is deterministic and validates t") {
    ToyBackbone toy = make_toy();
    SamplerSchedule s = SamplerSchedule::linear(50, 0.7f);
    Conditioning cond;
    cond.embedding = toy.encode_text("a sks teapot");
    LatentGrid z = sptest::random_latent(8, 8, 3, 4);

    StepResult a = toy.predict_step(z, cond, 10, s);
    StepResult b = toy.predict_step(z, cond, 10, s);
    CHECK(a.z_prev.data == b.z_prev.data);
    CHECK(a.z0.data == b.z0.data);

    CHECK_THROWS_AS(toy.predict_step(z, cond, 50, s), Error);
    CHECK_THROWS_AS(toy.predict_step(z, cond, -1, s), Error);
}

TEST_CASE("zero guidance ignores the prompt embedding") {
    ToyBackbone toy = make_toy();
    SamplerSchedule s = SamplerSchedule::linear(50, 0.7f);
    LatentGrid z = sptest::random_latent(8, 8, 3, 21);

    Conditioning c1, c2;
    c1.embedding = toy.encode_text("a red sks teapot");
    c2.embedding = toy.encode_text("completely different words");
    c1.guidance_scale = c2.guidance_scale = 0.f;
    CHECK(toy.predict_noise(z, c1, 5, s).data == toy.predict_noise(z, c2, 5, s).data);

    // with guidance 1 the prompt matters
    c1.guidance_scale = c2.guidance_scale = 1.f;
    CHECK(toy.predict_noise(z, c1, 5, s).data != toy.predict_noise(z, c2, 5, s).data);
}

TEST_CASE("toy text encoder: deterministic tokens, pooled mean") {
    ToyBackbone toy = make_toy();
    TextEmbedding e1 = toy.encode_text("a brown teapot");
    TextEmbedding e2 = toy.encode_text("a brown teapot");
    CHECK(e1.toks == 3);
    CHECK(e1.dim == 32);
    CHECK(e1.tokens == e2.tokens);

    for (int j = 0; j < e1.dim; j++) {
        float mean = 0.f;
        for (int i = 0; i < e1.toks; i++) mean += e1.tok(i, j);
        mean /= e1.toks;
        CHECK(e1.pooled[j] == doctest::Approx(mean).epsilon(1e-6));
    }
    // same word, same vector regardless of position
    TextEmbedding e3 = toy.encode_text("brown");
    for (int j = 0; j < e1.dim; j++) CHECK(e3.tok(0, j) == e1.tok(1, j));
}

TEST_CASE("counting wrapper forwards and counts") {
    auto toy = std::make_shared<ToyBackbone>(ToyOptions{});
    CountingBackbone counting(toy);
    SamplerSchedule s = SamplerSchedule::linear(10, 0.5f);
    Conditioning cond;
    cond.embedding = toy->encode_text("x");
    LatentGrid z = sptest::random_latent(4, 4, 3, 0);
    counting.predict_step(z, cond, 3, s);
    counting.predict_step(z, cond, 2, s);
    CHECK(counting.step_calls == 2);
}

TEST_CASE("backbone registry: toy ids, declared seams, unknown ids") {
    ToyOptions opt;
    auto toy = create_backbone("toy", opt);
    CHECK(toy->name() == "toy");
    CHECK(toy->latent_downscale() == 1);

    auto f8 = create_backbone("toy-f8", opt);
    CHECK(f8->latent_downscale() == 8);
    CHECK(f8->working_resolution() == 64);

    CHECK_THROWS_AS(create_backbone("sdxl-inpaint", opt), Error);
    try {
        create_backbone("sdxl-inpaint", opt);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::backbone_unavailable);
    }
    CHECK_THROWS_AS(create_backbone("nope", opt), Error);
    CHECK(backbone_id_known("toy-f8"));
    CHECK(backbone_id_known("flux-fill"));
    CHECK(!backbone_id_known("nope"));
}

TEST_CASE("base weight hash is stable and seed-dependent") {
    CHECK(make_toy(1, 0).base_weights_hash() == make_toy(1, 0).base_weights_hash());
    CHECK(make_toy(1, 0).base_weights_hash() != make_toy(1, 1).base_weights_hash());
}
