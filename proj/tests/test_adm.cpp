#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "core/adm.hpp"
#include "core/error.hpp"
#include "test_util.hpp"

using namespace sp;

namespace {

std::string write_fixture(const sptest::TempDir& dir, const nlohmann::json& j) {
    std::string path = dir.sub("vlm_fixture.json");
    std::ofstream out(path);
    out << j.dump();
    return path;
}

adm::SynthesisOptions small_synth() {
    adm::SynthesisOptions opt;
    opt.image_size = 32;
    opt.schedule = SamplerSchedule::linear(10, 0.5f);
    return opt;
}

}  // namespace

TEST_CASE("identity token detection is word-bounded") {
    CHECK(contains_identity_token("a sks teapot"));
    CHECK(contains_identity_token("a [sks] teapot"));
    CHECK(contains_identity_token("sks"));
    CHECK(!contains_identity_token("askss teapot"));
    CHECK(!contains_identity_token("tasks"));
    CHECK(!contains_identity_token("a brown teapot"));
}

TEST_CASE("extract_dictionary: fixture passthrough and normalization") {
    sptest::TempDir dir("adm-fixture");
    nlohmann::json fixture = {
        {"extract_attributes",
         {{"categories",
           {{"color", {"Brown", "brown", "BROWN"}},
            {"material", {"clay"}},
            {"texture", nlohmann::json::array()},
            {"shape", {"round"}},
            {"accessory", nlohmann::json::array()}}}}}};
    FixtureVlm vlm(write_fixture(dir, fixture));

    std::vector<ImageGrid> imgs = {sptest::blob_image(32, 32, 1)};
    AttributeDictionary dict = adm::extract_dictionary(imgs, "teapot", vlm);
    CHECK(dict.subject_class == "teapot");
    CHECK(dict.categories.at("color") == std::vector<std::string>{"brown"});  // deduplicated
    CHECK(dict.categories.at("material") == std::vector<std::string>{"clay"});
    CHECK(dict.categories.at("shape") == std::vector<std::string>{"round"});
    CHECK(dict.categories.at("texture").empty());
    CHECK(dict.vlm_model == "fixture-vlm");
    CHECK(!dict.prompt_hash.empty());
}

TEST_CASE("extract_dictionary: mock vlm is deterministic per subject class") {
    MockVlm vlm(7);
    std::vector<ImageGrid> imgs = {sptest::blob_image(32, 32, 1)};
    AttributeDictionary a = adm::extract_dictionary(imgs, "teapot", vlm);
    AttributeDictionary b = adm::extract_dictionary(imgs, "teapot", vlm);
    CHECK(a.categories == b.categories);
    AttributeDictionary c = adm::extract_dictionary(imgs, "backpack", vlm);
    CHECK(a.categories != c.categories);
    for (const auto& [_, words] : a.categories) CHECK(!words.empty());
}

TEST_CASE("extract_dictionary: malformed response fails after one retry") {
    sptest::TempDir dir("adm-bad");
    SUBCASE("unknown category") {
        FixtureVlm vlm(write_fixture(
            dir, {{"extract_attributes", {{"categories", {{"flavor", {"sweet"}}}}}}}));
        std::vector<ImageGrid> imgs = {sptest::blob_image(16, 16, 0)};
        CHECK_THROWS_AS(adm::extract_dictionary(imgs, "cake", vlm), Error);
        try {
            adm::extract_dictionary(imgs, "cake", vlm);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::malformed_vlm_response);
        }
    }
    SUBCASE("categories not an object") {
        FixtureVlm vlm(write_fixture(dir, {{"extract_attributes", {{"categories", 5}}}}));
        std::vector<ImageGrid> imgs = {sptest::blob_image(16, 16, 0)};
        CHECK_THROWS_AS(adm::extract_dictionary(imgs, "cake", vlm), Error);
    }
    SUBCASE("no images") {
        MockVlm vlm;
        CHECK_THROWS_AS(adm::extract_dictionary({}, "cake", vlm), Error);
    }
}

TEST_CASE("compose_prompts: the two-word dictionary enumeration") {
    AttributeDictionary d;
    d.subject_class = "teapot";
    d.categories["color"] = {"brown"};
    d.categories["material"] = {"clay"};

    // seed chosen so the deterministic sampler emits the two 1-attribute prompts
    auto ps = adm::compose_prompts(d, 2, nullptr, 26);
    REQUIRE(ps.size() == 2);
    CHECK(ps[0].text == "a brown teapot");
    CHECK(ps[1].text == "a clay teapot");
    CHECK(ps[0].attributes_used ==
          std::vector<std::pair<std::string, std::string>>{{"color", "brown"}});
    CHECK_FALSE(ps[0].has_identity_token);
}

TEST_CASE("compose_prompts: n distinct prompts, no identity token, deterministic") {
    MockVlm vlm(3);
    std::vector<ImageGrid> imgs = {sptest::blob_image(32, 32, 2)};
    AttributeDictionary dict = adm::extract_dictionary(imgs, "backpack", vlm);

    auto ps = adm::compose_prompts(dict, 30, nullptr, 11);
    CHECK(ps.size() == 30);
    std::set<std::string> texts;
    for (const auto& p : ps) {
        CHECK(!contains_identity_token(p.text));
        CHECK_FALSE(p.has_identity_token);
        texts.insert(p.text);
        for (const auto& [cat, word] : p.attributes_used) CHECK(dict.has_word(cat, word));
    }
    CHECK(texts.size() == 30);  // injective

    auto again = adm::compose_prompts(dict, 30, nullptr, 11);
    for (size_t i = 0; i < ps.size(); i++) CHECK(ps[i].text == again[i].text);
}

TEST_CASE("compose_prompts: insufficient combinations") {
    AttributeDictionary d;
    d.subject_class = "cup";
    d.categories["color"] = {"red"};
    CHECK_THROWS_AS(adm::compose_prompts(d, 10, nullptr, 0), Error);
    try {
        adm::compose_prompts(d, 10, nullptr, 0);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::insufficient_combinations);
    }
    AttributeDictionary empty;
    empty.subject_class = "cup";
    CHECK_THROWS_AS(adm::compose_prompts(empty, 1, nullptr, 0), Error);
}

TEST_CASE("synthesize_regularization: one deterministic sample per prompt") {
    AttributeDictionary d;
    d.subject_class = "teapot";
    d.categories["color"] = {"brown", "red"};
    d.categories["material"] = {"clay", "glass"};
    auto prompts = adm::compose_prompts(d, 5, nullptr, 4);

    ToyOptions opt;
    ToyBackbone toy(opt);
    adm::RegularizationSet set = adm::synthesize_regularization(prompts, toy, small_synth(), 9);
    CHECK(set.samples.size() == 5);
    CHECK(set.target_count == 5);
    for (const auto& s : set.samples) {
        CHECK(s.image.h == 32);
        size_t area = s.mask.count();
        CHECK(area >= static_cast<size_t>(0.35 * 32 * 32));
        CHECK(area <= static_cast<size_t>(0.75 * 32 * 32));
    }

    adm::RegularizationSet rerun = adm::synthesize_regularization(prompts, toy, small_synth(), 9);
    for (size_t i = 0; i < set.samples.size(); i++)
        CHECK(set.samples[i].image.data == rerun.samples[i].image.data);

    // prompts carrying the identity token are rejected outright
    std::vector<PromptRecord> bad = prompts;
    bad[0].text = "a sks teapot";
    CHECK_THROWS_AS(adm::synthesize_regularization(bad, toy, small_synth(), 9), Error);
}

TEST_CASE("regularization set persists byte-stably and round-trips") {
    AttributeDictionary d;
    d.subject_class = "teapot";
    d.categories["color"] = {"brown", "red"};
    d.categories["material"] = {"clay"};
    auto prompts = adm::compose_prompts(d, 4, nullptr, 8);
    ToyOptions opt;
    ToyBackbone toy(opt);
    adm::RegularizationSet set = adm::synthesize_regularization(prompts, toy, small_synth(), 13);

    sptest::TempDir dir_a("reg-a");
    sptest::TempDir dir_b("reg-b");
    adm::save_regularization_set(set, d, dir_a.str());
    adm::save_regularization_set(set, d, dir_b.str());

    CHECK(sptest::read_file(dir_a.sub("manifest.json")) ==
          sptest::read_file(dir_b.sub("manifest.json")));
    CHECK(sptest::read_file(dir_a.sub("images/0000.png")) ==
          sptest::read_file(dir_b.sub("images/0000.png")));
    CHECK(!sptest::read_file(dir_a.sub("images/0000.png")).empty());

    adm::RegularizationSet loaded = adm::load_regularization_set(dir_a.str());
    CHECK(loaded.samples.size() == set.samples.size());
    for (size_t i = 0; i < loaded.samples.size(); i++) {
        CHECK(loaded.samples[i].prompt.text == set.samples[i].prompt.text);
        CHECK(loaded.samples[i].image.h == set.samples[i].image.h);
        CHECK(loaded.samples[i].mask.count() == set.samples[i].mask.count());
    }

    AttributeDictionary dict2 = adm::load_dictionary(dir_a.sub("dictionary.json"));
    CHECK(dict2.subject_class == d.subject_class);
    CHECK(dict2.categories.at("color") == d.categories.at("color"));
}

TEST_CASE("loading a manifest with an identity-token prompt fails") {
    AttributeDictionary d;
    d.subject_class = "cup";
    d.categories["color"] = {"red", "blue"};
    auto prompts = adm::compose_prompts(d, 2, nullptr, 1);
    ToyOptions opt;
    ToyBackbone toy(opt);
    adm::RegularizationSet set = adm::synthesize_regularization(prompts, toy, small_synth(), 2);

    sptest::TempDir dir("reg-sks");
    adm::save_regularization_set(set, d, dir.str());

    // corrupt the manifest with an identity-token prompt
    std::string manifest = sptest::read_file(dir.sub("manifest.json"));
    size_t pos = manifest.find("\"a red cup\"");
    if (pos == std::string::npos) pos = manifest.find("\"a blue cup\"");
    REQUIRE(pos != std::string::npos);
    manifest.replace(pos, 2, "\"a sks");
    std::ofstream(dir.sub("manifest.json"), std::ios::trunc) << manifest;
    CHECK_THROWS_AS(adm::load_regularization_set(dir.str()), Error);
}
