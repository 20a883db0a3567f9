#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "core/bench.hpp"
#include "core/error.hpp"
#include "core/image_io.hpp"
#include "test_util.hpp"

using namespace sp;
using namespace sp::bench;
using nlohmann::json;

namespace {

// corpus of n images with one annotated box each; sizes and boxes alternate so
// thresholds can split them predictably
void write_corpus(const sptest::TempDir& dir, int n) {
    json ann = json::array();
    for (int i = 0; i < n; i++) {
        // even index: 64x64 image with a 24x24 box; odd: 24x24 image / 8x8 box
        int size = (i % 2 == 0) ? 64 : 24;
        int box = (i % 2 == 0) ? 24 : 8;
        std::string name = "img" + std::to_string(i) + ".png";
        save_image_png(dir.sub(name), sptest::blob_image(size, size, i));
        ann.push_back({{"image", name}, {"boxes", {{4, 4, box, box}}}});
    }
    std::ofstream out(dir.sub("annotations.json"));
    out << ann.dump(2);
}

std::vector<SubjectSpec> subjects(int n) {
    std::vector<SubjectSpec> out;
    const char* classes[] = {"teapot", "backpack", "clock", "vase", "boot"};
    for (int i = 0; i < n; i++)
        out.push_back({"subj" + std::to_string(i), classes[i % 5]});
    return out;
}

}  // namespace

TEST_CASE("filter_backgrounds applies both thresholds") {
    sptest::TempDir dir("bench-corpus");
    write_corpus(dir, 10);

    SUBCASE("thresholds exclude the small half") {
        BackgroundManifest m = filter_backgrounds(dir.str(), 32, 16);
        CHECK(m.entries.size() == 5);  // even images only
        for (const auto& e : m.entries) {
            CHECK(e.img_h >= 32);
            CHECK(e.box.w >= 16);
        }
    }
    SUBCASE("a 8px box falls below a 32px box-side threshold") {
        BackgroundManifest m = filter_backgrounds(dir.str(), 0, 32);
        CHECK(m.entries.empty());  // 24px and 8px boxes both excluded
        m = filter_backgrounds(dir.str(), 0, 16);
        CHECK(m.entries.size() == 5);
    }
    SUBCASE("all pass when thresholds are zero") {
        BackgroundManifest m = filter_backgrounds(dir.str(), 0, 0);
        CHECK(m.entries.size() == 10);
    }
    SUBCASE("thresholds tuned to exclude exactly 4 of 10") {
        // raise the resolution floor above the odd images (24px) but keep all
        // even ones, then drop one more pair via the box side
        json ann = json::array();
        for (int i = 0; i < 10; i++) {
            int size = 32 + 8 * i;  // 32..104
            std::string name = "i" + std::to_string(i) + ".png";
            save_image_png(dir.sub(name), sptest::blob_image(size, size, i));
            ann.push_back({{"image", name}, {"boxes", {{0, 0, 16, 16}}}});
        }
        std::ofstream(dir.sub("annotations.json"), std::ios::trunc) << ann.dump();
        BackgroundManifest m = filter_backgrounds(dir.str(), 64, 8);
        CHECK(m.entries.size() == 6);  // sizes 64..104 pass, 32..56 (4 images) excluded
    }
}

TEST_CASE("filter_backgrounds aggregates unreadable entries") {
    sptest::TempDir dir("bench-bad");
    json ann = json::array();
    save_image_png(dir.sub("good.png"), sptest::blob_image(64, 64, 1));
    ann.push_back({{"image", "good.png"}, {"boxes", {{0, 0, 32, 32}}}});
    ann.push_back({{"image", "missing1.png"}, {"boxes", {{0, 0, 32, 32}}}});
    ann.push_back({{"image", "missing2.png"}, {"boxes", {{0, 0, 32, 32}}}});
    std::ofstream(dir.sub("annotations.json")) << ann.dump();

    try {
        filter_backgrounds(dir.str(), 0, 0);
        CHECK(false);
    } catch (const Error& e) {
        std::string msg = e.what();
        CHECK(msg.find("missing1.png") != std::string::npos);
        CHECK(msg.find("missing2.png") != std::string::npos);
    }
    CHECK_THROWS_AS(filter_backgrounds(dir.sub("nope"), 0, 0), Error);
}

TEST_CASE("assemble: counts, determinism, subject-order invariance") {
    sptest::TempDir dir("bench-asm");
    write_corpus(dir, 16);  // 8 qualifying backgrounds at thresholds 32/16
    BackgroundManifest m = filter_backgrounds(dir.str(), 32, 16);
    REQUIRE(m.entries.size() == 8);

    SUBCASE("3 subjects x 5 per subject gives exactly 15 tuples") {
        auto tuples = assemble(subjects(3), m, 5, {}, 42);
        CHECK(tuples.size() == 15);
        std::set<std::string> ids;
        for (const auto& t : tuples) ids.insert(t.id);
        CHECK(ids.size() == 15);
    }
    SUBCASE("single subject, single draw") {
        auto tuples = assemble(subjects(1), m, 1, {}, 0);
        CHECK(tuples.size() == 1);
        CHECK(tuples[0].split == "identity");
    }
    SUBCASE("same seed twice gives identical tuple lists") {
        auto a = assemble(subjects(3), m, 4, {}, 7);
        auto b = assemble(subjects(3), m, 4, {}, 7);
        REQUIRE(a.size() == b.size());
        for (size_t i = 0; i < a.size(); i++) {
            CHECK(a[i].id == b[i].id);
            CHECK(a[i].background_path == b[i].background_path);
            CHECK(a[i].split == b[i].split);
        }
        auto c = assemble(subjects(3), m, 4, {}, 8);
        bool same = true;
        for (size_t i = 0; i < a.size(); i++)
            if (a[i].background_path != c[i].background_path) same = false;
        CHECK(!same);
    }
    SUBCASE("shuffling subject order preserves each subject's draws") {
        auto fwd = assemble(subjects(3), m, 4, {}, 9);
        auto rev_subjects = subjects(3);
        std::reverse(rev_subjects.begin(), rev_subjects.end());
        auto rev = assemble(rev_subjects, m, 4, {}, 9);

        std::map<std::string, std::multiset<std::string>> by_subject_fwd, by_subject_rev;
        for (const auto& t : fwd) by_subject_fwd[t.subject_id].insert(t.background_path);
        for (const auto& t : rev) by_subject_rev[t.subject_id].insert(t.background_path);
        CHECK(by_subject_fwd == by_subject_rev);
    }
    SUBCASE("insufficient backgrounds") {
        CHECK_THROWS_AS(assemble(subjects(1), m, 9, {}, 0), Error);
        try {
            assemble(subjects(1), m, 9, {}, 0);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::insufficient_backgrounds);
        }
    }
    SUBCASE("no tuple references a filtered-out background") {
        std::set<std::string> retained;
        for (const auto& e : m.entries) retained.insert(e.image_path);
        for (const auto& t : assemble(subjects(4), m, 5, {}, 3))
            CHECK(retained.count(t.background_path) == 1);
    }
}

TEST_CASE("assemble prompts: defaults bounded 3..5, editing references attributes") {
    sptest::TempDir dir("bench-prompts");
    write_corpus(dir, 8);
    BackgroundManifest m = filter_backgrounds(dir.str(), 32, 16);

    auto tuples = assemble(subjects(2), m, 4, {}, 1);
    for (const auto& t : tuples) {
        CHECK(t.prompts.size() >= 3);
        CHECK(t.prompts.size() <= 5);
        for (const auto& p : t.prompts) {
            CHECK(p.text.find("{class}") == std::string::npos);
            if (t.split == "identity") CHECK(p.has_identity_token);
            if (t.split == "editing") CHECK(!p.attributes_used.empty());
        }
    }

    SUBCASE("custom prompt sets are honored and validated") {
        std::map<std::string, PromptSet> sets;
        sets["subj0"] = {{"a [sks] {class} here", "my [sks] {class}", "the [sks] {class}"},
                         {"a golden [sks] {class}", "a striped [sks] {class}",
                          "a cubic [sks] {class}"}};
        auto custom = assemble({subjects(1)[0]}, m, 2, sets, 5);
        CHECK(custom[0].prompts[0].text == "a [sks] teapot here");

        std::map<std::string, PromptSet> bad;
        bad["subj0"] = {{"a [sks] {class}"}, {"an edit with no attribute {class}"}};
        CHECK_THROWS_AS(assemble({subjects(1)[0]}, m, 2, bad, 5), Error);
    }
}

TEST_CASE("assemble materializes masks matching the image dims") {
    sptest::TempDir dir("bench-masks");
    write_corpus(dir, 8);
    BackgroundManifest m = filter_backgrounds(dir.str(), 32, 16);
    sptest::TempDir out("bench-masks-out");

    auto tuples = assemble(subjects(2), m, 2, {}, 11, out.str());
    for (const auto& t : tuples) {
        REQUIRE(!t.mask_path.empty());
        BinaryMask mask = load_mask_png(t.mask_path);
        CHECK(mask.h == t.img_h);
        CHECK(mask.w == t.img_w);
        CHECK(mask.count() == static_cast<size_t>(t.box.w) * t.box.h);
    }
}

TEST_CASE("largest qualifying box per background becomes the mask box") {
    sptest::TempDir dir("bench-big");
    save_image_png(dir.sub("multi.png"), sptest::blob_image(96, 96, 0));
    json ann = json::array();
    ann.push_back({{"image", "multi.png"},
                   {"boxes", {{0, 0, 20, 20}, {10, 10, 48, 40}, {50, 50, 30, 30}}}});
    std::ofstream(dir.sub("annotations.json")) << ann.dump();

    BackgroundManifest m = filter_backgrounds(dir.str(), 0, 16);
    CHECK(m.entries.size() == 3);
    auto tuples = assemble(subjects(1), m, 1, {}, 0);
    CHECK(tuples[0].box == Box{10, 10, 48, 40});
}

TEST_CASE("benchmark manifest round-trips") {
    sptest::TempDir dir("bench-manifest");
    write_corpus(dir, 8);
    BackgroundManifest m = filter_backgrounds(dir.str(), 32, 16);
    auto tuples = assemble(subjects(2), m, 3, {}, 13);

    std::string path = dir.sub("benchmark.json");
    save_benchmark_manifest(tuples, path);
    auto loaded = load_benchmark_manifest(path);
    REQUIRE(loaded.size() == tuples.size());
    for (size_t i = 0; i < tuples.size(); i++) {
        CHECK(loaded[i].id == tuples[i].id);
        CHECK(loaded[i].box == tuples[i].box);
        CHECK(loaded[i].split == tuples[i].split);
        CHECK(loaded[i].prompts.size() == tuples[i].prompts.size());
    }
}
