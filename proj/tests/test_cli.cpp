#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "core/image_io.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string g_cli;

int run_cli(const std::string& args, std::string* out = nullptr) {
    std::string cmd = g_cli + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::string buf;
    char chunk[512];
    while (fgets(chunk, sizeof(chunk), pipe)) buf += chunk;
    int rc = pclose(pipe);
    if (out) *out = buf;
    return WEXITSTATUS(rc);
}

// newest run directory under base
std::string latest_run(const std::string& base) {
    std::string best;
    for (const auto& e : fs::directory_iterator(base))
        if (e.is_directory() && e.path().filename().string() > best)
            best = e.path().filename().string();
    return base + "/" + best;
}

}  // namespace

TEST_CASE("version and schema commands") {
    std::string out;
    CHECK(run_cli("version", &out) == 0);
    CHECK(out.find("0.1") != std::string::npos);
    CHECK(run_cli("schema", &out) == 0);
    CHECK(json::parse(out).contains("properties"));
}

TEST_CASE("config errors exit 2, pipeline errors exit 3") {
    sptest::TempDir dir("cli-err");
    std::string runs = dir.sub("runs");
    std::string out;
    CHECK(run_cli("inpaint --background a.png --mask b.png --prompt x --run-dir " + runs +
                      " --set schedule.lambda=2",
                  &out) == 2);
    CHECK(out.find("schedule.lambda") != std::string::npos);

    CHECK(run_cli("inpaint --background missing.png --mask b.png --prompt x --run-dir " + runs,
                  &out) == 3);

    // config validation failures must not leave a run directory behind
    CHECK(run_cli("inpaint --background a.png --mask b.png --prompt x --run-dir " +
                      dir.sub("norun") + " --set bogus.key=1",
                  &out) == 2);
    CHECK(!fs::exists(dir.sub("norun")));
}

TEST_CASE("full pipeline: adm, finetune, inpaint, manifest plumbing") {
    sptest::TempDir dir("cli-flow");
    std::string runs = dir.sub("runs");
    fs::create_directories(dir.sub("subj"));
    sp::save_image_png(dir.sub("subj/s0.png"), sptest::blob_image(48, 48, 3));
    sp::save_mask_png(dir.sub("subj/s0_mask.png"), sptest::box_mask(48, 48, {12, 12, 20, 20}));

    std::string fast = " --set schedule.steps=8 --set training.steps=6 --set training.lr=0.01 "
                       "--set adm.reg_count=3 --set adm.image_size=32 ";

    std::string out;
    CHECK(run_cli("adm --subject-dir " + dir.sub("subj") + " --class teapot --out " +
                      dir.sub("reg") + " --run-dir " + runs + fast,
                  &out) == 0);
    CHECK(fs::exists(dir.sub("reg/manifest.json")));

    // the run manifest lands before artifacts and carries the config hash
    std::string run = latest_run(runs);
    json manifest = json::parse(sptest::read_file(run + "/manifest.json"));
    CHECK(manifest["command"] == "adm");
    CHECK(manifest["config_hash"].get<std::string>().size() == 16);
    CHECK(manifest["config"]["adm"]["reg_count"] == 3);
    CHECK(manifest["seeds"].contains("adm"));

    CHECK(run_cli("finetune --subject-dir " + dir.sub("subj") + " --reg-dir " + dir.sub("reg") +
                      " --class teapot --out " + dir.sub("ckpt") + " --run-dir " + runs + fast,
                  &out) == 0);
    CHECK(fs::exists(dir.sub("ckpt/metadata.json")));

    sp::save_image_png(dir.sub("bg.png"), sptest::blob_image(64, 64, 5));
    sp::save_mask_png(dir.sub("mask.png"), sptest::box_mask(64, 64, {24, 24, 14, 14}));
    CHECK(run_cli("inpaint --background " + dir.sub("bg.png") + " --mask " + dir.sub("mask.png") +
                      " --prompt \"a red [sks] teapot\" --checkpoint " + dir.sub("ckpt") +
                      " --out " + dir.sub("out.png") + " --run-dir " + runs + fast,
                  &out) == 0);
    CHECK(fs::exists(dir.sub("out.png")));
    json sidecar = json::parse(sptest::read_file(dir.sub("out.png.json")));
    CHECK(sidecar["tas_applied"] == true);
}

TEST_CASE("ablation flags land in the run manifest and rerun reproduces bytes") {
    sptest::TempDir dir("cli-flags");
    std::string runs = dir.sub("runs");
    sp::save_image_png(dir.sub("bg.png"), sptest::blob_image(48, 48, 2));
    sp::save_mask_png(dir.sub("mask.png"), sptest::box_mask(48, 48, {16, 16, 12, 12}));
    std::string base = "inpaint --background " + dir.sub("bg.png") + " --mask " +
                       dir.sub("mask.png") + " --prompt \"a sks cup\" --set schedule.steps=8 ";

    std::string out;
    CHECK(run_cli(base + "--no-tas --no-dif --lambda 0.5 --seed 17 --run-dir " + runs +
                      " --run-name toggled --out " + dir.sub("a.png"),
                  &out) == 0);
    json manifest = json::parse(sptest::read_file(runs + "/toggled/manifest.json"));
    CHECK(manifest["config"]["tas"]["enabled"] == false);
    CHECK(manifest["config"]["dif"]["enabled"] == false);
    CHECK(manifest["config"]["schedule"]["lambda"] == 0.5);
    CHECK(manifest["config"]["seeds"]["inpaint"] == 17);

    // replaying the run manifest as --config reproduces the bytes
    CHECK(run_cli("inpaint --config " + runs + "/toggled/manifest.json --background " +
                      dir.sub("bg.png") + " --mask " + dir.sub("mask.png") +
                      " --prompt \"a sks cup\" --run-dir " + runs + " --run-name replay --out " +
                      dir.sub("b.png"),
                  &out) == 0);
    CHECK(sptest::read_file(dir.sub("a.png")) == sptest::read_file(dir.sub("b.png")));
    CHECK(!sptest::read_file(dir.sub("a.png")).empty());

    // --ablate spelling maps to the same toggles
    CHECK(run_cli(base + "--ablate no-tas --run-dir " + runs + " --run-name ab --out " +
                      dir.sub("c.png"),
                  &out) == 0);
    json ab = json::parse(sptest::read_file(runs + "/ab/manifest.json"));
    CHECK(ab["config"]["tas"]["enabled"] == false);
    CHECK(ab["config"]["dif"]["enabled"] == true);
}

TEST_CASE("lambda sweep spawns child runs with their own manifests") {
    sptest::TempDir dir("cli-sweep");
    std::string runs = dir.sub("runs");
    sp::save_image_png(dir.sub("bg.png"), sptest::blob_image(48, 48, 4));
    sp::save_mask_png(dir.sub("mask.png"), sptest::box_mask(48, 48, {18, 18, 10, 10}));

    std::string out;
    CHECK(run_cli("sweep --background " + dir.sub("bg.png") + " --mask " + dir.sub("mask.png") +
                      " --prompt \"a sks cup\" --lambdas 0 0.5 1 --set schedule.steps=6" +
                      " --run-dir " + runs + " --run-name sweep1",
                  &out) == 0);
    std::string root = runs + "/sweep1";
    for (const char* child : {"lambda-0.00", "lambda-0.50", "lambda-1.00"}) {
        CHECK(fs::exists(root + "/" + std::string(child) + "/manifest.json"));
        CHECK(fs::exists(root + "/" + std::string(child) + "/output.png"));
        json m = json::parse(sptest::read_file(root + "/" + std::string(child) +
                                               "/manifest.json"));
        CHECK(m["command"] == "inpaint");
    }
    json m0 = json::parse(sptest::read_file(root + "/lambda-0.00/manifest.json"));
    CHECK(m0["config"]["schedule"]["lambda"] == 0.0);
}

TEST_CASE("trace dump writes DMLT latents per step") {
    sptest::TempDir dir("cli-trace");
    std::string runs = dir.sub("runs");
    sp::save_image_png(dir.sub("bg.png"), sptest::blob_image(48, 48, 8));
    sp::save_mask_png(dir.sub("mask.png"), sptest::box_mask(48, 48, {16, 16, 12, 12}));
    std::string out;
    CHECK(run_cli("inpaint --background " + dir.sub("bg.png") + " --mask " + dir.sub("mask.png") +
                      " --prompt \"a sks cup\" --set schedule.steps=6 --lambda 0.5" +
                      " --dump-trace --run-dir " + runs + " --run-name traced",
                  &out) == 0);
    CHECK(fs::exists(runs + "/traced/trace/lcg_t003.dmlt"));
    CHECK(fs::exists(runs + "/traced/trace/gch_t000.dmlt"));
}

TEST_CASE("finetune with steps=0 still writes a checkpoint and exits 0") {
    sptest::TempDir dir("cli-zero");
    fs::create_directories(dir.sub("subj"));
    sp::save_image_png(dir.sub("subj/s.png"), sptest::blob_image(32, 32, 1));
    std::string out;
    CHECK(run_cli("finetune --subject-dir " + dir.sub("subj") + " --class cup --steps 0 --no-adm"
                      " --out " + dir.sub("ckpt") + " --run-dir " + dir.sub("runs"),
                  &out) == 0);
    CHECK(fs::exists(dir.sub("ckpt/metadata.json")));
    json meta = json::parse(sptest::read_file(dir.sub("ckpt/metadata.json")));
    CHECK(meta["steps"] == 0);
}

TEST_CASE("adm --reg-count controls the sample count") {
    sptest::TempDir dir("cli-regcount");
    fs::create_directories(dir.sub("subj"));
    sp::save_image_png(dir.sub("subj/s.png"), sptest::blob_image(32, 32, 2));
    std::string out;
    CHECK(run_cli("adm --subject-dir " + dir.sub("subj") + " --class clock --reg-count 5"
                      " --set adm.image_size=32 --set schedule.steps=6 --out " + dir.sub("reg") +
                      " --run-dir " + dir.sub("runs"),
                  &out) == 0);
    json manifest = json::parse(sptest::read_file(dir.sub("reg/manifest.json")));
    CHECK(manifest["count"] == 5);
}

TEST_CASE("multi-subject flow through the CLI") {
    sptest::TempDir dir("cli-multi");
    std::string runs = dir.sub("runs");
    sp::save_image_png(dir.sub("bg.png"), sptest::blob_image(64, 64, 6));
    sp::save_mask_png(dir.sub("m1.png"), sptest::box_mask(64, 64, {6, 6, 10, 10}));
    sp::save_mask_png(dir.sub("m2.png"), sptest::box_mask(64, 64, {40, 40, 12, 12}));
    json manifest = {{"background", dir.sub("bg.png")},
                     {"requests",
                      {{{"mask", dir.sub("m1.png")}, {"prompt", "a sks teapot"}},
                       {{"mask", dir.sub("m2.png")}, {"prompt", "a sks clock"}}}}};
    std::ofstream(dir.sub("multi.json")) << manifest.dump();

    std::string out;
    CHECK(run_cli("inpaint --multi " + dir.sub("multi.json") + " --set schedule.steps=6" +
                      " --out " + dir.sub("composite.png") + " --run-dir " + runs,
                  &out) == 0);
    CHECK(fs::exists(dir.sub("composite.png")));
}

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: test_cli <path-to-cli-binary>\n");
        return 1;
    }
    g_cli = argv[1];
    doctest::Context ctx;
    ctx.applyCommandLine(argc - 1, argv + 1);
    return ctx.run();
}
