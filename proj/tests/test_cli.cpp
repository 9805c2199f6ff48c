#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <styleblend/cli.hpp>

using namespace styleblend;
namespace fs = std::filesystem;

namespace {

fs::path workdir() {
    static fs::path p = [] {
        fs::path d = fs::temp_directory_path() / "styleblend_cli_test";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

std::string tiny_config_file() {
    static std::string path = [] {
        nlohmann::json j = {
            {"model", {{"base_width", 8}, {"time_dim", 16}, {"text_dim", 32}, {"groups", 4}}},
            {"schedule", {{"timesteps", 50}}},
            {"pretrain", {{"steps", 6}, {"batch", 2}}},
            {"texture", {{"embed_steps", 3}, {"lora_steps", 3}, {"batch", 2}}},
            {"composition", {{"steps", 3}, {"per_ref", 2}}},
            {"sampling", {{"steps", 4}}},
            {"corpus", {{"per_cell", 2}, {"val_per_cell", 2}}},
        };
        fs::path p = workdir() / "tiny.json";
        std::ofstream f(p);
        f << j.dump(2);
        return p.string();
    }();
    return path;
}

uint64_t tree_hash(const fs::path& root) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& f : files) {
        h = fnv1a64(fs::relative(f, root).string(), h);
        auto bytes = read_file(f.string());
        h = fnv1a64(bytes.data(), bytes.size(), h);
    }
    return h;
}

}  // namespace

TEST_CASE("cli: corpus build is byte-deterministic across reruns") {
    auto d1 = workdir() / "c1";
    auto d2 = workdir() / "c2";
    CHECK(cli_main({"corpus", "build", "--config", tiny_config_file(), "--out", d1.string(), "--seed", "5"}) == 0);
    CHECK(cli_main({"corpus", "build", "--config", tiny_config_file(), "--out", d2.string(), "--seed", "5"}) == 0);
    CHECK(tree_hash(d1) == tree_hash(d2));
}

TEST_CASE("cli: end-to-end pipeline on a tiny model, byte-determinism of every artifact") {
    auto root = workdir();
    auto corpus = root / "corpus";
    if (!fs::exists(corpus / "manifest.json"))
        REQUIRE(cli_main({"corpus", "build", "--config", tiny_config_file(), "--out", corpus.string(), "--seed", "5"}) == 0);

    auto ckpt = (root / "base.ckpt").string();
    REQUIRE(cli_main({"pretrain", "--config", tiny_config_file(), "--corpus", corpus.string(), "--out", ckpt,
                      "--seed", "6"}) == 0);
    auto ckpt2 = (root / "base2.ckpt").string();
    REQUIRE(cli_main({"pretrain", "--config", tiny_config_file(), "--corpus", corpus.string(), "--out", ckpt2,
                      "--seed", "6"}) == 0);
    CHECK(read_file(ckpt) == read_file(ckpt2));

    // checkpoint round trip: saved and reloaded models sample identically
    ModelWeights w = load_checkpoint(ckpt);
    CHECK(w.hash() == load_checkpoint(ckpt2).hash());

    auto bundle = (root / "style.bundle").string();
    REQUIRE(cli_main({"style", "learn-texture", "--config", tiny_config_file(), "--base", ckpt, "--corpus",
                      corpus.string(), "--style", "voltage", "--k", "3", "--out", bundle, "--seed", "7"}) == 0);
    auto edits = (root / "edits").string();
    REQUIRE(cli_main({"style", "sdedit-data", "--config", tiny_config_file(), "--base", ckpt, "--corpus",
                      corpus.string(), "--style", "voltage", "--k", "3", "--out", edits, "--seed", "7"}) == 0);
    REQUIRE(cli_main({"style", "learn-composition", "--config", tiny_config_file(), "--base", ckpt, "--data", edits,
                      "--out", bundle, "--seed", "7"}) == 0);

    StyleBundle b = load_bundle(bundle);
    CHECK(b.has_texture);
    CHECK(b.has_composition);
    CHECK(b.base_model_hash == w.hash());

    // the full dataset size contract: per_ref * refs
    SDEditDataset ds = load_sdedit_dataset(edits);
    CHECK(static_cast<int>(ds.items.size()) == 2 * 3);

    // synth in every mode, deterministic reruns
    for (const std::string mode : {"blend", "csb", "tsb", "q-only", "kv-only"}) {
        auto o1 = root / ("synth1_" + mode);
        auto o2 = root / ("synth2_" + mode);
        REQUIRE(cli_main({"synth", "--config", tiny_config_file(), "--base", ckpt, "--bundle", bundle, "--mode", mode,
                          "--class", "ring", "--count", "1", "--out", o1.string(), "--seed", "9"}) == 0);
        REQUIRE(cli_main({"synth", "--config", tiny_config_file(), "--base", ckpt, "--bundle", bundle, "--mode", mode,
                          "--class", "ring", "--count", "1", "--out", o2.string(), "--seed", "9"}) == 0);
        CHECK(tree_hash(o1) == tree_hash(o2));
    }
}

TEST_CASE("cli: exit codes separate config errors from validation failures") {
    auto root = workdir();
    // malformed json -> 3
    auto bad = root / "bad.json";
    {
        std::ofstream f(bad);
        f << "{ not json";
    }
    CHECK(cli_main({"corpus", "build", "--config", bad.string(), "--out", (root / "x").string()}) == 3);

    // invalid values -> 3
    auto invalid = root / "invalid.json";
    {
        std::ofstream f(invalid);
        f << R"({"composition": {"strength": 1.5}})";
    }
    CHECK(cli_main({"corpus", "build", "--config", invalid.string(), "--out", (root / "x").string()}) == 3);

    // unknown flag -> 3
    CHECK(cli_main({"corpus", "build", "--nope", "x"}) == 3);

    // missing input file -> 2
    CHECK(cli_main({"pretrain", "--corpus", (root / "nowhere").string(), "--out", (root / "x.ckpt").string()}) == 2);

    // gradcheck passes -> 0
    CHECK(cli_main({"gradcheck"}) == 0);
}

TEST_CASE("cli: STYLEBLEND_OUT resolves relative outputs") {
    auto root = workdir() / "envroot";
    fs::create_directories(root);
    setenv("STYLEBLEND_OUT", root.string().c_str(), 1);
    CHECK(cli_main({"corpus", "build", "--config", tiny_config_file(), "--out", "envcorpus", "--seed", "3"}) == 0);
    unsetenv("STYLEBLEND_OUT");
    CHECK(fs::exists(root / "envcorpus" / "manifest.json"));
}
