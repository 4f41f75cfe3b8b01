#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "refground/cli.hpp"

using namespace refground;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out;
    std::string err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::size_t total_scenes(const std::string& summary) {
    const auto j = nlohmann::json::parse(summary);
    return j["train"]["scenes"].get<std::size_t>() + j["val"]["scenes"].get<std::size_t>() +
           j["test"]["scenes"].get<std::size_t>();
}

// One small corpus and model pair shared by the cases below.
struct Workspace {
    fs::path root;
    fs::path corpus;
    fs::path models;

    Workspace() {
        root = fs::temp_directory_path() / "refground_cli_test";
        fs::remove_all(root);
        corpus = root / "corpus";
        models = root / "models";
        fs::create_directories(models);
        REQUIRE(cli({"gen-corpus", "--out", corpus.string(), "--scenes", "60", "--seed", "5",
                     "--ratios", "0.5,0.25,0.25"})
                    .code == kExitOk);
        REQUIRE(cli({"train", "--role", "semantic", "--corpus", corpus.string(), "--out",
                     (models / "semantic.json").string(), "--epochs", "2"})
                    .code == kExitOk);
        REQUIRE(cli({"train", "--role", "spatial", "--corpus", corpus.string(), "--out",
                     (models / "spatial.json").string(), "--epochs", "2"})
                    .code == kExitOk);
    }

    fs::path first_scene(const char* part) const {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(corpus / part)) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        return files.front();
    }
};

const Workspace& workspace() {
    static const Workspace w;
    return w;
}

}  // namespace

TEST_CASE("gen-corpus writes the three partitions") {
    const auto& w = workspace();
    for (const char* part : {"train", "val", "test"}) {
        CHECK(fs::is_directory(w.corpus / part));
    }
    const auto dir = w.root / "gen";
    const auto run = cli({"gen-corpus", "--out", dir.string(), "--scenes", "12"});
    REQUIRE(run.code == kExitOk);
    CHECK(total_scenes(run.out) == 12);
    const auto again = cli({"gen-corpus", "--out", (w.root / "gen2").string(), "--scenes", "12"});
    CHECK(again.out == run.out);
    CHECK(slurp(w.root / "gen" / "train" / fs::directory_iterator(dir / "train")->path().filename()) ==
          slurp(w.root / "gen2" / "train" / fs::directory_iterator(dir / "train")->path().filename()));
}

TEST_CASE("ground prints ranked candidates as json") {
    const auto& w = workspace();
    const auto run = cli({"ground", "--scene", w.first_scene("test").string(), "--query", "the red cup",
                          "--models", w.models.string()});
    REQUIRE(run.code == kExitOk);
    const auto j = nlohmann::json::parse(run.out);
    CHECK(j["query"] == "the red cup");
    CHECK(j["aggregation"] == "noisy-or");
    CHECK(!j["ranked"].empty());
    CHECK(j["ranked"][0]["rank"] == 1);
    CHECK(!j.contains("diagnostics"));
    const auto diag = cli({"ground", "--scene", w.first_scene("test").string(), "--query", "the red cup",
                           "--models", w.models.string(), "--emit-diagnostics", "--aggregation", "max"});
    REQUIRE(diag.code == kExitOk);
    const auto d = nlohmann::json::parse(diag.out);
    CHECK(d["aggregation"] == "max");
    CHECK(d.contains("diagnostics"));
}

TEST_CASE("usage errors exit with 1") {
    const auto& w = workspace();
    auto run = cli({"ground", "--scene", w.first_scene("test").string(), "--models", w.models.string()});
    CHECK(run.code == kExitUsage);
    CHECK(run.err.find("--query") != std::string::npos);
    CHECK(run.err.find("Usage") != std::string::npos);
    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"ground", "--scene", "x", "--query", "q", "--models", "m", "--aggregation", "mean"}).code ==
          kExitUsage);
    CHECK(cli({"gen-corpus", "--out", "x", "--ratios", "0.5,0.5"}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("runtime errors exit with 2") {
    const auto& w = workspace();
    CHECK(cli({"ground", "--scene", (w.root / "missing.json").string(), "--query", "the cup", "--models",
               w.models.string()})
              .code == kExitRuntime);
    const auto empty = cli({"ground", "--scene", w.first_scene("test").string(), "--query", "  ", "--models",
                            w.models.string()});
    CHECK(empty.code == kExitRuntime);
    CHECK(cli({"act", "--scene", w.first_scene("test").string(), "--object", "nope"}).code == kExitRuntime);
}

TEST_CASE("config file, environment and flags take precedence in that order") {
    const auto& w = workspace();
    const auto config = w.root / "config.json";
    std::ofstream(config) << R"({"scenes": 5, "out": ")" << (w.root / "prec").generic_string() << R"("})";
    const std::string cfg = "--config=" + config.string();

    auto run = cli({cfg, "gen-corpus"});
    REQUIRE(run.code == kExitOk);
    CHECK(total_scenes(run.out) == 5);

    ::setenv("REFGROUND_SCENES", "7", 1);
    run = cli({cfg, "gen-corpus"});
    CHECK(total_scenes(run.out) == 7);
    run = cli({cfg, "gen-corpus", "--scenes", "9"});
    CHECK(total_scenes(run.out) == 9);
    ::unsetenv("REFGROUND_SCENES");

    ::setenv("REFGROUND_CONFIG", config.c_str(), 1);
    run = cli({"gen-corpus"});
    ::unsetenv("REFGROUND_CONFIG");
    CHECK(run.code == kExitOk);
    CHECK(total_scenes(run.out) == 5);
}

TEST_CASE("unknown config keys are rejected") {
    const auto& w = workspace();
    const auto config = w.root / "bad.json";
    std::ofstream(config) << R"({"scenes": 5, "colour": "red"})";
    const auto run = cli({"--config", config.string(), "gen-corpus", "--out", "x"});
    CHECK(run.code == kExitUsage);
    CHECK(run.err.find("colour") != std::string::npos);
    std::ofstream(w.root / "broken.json") << "{";
    CHECK(cli({"--config", (w.root / "broken.json").string(), "gen-corpus", "--out", "x"}).code == kExitUsage);
}

TEST_CASE("eval writes an identical report on every run") {
    const auto& w = workspace();
    const auto a = w.root / "report_a.json";
    const auto b = w.root / "report_b.json";
    const auto first = cli({"eval", "--corpus", w.corpus.string(), "--models", w.models.string(), "--out",
                            a.string()});
    REQUIRE(first.code == kExitOk);
    REQUIRE(cli({"eval", "--corpus", w.corpus.string(), "--models", w.models.string(), "--out", b.string()})
                .code == kExitOk);
    CHECK(slurp(a) == slurp(b));
    CHECK(slurp(a).find("runtime") == std::string::npos);
    CHECK(first.out.find("noisy-or (ground_truth)") != std::string::npos);
    const auto c = w.root / "report_c.json";
    REQUIRE(cli({"eval", "--corpus", w.corpus.string(), "--models", w.models.string(), "--out", c.string(),
                 "--runtime"})
                .code == kExitOk);
    CHECK(slurp(c).find("runtime") != std::string::npos);
}

TEST_CASE("act reports centroid and grasp") {
    const auto& w = workspace();
    const auto scene = w.first_scene("val");
    const auto j = nlohmann::json::parse(slurp(scene));
    const std::string object = j["objects"][0]["id"];
    const auto run = cli({"act", "--scene", scene.string(), "--object", object});
    REQUIRE(run.code == kExitOk);
    const auto body = nlohmann::json::parse(run.out);
    CHECK(body["object"] == object);
    CHECK(body["centroid"].size() == 3);
    const std::string grasp = body["grasp"];
    CHECK((grasp == "forward" || grasp == "top_down"));
    CHECK(cli({"act", "--scene", scene.string(), "--object", object}).out == run.out);
    CHECK(cli({"act", "--scene", scene.string(), "--object", object, "--gripper", "0,1"}).code == kExitUsage);
}
