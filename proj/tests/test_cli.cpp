#include <doctest.h>

#include <filesystem>
#include <json.hpp>

#include "cli_runner.hpp"

namespace fs = std::filesystem;

namespace {

fs::path fresh(const std::string& name) {
    const auto dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("cli exit codes") {
    const auto dir = fresh("fbsr_cli_codes");
    CHECK(cli::run(dir, "--help") == 0);
    CHECK(cli::run(dir, "train --help") == 0);
    CHECK(cli::run(dir, "") == 2);
    CHECK(cli::run(dir, "bogus") == 2);
    CHECK(cli::run(dir, "train") == 2);  // --data is required
    CHECK(cli::run(dir, "synth --set training.nope=1") == 2);
    CHECK(cli::run(dir, "synth --set layout.density=dense") == 2);
    CHECK(cli::run(dir, "synth -c missing.ini") == 2);
    CHECK(cli::run(dir, "train -d no_such_corpus") == 3);
    CHECK(cli::run(dir, "infer --checkpoint none.json -i nowhere") == 3);
    CHECK(cli::run(dir, "eval --sr a --hr b --lr c") == 3);
    fs::remove_all(dir);
}

TEST_CASE("default output root comes from the environment") {
    const auto dir = fresh("fbsr_cli_env");
    REQUIRE(cli::run(dir, "synth --frames 2 --frame-size 32", "FBSR_OUTPUT_ROOT=outputs") == 0);
    CHECK(fs::exists(dir / "outputs/synth/manifest.jsonl"));
    CHECK(fs::exists(dir / "outputs/synth/layout.json"));
    CHECK(fs::exists(dir / "outputs/synth/run_manifest.json"));
    fs::remove_all(dir);
}

TEST_CASE("end-to-end pipeline and report") {
    const auto dir = fresh("fbsr_cli_pipeline");
    REQUIRE(cli::pipeline(dir, 20) == 0);
    for (const char* f : {"run/training_log.csv", "run/validation.csv", "run/final.json", "run/split.json",
                          "eval/report.csv", "eval/report.txt", "eval/report.svg", "sr/run_manifest.json"}) {
        CHECK_MESSAGE(fs::exists(dir / f), f);
    }
    const auto manifest = nlohmann::json::parse(cli::slurp(dir / "run/run_manifest.json"));
    CHECK(manifest["command"] == "train");
    CHECK(manifest["seeds"].size() > 0);
    CHECK(!manifest["inputs"].empty());
    CHECK(manifest["inputs"][0]["sha256"].get<std::string>().size() == 64);
    CHECK(manifest["config"]["training"]["iterations"] == 20);

    REQUIRE(cli::run(dir, "report --run run -o summary") == 0);
    CHECK(fs::exists(dir / "summary/summary.txt"));
    REQUIRE(cli::run(dir, "report --run eval -o summary_eval") == 0);
    CHECK(cli::slurp(dir / "summary_eval/summary.txt").find("tot_cs") != std::string::npos);
    fs::remove_all(dir);
}
