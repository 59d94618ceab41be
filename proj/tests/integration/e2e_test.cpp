// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include <chrono>
#include <cstdlib>
#include <fstream>

#include "doctest.h"
#include "imad/evalkit.hpp"
#include "imad/pipeline.hpp"
#include "support/planted_fixture.hpp"
#include "support/test_util.hpp"

using namespace imad;
namespace fs = std::filesystem;

namespace {

const fs::path kCli = IMAD_CLI_PATH;

int run(const std::string& args) {
    const auto status = std::system(("'" + kCli.string() + "' " + args + " > /dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("planted fixture end to end") {
    imad::testing::TempDir dir;
    const auto fx = imad::testing::write_planted_fixture(dir.path() / "in");
    REQUIRE(fx.expected.size() == 12);

    const auto start = std::chrono::steady_clock::now();
    const auto first = imad::testing::run_planted_pipeline(kCli, fx, dir / "a");
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    REQUIRE_MESSAGE(first.empty(), first);
    CHECK(seconds < 10.0);
    const auto second = imad::testing::run_planted_pipeline(kCli, fx, dir / "b");
    REQUIRE_MESSAGE(second.empty(), second);

    CHECK(pipeline::read_dataset(dir / "a" / "imad.jsonl") == fx.expected);
    // Only visual candidates pass stage one.
    CHECK(pipeline::read_selection(dir / "a" / "selected.jsonl").size() == 20);

    std::size_t compared = 0;
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        const auto name = entry.path().filename();
        INFO(name.string());
        CHECK(slurp(entry.path()) == slurp(dir / "b" / name));
        ++compared;
    }
    CHECK(compared == 11);

    SUBCASE("stats, sweep and cv on the same run") {
        const std::string base = "--config '" + fx.config.string() + "' --out-dir '" + (dir / "a").string() + "' ";
        REQUIRE(run(base + "stats") == 0);
        const auto stats = Json::parse(slurp(dir / "a" / "imad.stats.json"));
        CHECK(stats["total_dialogues"] == 12);
        REQUIRE(run(base + "sweep") == 0);
        const auto sweep = Json::parse(slurp(dir / "a" / "sweep.json"));
        std::vector<std::size_t> ns;
        for (const auto& row : sweep["rows"]) ns.push_back(row["n"].get<std::size_t>());
        CHECK(ns == std::vector<std::size_t>{1, 5, 10, 15, 50});
        REQUIRE(run(base + "cv") == 0);
        const auto cv = Json::parse(slurp(dir / "a" / "cv_report.json"));
        CHECK(cv["metrics"]["precision"]["mean"] == 1.0);
    }
}

TEST_CASE("CLI exit codes") {
    imad::testing::TempDir dir;
    const auto fx = imad::testing::write_planted_fixture(dir.path() / "in");
    const std::string out = " --out-dir '" + (dir / "out").string() + "' ";
    CHECK(run("--help") == 0);
    CHECK(run("no-such-command") == 1);
    CHECK(run(out + "sample") == 1);  // no seed
    CHECK(run(out + "--seed 3 sample") == 2);  // no candidates file
    CHECK(run(out + "--path raw=" + fx.raw.string() + " ingest") == 0);
    CHECK(run(out + "--path bogus=x ingest") == 1);
    std::ofstream(dir / "bad.json") << R"({"seed": 1, "forest": {"n_trees": 0}})";
    CHECK(run("--config '" + (dir / "bad.json").string() + "'" + out + "extract") == 1);
    CHECK(run("--config '" + (dir / "missing.toml").string() + "'" + out + "extract") == 2);
    std::ofstream(dir / "broken.jsonl") << "{\"dialogue_id\": \"x\", \"turns\": [}\n";
    CHECK(run(out + "--path raw=" + (dir / "broken.jsonl").string() + " ingest") == 1);
}
