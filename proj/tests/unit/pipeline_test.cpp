// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <fstream>
#include <set>

#include "doctest.h"
#include "imad/config.hpp"
#include "imad/error.hpp"
#include "imad/labels.hpp"
#include "imad/pipeline.hpp"
#include "support/forest_fixtures.hpp"
#include "support/test_util.hpp"

using namespace imad;
using namespace imad::pipeline;
using labels::LabelRecord;
using labels::Taxonomy;

namespace {

// One hand-built tree: x0 <= 0.5 -> [10, 0] (proba 0); otherwise split on
// x1 at 0.25, 0.5 and 0.75 into leaves with proba 0.2, 0.5, 0.7 and 1.0.
forest::ForestModel staircase_model() {
    forest::ForestModel m;
    m.params.n_trees = 1;
    m.params.max_features = 3;
    m.feature_names = features::default_feature_names();
    forest::Tree t;
    auto internal = [](int f, double thr, int l, int r, std::int64_t n) {
        forest::TreeNode node;
        node.feature = f;
        node.threshold = thr;
        node.left = l;
        node.right = r;
        node.n_samples = n;
        return node;
    };
    auto leaf = [](std::int64_t neg, std::int64_t pos) {
        forest::TreeNode node;
        node.counts = {neg, pos};
        node.n_samples = neg + pos;
        return node;
    };
    t.nodes = {internal(0, 0.5, 1, 2, 50), leaf(10, 0),  internal(1, 0.5, 3, 6, 40), internal(1, 0.25, 4, 5, 20),
               leaf(8, 2),                leaf(5, 5),   internal(1, 0.75, 7, 8, 20), leaf(3, 7),
               leaf(0, 10)};
    m.trees.push_back(t);
    return forest::model_from_json(forest::to_json(m));  // validates the structure
}

features::FeatureMatrix matrix_of(std::vector<std::pair<std::string, forest::FeatureRow>> rows) {
    features::FeatureMatrix m;
    m.feature_names = features::default_feature_names();
    for (auto& [id, row] : rows) {
        m.candidate_ids.push_back(id);
        m.rows.push_back(row);
    }
    return m;
}

LabelRecord four(std::string cand, std::string rater, std::string label) {
    return {std::move(cand), std::move(rater), std::move(label), Taxonomy::stage2_four_class, ""};
}

corpus::Candidate candidate(std::string id, std::string dialogue, std::string utterance) {
    corpus::Candidate c;
    c.candidate_id = std::move(id);
    c.dialogue_id = std::move(dialogue);
    c.turn_index = 1;
    c.context = {{"A", "we went hiking today"}};
    c.utterance = std::move(utterance);
    return c;
}

}  // namespace

TEST_CASE("stage1_select") {
    const auto model = staircase_model();
    const auto m = matrix_of({{"zero", {0.1, 0, 0, 0, 0}},
                              {"p20", {0.9, 0.1, 0, 0, 0}},
                              {"p50", {0.9, 0.4, 0, 0, 0}},
                              {"p70", {0.9, 0.6, 0, 0, 0}},
                              {"p70b", {0.9, 0.7, 0, 0, 0}},
                              {"one", {0.9, 0.9, 0, 0, 0}}});

    SUBCASE("threshold 0.5 keeps 0.5 and up, sorted by proba then id") {
        auto s = stage1_select(model, m, 0.5);
        REQUIRE(s.size() == 4);
        CHECK(s[0] == Selection{"one", 1.0});
        CHECK(s[1] == Selection{"p70", 0.7});
        CHECK(s[2] == Selection{"p70b", 0.7});
        CHECK(s[3] == Selection{"p50", 0.5});
    }
    SUBCASE("threshold 1.0 keeps exactly proba 1") {
        auto s = stage1_select(model, m, 1.0);
        REQUIRE(s.size() == 1);
        CHECK(s[0].candidate_id == "one");
    }
    SUBCASE("threshold 0 keeps everything") { CHECK(stage1_select(model, m, 0.0).size() == m.size()); }
    SUBCASE("band is half-open") {
        auto s = stage1_select(model, m, 0.5, Band{0.2, 0.7});
        std::set<std::string> ids;
        for (const auto& x : s) ids.insert(x.candidate_id);
        CHECK(ids == std::set<std::string>{"p20", "p50"});
    }
    SUBCASE("errors") {
        auto renamed = m;
        renamed.feature_names[4] = "threshold_flag";
        CHECK_THROWS_AS(stage1_select(model, renamed, 0.5), ValidationError);
        CHECK_THROWS_AS(stage1_select(model, m, 1.5), ValidationError);
        CHECK_THROWS_AS(stage1_select(model, m, 0.5, Band{0.5, 0.5}), ValidationError);
    }
}

TEST_CASE("stage1_select band and threshold agree with a direct filter") {
    Rng rng(6);
    auto d = imad::testing::noise_rows(rng, 80, 0.5);
    auto model = forest::train_forest(d.X, d.y, {.n_trees = 15, .seed = 2});
    features::FeatureMatrix m;
    m.feature_names = features::default_feature_names();
    for (std::size_t i = 0; i < d.X.size(); ++i) {
        m.candidate_ids.push_back("c" + std::to_string(i));
        m.rows.push_back(d.X[i]);
    }
    for (double t : {0.0, 0.2, 0.35, 0.5, 0.8, 1.0}) {
        auto above = stage1_select(model, m, t);
        std::vector<Selection> below;
        if (t > 0) below = stage1_select(model, m, 0.5, Band{0.0, t});
        CHECK(above.size() + below.size() == m.size());
        std::set<std::string> all;
        for (const auto& s : above) {
            all.insert(s.candidate_id);
            CHECK(s.proba >= t);
        }
        for (const auto& s : below) {
            all.insert(s.candidate_id);
            CHECK(s.proba < t);
        }
        CHECK(all.size() == m.size());
    }
    auto band = stage1_select(model, m, 0.5, Band{0.2, 0.5});
    std::set<std::string> oracle;
    for (std::size_t i = 0; i < m.size(); ++i) {
        const double p = forest::predict_proba(model, m.rows[i])[1];
        if (p >= 0.2 && p < 0.5) oracle.insert(m.candidate_ids[i]);
    }
    std::set<std::string> got;
    for (const auto& s : band) got.insert(s.candidate_id);
    CHECK(got == oracle);

    imad::testing::TempDir dir;
    write_selection(dir / "selected.jsonl", band);
    CHECK(read_selection(dir / "selected.jsonl") == band);
}

TEST_CASE("consensus") {
    CHECK(consensus(std::vector{four("c", "r1", "perfect_match"), four("c", "r2", "perfect_match"),
                                four("c", "r3", "partial_match")})
              .label == "perfect_match");
    CHECK(consensus(std::vector{four("c", "r1", "perfect_match"), four("c", "r2", "no_match"),
                                four("c", "r3", "undefined")})
              .label == "undefined");
    CHECK(consensus(std::vector{four("c", "r1", "no_match"), four("c", "r2", "perfect_match")}).label == "undefined");
    CHECK(consensus(std::vector{four("c", "r1", "partial_match")}).label == "partial_match");
    auto c = consensus(std::vector{four("c", "r1", "no_match"), four("c", "r2", "no_match")});
    CHECK(c.n_raters == 2);
    CHECK(c.votes.at("no_match") == 2);
    CHECK(c.votes.at("perfect_match") == 0);
    CHECK_THROWS_AS(consensus(std::vector<LabelRecord>{}), ValidationError);
    CHECK_THROWS_AS(consensus(std::vector{four("c", "r1", "no_match"), four("d", "r2", "no_match")}), ValidationError);
    LabelRecord stage1{"c", "r", "replaceable", Taxonomy::stage1_binary, ""};
    CHECK_THROWS_AS(consensus(std::vector{stage1}), ValidationError);
}

TEST_CASE("consensus_all equals a recount of a random label log") {
    const std::vector<std::string> names{"perfect_match", "partial_match", "undefined", "no_match"};
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        std::vector<LabelRecord> log;
        for (int c = 0; c < 30; ++c) {
            const auto raters = 1 + rng.below(5);
            for (std::uint64_t r = 0; r < raters; ++r)
                log.push_back(four("c" + std::to_string(c), "r" + std::to_string(r), names[rng.below(4)]));
        }
        log.push_back({"c0", "rx", "replaceable", Taxonomy::stage1_binary, ""});
        rng.shuffle(std::span<LabelRecord>(log));
        auto all = consensus_all(log);
        REQUIRE(all.size() == 30);
        CHECK(std::is_sorted(all.begin(), all.end(),
                             [](auto& a, auto& b) { return a.candidate_id < b.candidate_id; }));
        for (const auto& c : all) {
            std::map<std::string, std::size_t> count;
            std::size_t total = 0;
            for (const auto& r : log)
                if (r.candidate_id == c.candidate_id && r.taxonomy == Taxonomy::stage2_four_class) {
                    ++count[r.label];
                    ++total;
                }
            std::string expected = "undefined";
            for (const auto& [label, n] : count)
                if (n * 2 > total) expected = label;
            CHECK(c.label == expected);
            CHECK(c.n_raters == total);
        }
        imad::testing::TempDir dir;
        write_consensus(dir / "consensus.jsonl", all);
        CHECK(read_consensus(dir / "consensus.jsonl") == all);
    }
}

TEST_CASE("read_consensus rejects inconsistent rows") {
    imad::testing::TempDir dir;
    std::ofstream(dir / "c.jsonl")
        << R"({"candidate_id":"c","label":"perfect_match","n_raters":3,"votes":{"perfect_match":1,"partial_match":1,"undefined":0,"no_match":1}})"
        << '\n';
    CHECK_THROWS_WITH_AS(read_consensus(dir / "c.jsonl"), doctest::Contains("does not follow"), ValidationError);
}

TEST_CASE("training_set uses strict majority of stage-one labels") {
    auto m = matrix_of({{"a", {1, 0, 0, 0, 0}}, {"b", {2, 0, 0, 0, 0}}, {"c", {3, 0, 0, 0, 0}}, {"d", {4, 0, 0, 0, 0}}});
    auto s1 = [](std::string c, std::string r, std::string l) {
        return LabelRecord{std::move(c), std::move(r), std::move(l), Taxonomy::stage1_binary, ""};
    };
    std::vector<LabelRecord> log{s1("c", "r1", "replaceable"), s1("c", "r2", "replaceable"),
                                 s1("c", "r3", "not_replaceable"), s1("a", "r1", "replaceable"),
                                 s1("a", "r2", "not_replaceable"), s1("d", "r1", "not_replaceable"),
                                 four("b", "r1", "perfect_match")};
    auto t = training_set(m, log);
    CHECK(t.candidate_ids == std::vector<std::string>{"a", "c", "d"});
    CHECK(t.y == std::vector<forest::Label>{0, 1, 0});
    CHECK(t.X[1][0] == 3.0);
    log.push_back(s1("zzz", "r1", "replaceable"));
    CHECK_THROWS_WITH_AS(training_set(m, log), doctest::Contains("zzz"), ValidationError);
}

TEST_CASE("assemble_dataset") {
    std::vector<corpus::Dialogue> dialogues{{"d1", corpus::Source::parse("photochat"), {}},
                                            {"d2", corpus::Source::parse("daily_dialog"), {}}};
    std::vector<corpus::Candidate> cands;
    std::vector<matcher::MatchResult> matches;
    std::vector<Selection> probas;
    std::vector<ConsensusLabel> labels;
    const std::vector<std::string> plan{"perfect_match", "no_match", "partial_match", "perfect_match", "no_match",
                                        "no_match",      "partial_match", "perfect_match", "no_match"};
    for (std::size_t i = 0; i < plan.size(); ++i) {
        const auto id = "c" + std::to_string(i);
        cands.push_back(candidate(id, i % 2 ? "d1" : "d2", "look at this dog number " + std::to_string(i)));
        matches.push_back({id, 5, {{"img" + std::to_string(i), -1.5}}, "img" + std::to_string(i), -1.5});
        probas.push_back({id, 0.9});
        ConsensusLabel c;
        c.candidate_id = id;
        c.label = plan[i];
        c.n_raters = 3;
        labels.push_back(c);
    }
    // A candidate without a label must not appear even though it has a match.
    cands.push_back(candidate("unlabeled", "d1", "unused"));
    matches.push_back({"unlabeled", 5, {{"imgx", -1.0}}, "imgx", -1.0});

    SUBCASE("three perfect and two partial out of nine") {
        auto r = assemble_dataset(cands, dialogues, matches, labels, probas);
        REQUIRE(r.samples.size() == 5);
        CHECK(r.samples[0].candidate_id == "c0");
        CHECK(r.samples[0].source == "daily_dialog");
        CHECK(r.samples[0].image_id == "img0");
        CHECK(r.samples[1].candidate_id == "c2");
        CHECK(r.samples[1].label == "partial_match");
        for (const auto& s : r.samples) CHECK((s.label == "perfect_match" || s.label == "partial_match"));
        REQUIRE(r.stats);
        CHECK(r.stats->total_dialogues == 5);
        imad::testing::TempDir dir;
        write_dataset(dir / "imad.jsonl", r.samples);
        CHECK(read_dataset(dir / "imad.jsonl") == r.samples);
    }
    SUBCASE("all no_match gives an empty dataset and no stats") {
        for (auto& l : labels) l.label = "no_match";
        auto r = assemble_dataset(cands, dialogues, matches, labels, probas);
        CHECK(r.samples.empty());
        CHECK(!r.stats);
    }
    SUBCASE("labeled candidate without a match") {
        matches.erase(matches.begin() + 4);
        CHECK_THROWS_WITH_AS(assemble_dataset(cands, dialogues, matches, labels, probas), doctest::Contains("c4"),
                             ValidationError);
    }
    SUBCASE("labeled candidate without a proba") {
        probas.erase(probas.begin() + 7);
        CHECK_THROWS_WITH_AS(assemble_dataset(cands, dialogues, matches, labels, probas), doctest::Contains("c7"),
                             ValidationError);
    }
}

TEST_CASE("labels records") {
    CHECK(labels::legal_labels(Taxonomy::stage2_four_class).size() == 4);
    CHECK(labels::is_legal(Taxonomy::stage1_binary, "replaceable"));
    CHECK(!labels::is_legal(Taxonomy::stage1_binary, "perfect_match"));
    CHECK_THROWS_AS(labels::parse_taxonomy("stage3"), ValidationError);
    imad::testing::TempDir dir;
    std::vector<LabelRecord> records{four("a", "r1", "no_match"), four("a", "r2", "undefined")};
    records[0].ts = "2026-01-01T00:00:00Z";
    labels::write_labels(dir / "l.jsonl", records);
    CHECK(labels::read_labels(dir / "l.jsonl") == records);
    labels::write_labels(dir / "dup.jsonl", {records[0], records[0]});
    CHECK_THROWS_WITH_AS(labels::read_labels(dir / "dup.jsonl"), doctest::Contains("line 2"), ValidationError);
    std::ofstream(dir / "bad.jsonl") << R"({"candidate_id":"a","rater_id":"r","label":"yes","taxonomy":"stage1_binary"})"
                                     << '\n';
    CHECK_THROWS_AS(labels::read_labels(dir / "bad.jsonl"), ValidationError);
}

TEST_CASE("RunConfig from JSON and TOML") {
    imad::testing::TempDir dir;
    std::ofstream(dir / "c.json") << R"({"seed": 7, "out_dir": "run",
        "paths": {"image_embeddings": "img.embjsonl"},
        "features": {"tau": 0.25},
        "forest": {"n_trees": 20, "max_depth": 4},
        "select": {"decision_threshold": 0.6, "band": [0.2, 0.5]},
        "match": {"n": 5, "sweep_ns": [1, 5]}})";
    std::ofstream(dir / "c.toml") << "seed = 7\nout_dir = \"run\"\n[paths]\nimage_embeddings = \"img.embjsonl\"\n"
                                     "[features]\ntau = 0.25\n[forest]\nn_trees = 20\nmax_depth = 4\n"
                                     "[select]\ndecision_threshold = 0.6\nband = [0.2, 0.5]\n"
                                     "[match]\nn = 5\nsweep_ns = [1, 5]\n";
    const auto a = load_config(dir / "c.json");
    const auto b = load_config(dir / "c.toml");
    CHECK(to_json(a) == to_json(b));
    CHECK(a.require_seed() == 7);
    CHECK(a.tau == 0.25);
    CHECK(a.forest.max_depth == 4);
    CHECK(a.band->hi == 0.5);
    CHECK(a.sweep_ns == std::vector<std::size_t>{1, 5});
    CHECK(a.path("image_embeddings") == "img.embjsonl");
    CHECK(a.path("features") == std::filesystem::path("run") / "features.jsonl");
    CHECK_THROWS_AS(a.path("vqa_scores"), ValidationError);
    CHECK(to_json(config_from_json(to_json(a))) == to_json(a));

    RunConfig empty;
    CHECK_THROWS_WITH_AS(empty.require_seed(), doctest::Contains("seed"), ValidationError);

    CHECK_THROWS_WITH_AS(config_from_json(Json{{"sede", 1}}), doctest::Contains("sede"), ValidationError);
    CHECK_THROWS_AS(config_from_json(Json{{"features", {{"tau", 2.0}}}}), ValidationError);
    CHECK_THROWS_AS(config_from_json(Json{{"select", {{"band", {0.5, 0.2}}}}}), ValidationError);
    CHECK_THROWS_AS(config_from_json(Json{{"match", {{"sweep_ns", {1, 0}}}}}), ValidationError);
    CHECK_THROWS_AS(config_from_json(Json{{"paths", {{"nonsense", "x"}}}}), ValidationError);
    std::ofstream(dir / "bad.toml") << "seed = \n";
    CHECK_THROWS_WITH_AS(load_config(dir / "bad.toml"), doctest::Contains("line 1"), ValidationError);
    CHECK_THROWS_AS(load_config(dir / "missing.json"), IoError);
}
