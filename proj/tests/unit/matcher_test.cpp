// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "doctest.h"
#include "imad/error.hpp"
#include "imad/matcher.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace imad;
using namespace imad::matcher;
using vecstore::EmbeddingTable;
using vecstore::TableKind;

namespace {

VqaScoreRecord record(std::string cand, std::string image, std::vector<double> lps) {
    return {std::move(cand), std::move(image), std::string(kVqaQuestion), {}, std::move(lps), "ws"};
}

std::vector<float> at_angle(double degrees) {
    const double r = degrees * M_PI / 180.0;
    return {static_cast<float>(std::cos(r)), static_cast<float>(std::sin(r))};
}

// Image "a" is nearest the utterance; "b" is third by cosine but has the
// best confidence among the five nearest; "f" (sixth) beats everything.
struct Planted {
    EmbeddingTable utterances{TableKind::utterance, 2};
    EmbeddingTable images{TableKind::image, 2};
    VqaIndex records;

    Planted() {
        utterances.add("u", at_angle(0));
        const std::vector<std::pair<std::string, double>> conf{{"a", -5}, {"c", -4}, {"b", -1}, {"d", -3},
                                                               {"e", -2}, {"f", -0.5}, {"g", -9}};
        double angle = 0;
        for (const auto& [id, c] : conf) {
            images.add(id, at_angle(angle));
            angle += 10;
            records.add(record("u", id, {c / 2, c / 2}));
        }
    }
};

struct RandomWorld {
    std::vector<std::string> ids;
    EmbeddingTable utterances{TableKind::utterance, 4};
    EmbeddingTable images{TableKind::image, 4};
    VqaIndex records;
    std::map<std::pair<std::string, std::string>, double> conf;
};

RandomWorld random_world(std::uint64_t seed, std::size_t n_cands, std::size_t n_images) {
    Rng rng(seed);
    RandomWorld w;
    for (std::size_t i = 0; i < n_images; ++i) w.images.add("img" + std::to_string(i), imad::testing::random_vector(rng, 4));
    for (std::size_t c = 0; c < n_cands; ++c) {
        const auto id = "c" + std::to_string(c);
        w.ids.push_back(id);
        w.utterances.add(id, imad::testing::random_vector(rng, 4));
        for (std::size_t i = 0; i < n_images; ++i) {
            // Coarse values so ties happen.
            std::vector<double> lps{-0.5 * double(rng.below(6)), -0.5 * double(rng.below(6))};
            w.conf[{id, w.images.id(i)}] = lps[0] + lps[1];
            w.records.add(record(id, w.images.id(i), lps));
        }
    }
    return w;
}

// Exhaustive: rank by cosine (desc, id asc), keep N, pick the highest
// confidence, earliest rank on ties.
std::pair<std::string, double> oracle_select(const RandomWorld& w, const std::string& cand, std::size_t n) {
    std::vector<std::pair<double, std::string>> ranked;
    for (std::size_t i = 0; i < w.images.size(); ++i)
        ranked.emplace_back(vecstore::cosine(w.utterances.at(cand), w.images.vector(i)), w.images.id(i));
    std::sort(ranked.begin(), ranked.end(),
              [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    ranked.resize(std::min(n, ranked.size()));
    std::string best;
    double best_conf = -INFINITY;
    for (const auto& [cos, id] : ranked) {
        const double c = w.conf.at({cand, id});
        if (c > best_conf) best = id, best_conf = c;
    }
    return {best, best_conf};
}

}  // namespace

TEST_CASE("confidence") {
    CHECK(confidence(std::vector<double>{0.0}) == 0.0);
    CHECK(confidence(std::vector<double>{-0.5, -1.0, -0.25}) == -1.75);
    CHECK_THROWS_AS(confidence(std::vector<double>{}), ValidationError);
    CHECK_THROWS_AS(confidence(std::vector<double>{-1, NAN}), ValidationError);

    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        std::vector<double> lps(1 + rng.below(40));
        for (auto& x : lps) x = -5.0 * rng.uniform();
        const double left = std::accumulate(lps.begin(), lps.end(), 0.0);
        const double right = std::accumulate(lps.rbegin(), lps.rend(), 0.0);
        const double c = confidence(lps);
        CHECK(std::abs(c - left) <= 1e-12);
        CHECK(std::abs(c - right) <= 1e-12);
        auto shuffled = lps;
        rng.shuffle(std::span<double>(shuffled));
        CHECK(std::abs(confidence(shuffled) - c) <= 1e-12);
        lps.push_back(-0.01 - rng.uniform());
        CHECK(confidence(lps) < c);
    }
}

TEST_CASE("VqaIndex validation") {
    VqaIndex idx;
    idx.add(record("c", "i", {-1}));
    CHECK_THROWS_AS(idx.add(record("c", "i", {-2})), ValidationError);
    CHECK_THROWS_AS(idx.add(record("c", "j", {})), ValidationError);
    CHECK_THROWS_AS(idx.add(record("c", "k", {0.1})), ValidationError);
    auto r = record("c", "m", {-1, -2});
    r.tokens = {"one"};
    CHECK_THROWS_AS(idx.add(r), ValidationError);
    CHECK(idx.size() == 1);

    imad::testing::TempDir dir;
    std::ofstream(dir / "v.jsonl") << R"({"candidate_id":"c","image_id":"i","token_logprobs":[-1]})" << '\n'
                                   << R"({"candidate_id":"c","image_id":"i","token_logprobs":[-1]})" << '\n';
    CHECK_THROWS_WITH_AS(load_vqa_scores(dir / "v.jsonl"), doctest::Contains("line 2"), ValidationError);

    std::vector<VqaScoreRecord> records{record("c", "i", {-0.25, -1e-9}), record("d", "i", {-3})};
    records[0].tokens = {"a", "b"};
    write_vqa_scores(dir / "w.jsonl", records);
    auto back = load_vqa_scores(dir / "w.jsonl");
    REQUIRE(back.find("c", "i"));
    CHECK(back.find("c", "i")->token_logprobs == records[0].token_logprobs);
    CHECK(back.find("c", "i")->tokens == records[0].tokens);
    CHECK(back.find("c", "i")->question == kVqaQuestion);
}

TEST_CASE("rerank") {
    VqaIndex idx;
    idx.add(record("c", "x", {-2.0}));
    idx.add(record("c", "y", {-1.0}));
    idx.add(record("c", "z", {-1.0}));

    SUBCASE("N = 1 keeps the single retrieval") {
        vecstore::TopNResult top{"c", 1, {{"x", 0.9}}};
        auto r = rerank("c", top, idx);
        CHECK(r.selected_image == "x");
        CHECK(r.selected_confidence == -2.0);
    }
    SUBCASE("argmax with retrieval-order tie-break") {
        vecstore::TopNResult top{"c", 3, {{"x", 0.9}, {"z", 0.8}, {"y", 0.7}}};
        auto r = rerank("c", top, idx);
        REQUIRE(r.ranked.size() == 3);
        CHECK(r.ranked[0] == RankedImage{"z", -1.0});
        CHECK(r.ranked[1] == RankedImage{"y", -1.0});
        CHECK(r.ranked[2] == RankedImage{"x", -2.0});
        CHECK(r.selected_image == "z");
    }
    SUBCASE("missing record names the pair") {
        vecstore::TopNResult top{"c", 2, {{"x", 0.9}, {"w", 0.8}}};
        CHECK_THROWS_WITH_AS(rerank("c", top, idx), doctest::Contains("(c, w)"), ValidationError);
    }
    SUBCASE("random confidences over N = 10 agree with exhaustive argmax, 100 seeds") {
        for (std::uint64_t seed = 0; seed < 100; ++seed) {
            Rng rng(seed);
            VqaIndex records;
            vecstore::TopNResult top{"c", 10, {}};
            double best = -INFINITY;
            std::string best_id;
            for (int i = 0; i < 10; ++i) {
                const auto id = "i" + std::to_string(i);
                top.ranked.push_back({id, 1.0 - 0.01 * i});
                const double lp = -double(rng.below(8));
                records.add(record("c", id, {lp}));
                if (lp > best) best = lp, best_id = id;
            }
            auto r = rerank("c", top, records);
            CHECK(r.selected_image == best_id);
            CHECK(r.selected_confidence == best);
            std::set<std::string> in, out;
            for (const auto& s : top.ranked) in.insert(s.id);
            for (const auto& s : r.ranked) out.insert(s.image_id);
            CHECK(in == out);
            CHECK(std::is_sorted(r.ranked.begin(), r.ranked.end(),
                                 [](auto& a, auto& b) { return a.confidence > b.confidence; }));
        }
    }
}

TEST_CASE("match_all") {
    SUBCASE("one candidate, one image") {
        EmbeddingTable u(TableKind::utterance, 2), im(TableKind::image, 2);
        u.add("c", std::vector<float>{1, 0});
        im.add("only", std::vector<float>{0, 1});
        VqaIndex idx;
        idx.add(record("c", "only", {-7}));
        auto r = match_all({"c"}, u, im, idx, 10);
        REQUIRE(r.size() == 1);
        CHECK(r[0].selected_image == "only");
        CHECK(r[0].n_used == 10);
    }
    SUBCASE("planted fixture: rank-three image wins at N = 5, nearest wins at N = 1") {
        Planted p;
        CHECK(match_all({"u"}, p.utterances, p.images, p.records, 5)[0].selected_image == "b");
        CHECK(match_all({"u"}, p.utterances, p.images, p.records, 1)[0].selected_image == "a");
        CHECK(match_all({"u"}, p.utterances, p.images, p.records, 10)[0].selected_image == "f");
        const auto top = vecstore::top_n(p.utterances.at("u"), p.images, 5);
        CHECK(top.ranked[2].id == "b");
    }
    SUBCASE("errors carry candidate context") {
        Planted p;
        CHECK_THROWS_WITH_AS(match_all({"ghost"}, p.utterances, p.images, p.records, 3), doctest::Contains("ghost"),
                             ValidationError);
        VqaIndex sparse;
        sparse.add(record("u", "a", {-1}));
        CHECK_THROWS_WITH_AS(match_all({"u"}, p.utterances, p.images, sparse, 2), doctest::Contains("(u, c)"),
                             ValidationError);
    }
    SUBCASE("deterministic bytes and matches file round-trip") {
        auto w = random_world(3, 20, 12);
        auto a = match_all(w.ids, w.utterances, w.images, w.records, 5);
        auto b = match_all(w.ids, w.utterances, w.images, w.records, 5);
        imad::testing::TempDir dir;
        write_matches(dir / "a.jsonl", a);
        write_matches(dir / "b.jsonl", b);
        CHECK(read_file(dir / "a.jsonl") == read_file(dir / "b.jsonl"));
        CHECK(read_matches(dir / "a.jsonl") == a);
        write_match_meta(dir / "matches.meta.json", 5);
        auto meta = Json::parse(read_file(dir / "matches.meta.json"));
        CHECK(meta["question"] == "Which phrase can describe this image?");
        CHECK(meta["n"] == 5);
    }
}

TEST_CASE("selected confidence never decreases as N grows") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto w = random_world(100 + seed, 8, 20);
        std::vector<std::size_t> ns(20);
        std::iota(ns.begin(), ns.end(), 1);
        auto sweep = n_sweep(w.ids, w.utterances, w.images, w.records, ns);
        for (std::size_t c = 0; c < w.ids.size(); ++c) {
            for (std::size_t k = 1; k < ns.size(); ++k)
                CHECK(sweep.results[k][c].selected_confidence >= sweep.results[k - 1][c].selected_confidence);
            for (std::size_t k = 0; k < ns.size(); ++k) {
                const auto [id, conf] = oracle_select(w, w.ids[c], ns[k]);
                CHECK(sweep.results[k][c].selected_image == id);
                CHECK(sweep.results[k][c].selected_confidence == conf);
            }
        }
    }
    Planted p;
    auto sweep = n_sweep({"u"}, p.utterances, p.images, p.records, kDefaultSweepGrid);
    for (std::size_t k = 1; k < sweep.rows.size(); ++k)
        CHECK(sweep.results[k][0].selected_confidence >= sweep.results[k - 1][0].selected_confidence);
}

TEST_CASE("n_sweep counts judgments on the default grid") {
    auto w = random_world(77, 25, 60);
    Judgments judgments;
    Rng rng(5);
    for (const auto& [key, c] : w.conf) {
        const auto pick = rng.below(4);
        if (pick < 3) judgments[key] = static_cast<Judgment>(pick);
    }
    auto sweep = n_sweep(w.ids, w.utterances, w.images, w.records, kDefaultSweepGrid, &judgments);
    REQUIRE(sweep.rows.size() == 5);
    for (std::size_t k = 0; k < 5; ++k) {
        const auto& row = sweep.rows[k];
        CHECK(row.n == kDefaultSweepGrid[k]);
        std::size_t yes = 0, no = 0, unk = 0, none = 0;
        double conf_sum = 0;
        for (const auto& id : w.ids) {
            const auto [img, conf] = oracle_select(w, id, row.n);
            conf_sum += conf;
            auto it = judgments.find({id, img});
            if (it == judgments.end()) ++none;
            else if (it->second == Judgment::image_matches) ++yes;
            else if (it->second == Judgment::image_does_not_match) ++no;
            else ++unk;
        }
        CHECK(row.image_matches == yes);
        CHECK(row.no_match == no);
        CHECK(row.unknown == unk);
        CHECK(row.unjudged == none);
        CHECK(row.candidates == 25);
        CHECK(row.mean_confidence == doctest::Approx(conf_sum / 25));
    }
    const auto text = format_sweep(sweep);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
    CHECK(text.find("Image matches") != std::string::npos);
    CHECK(to_json(sweep)["rows"].size() == 5);
    CHECK_THROWS_AS(n_sweep(w.ids, w.utterances, w.images, w.records, {}), ValidationError);
}

TEST_CASE("judgments file") {
    imad::testing::TempDir dir;
    std::ofstream(dir / "j.jsonl") << R"({"candidate_id":"c","image_id":"i","label":"image_matches"})" << '\n'
                                   << R"({"candidate_id":"c","image_id":"k","label":"unknown"})" << '\n';
    auto j = load_judgments(dir / "j.jsonl");
    CHECK(j.size() == 2);
    CHECK(j.at({"c", "k"}) == Judgment::unknown);
    std::ofstream(dir / "bad.jsonl") << R"({"candidate_id":"c","image_id":"i","label":"perfect_match"})" << '\n';
    CHECK_THROWS_WITH_AS(load_judgments(dir / "bad.jsonl"), doctest::Contains("line 1"), ValidationError);
}
