// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/labels.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <tuple>

#include "imad/error.hpp"

namespace imad::labels {

namespace {

constexpr std::array<std::string_view, 2> kStage1{"replaceable", "not_replaceable"};
constexpr std::array<std::string_view, 3> kThreeClass{"image_matches", "image_does_not_match", "unknown"};
constexpr std::array<std::string_view, 4> kFourClass{"perfect_match", "partial_match", "undefined", "no_match"};

}  // namespace

Taxonomy parse_taxonomy(std::string_view name) {
    if (name == "stage1_binary") return Taxonomy::stage1_binary;
    if (name == "stage2_three_class") return Taxonomy::stage2_three_class;
    if (name == "stage2_four_class") return Taxonomy::stage2_four_class;
    throw ValidationError("unknown taxonomy \"" + std::string(name) + "\"");
}

std::string_view to_string(Taxonomy taxonomy) {
    switch (taxonomy) {
        case Taxonomy::stage1_binary: return "stage1_binary";
        case Taxonomy::stage2_three_class: return "stage2_three_class";
        case Taxonomy::stage2_four_class: return "stage2_four_class";
    }
    return "stage2_four_class";
}

std::span<const std::string_view> legal_labels(Taxonomy taxonomy) {
    switch (taxonomy) {
        case Taxonomy::stage1_binary: return kStage1;
        case Taxonomy::stage2_three_class: return kThreeClass;
        case Taxonomy::stage2_four_class: return kFourClass;
    }
    return {};
}

bool is_legal(Taxonomy taxonomy, std::string_view label) {
    const auto legal = legal_labels(taxonomy);
    return std::find(legal.begin(), legal.end(), label) != legal.end();
}

Json to_json(const LabelRecord& r) {
    return Json{{"candidate_id", r.candidate_id},
                {"rater_id", r.rater_id},
                {"label", r.label},
                {"taxonomy", to_string(r.taxonomy)},
                {"ts", r.ts}};
}

LabelRecord label_from_json(const Json& j, std::size_t line) {
    if (!j.is_object()) throw ValidationError("label record is not an object", line);
    LabelRecord r;
    r.candidate_id = require_string(j, "candidate_id", line);
    r.rater_id = require_string(j, "rater_id", line);
    r.label = require_string(j, "label", line);
    try {
        r.taxonomy = parse_taxonomy(require_string(j, "taxonomy", line));
    } catch (const ValidationError& e) {
        throw ValidationError(e.what(), line);
    }
    if (j.contains("ts")) r.ts = require_string(j, "ts", line);
    if (r.candidate_id.empty() || r.rater_id.empty()) throw ValidationError("empty candidate_id or rater_id", line);
    if (!is_legal(r.taxonomy, r.label))
        throw ValidationError("label \"" + r.label + "\" is not legal for " + std::string(to_string(r.taxonomy)), line);
    return r;
}

std::vector<LabelRecord> read_labels(const std::filesystem::path& path) {
    std::vector<LabelRecord> out;
    std::set<std::tuple<std::string, std::string, Taxonomy>> seen;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        auto r = label_from_json(j, line);
        if (!seen.emplace(r.candidate_id, r.rater_id, r.taxonomy).second)
            throw ValidationError("duplicate label from " + r.rater_id + " for " + r.candidate_id, line);
        out.push_back(std::move(r));
    });
    return out;
}

void write_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& records) {
    std::vector<Json> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(to_json(r));
    write_jsonl(path, out);
}

void sort_for_export(std::vector<LabelRecord>& records) {
    std::sort(records.begin(), records.end(), [](const LabelRecord& a, const LabelRecord& b) {
        return std::tie(a.candidate_id, a.rater_id, a.taxonomy) < std::tie(b.candidate_id, b.rater_id, b.taxonomy);
    });
}

}  // namespace imad::labels
