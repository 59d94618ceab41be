// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "imad/jsonl.hpp"

namespace imad::labels {

enum class Taxonomy { stage1_binary, stage2_three_class, stage2_four_class };

Taxonomy parse_taxonomy(std::string_view name);
std::string_view to_string(Taxonomy taxonomy);

/// Legal labels in display order.
///   stage1_binary: replaceable, not_replaceable
///   stage2_three_class: image_matches, image_does_not_match, unknown
///   stage2_four_class: perfect_match, partial_match, undefined, no_match
std::span<const std::string_view> legal_labels(Taxonomy taxonomy);
bool is_legal(Taxonomy taxonomy, std::string_view label);

struct LabelRecord {
    std::string candidate_id;
    std::string rater_id;
    std::string label;
    Taxonomy taxonomy = Taxonomy::stage2_four_class;
    std::string ts;  // ISO 8601, UTC

    friend bool operator==(const LabelRecord&, const LabelRecord&) = default;
};

Json to_json(const LabelRecord& record);
/// Parses and checks one labels-file record (legal label, non-empty ids).
LabelRecord label_from_json(const Json& j, std::size_t line = 0);

/// Reads a labels file, rejecting repeated (candidate_id, rater_id, taxonomy).
std::vector<LabelRecord> read_labels(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, const std::vector<LabelRecord>& records);

/// Sorts by (candidate_id, rater_id), then taxonomy, for byte-stable dumps.
void sort_for_export(std::vector<LabelRecord>& records);

}  // namespace imad::labels
