// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imad/config.hpp"
#include "imad/corpus.hpp"
#include "imad/evalkit.hpp"
#include "imad/features.hpp"
#include "imad/forest.hpp"
#include "imad/labels.hpp"
#include "imad/matcher.hpp"

namespace imad::pipeline {

struct Selection {
    std::string candidate_id;
    double proba = 0.0;  // P(replaceable)

    friend bool operator==(const Selection&, const Selection&) = default;
};

/// Default mode keeps proba >= threshold; band mode keeps proba in
/// [lo, hi) and ignores the threshold. Sorted by proba descending, then id.
/// Throws ValidationError when the matrix feature names differ from the
/// model's or a bound is outside [0, 1].
std::vector<Selection> stage1_select(const forest::ForestModel& model, const features::FeatureMatrix& matrix,
                                     double threshold, std::optional<Band> band = std::nullopt);

void write_selection(const std::filesystem::path& path, const std::vector<Selection>& selection);
std::vector<Selection> read_selection(const std::filesystem::path& path);

/// Training rows for the forest: candidates with stage-one labels, in
/// feature-matrix order. A candidate is positive when a strict majority of
/// its raters said "replaceable".
struct TrainingSet {
    std::vector<std::string> candidate_ids;
    std::vector<forest::FeatureRow> X;
    std::vector<forest::Label> y;
};

TrainingSet training_set(const features::FeatureMatrix& matrix, std::span<const labels::LabelRecord> records);

struct ConsensusLabel {
    std::string candidate_id;
    std::string label;
    std::size_t n_raters = 0;
    /// One entry per four-class label, including zero counts.
    std::map<std::string, std::size_t> votes;

    friend bool operator==(const ConsensusLabel&, const ConsensusLabel&) = default;
};

/// Strict-majority vote over one candidate's four-class records; no strict
/// majority gives "undefined". Throws ValidationError on no records, mixed
/// candidates or a record from another taxonomy.
ConsensusLabel consensus(std::span<const labels::LabelRecord> records);

/// Groups four-class records by candidate (other taxonomies are skipped)
/// and returns one label per candidate, ordered by candidate_id.
std::vector<ConsensusLabel> consensus_all(std::span<const labels::LabelRecord> records);

void write_consensus(const std::filesystem::path& path, const std::vector<ConsensusLabel>& labels);
std::vector<ConsensusLabel> read_consensus(const std::filesystem::path& path);

struct FinalSample {
    std::string candidate_id;
    std::string dialogue_id;
    std::string source;
    std::vector<corpus::Turn> context;
    std::string image_id;
    std::string replaced_utterance;
    double stage1_proba = 0.0;
    double match_confidence = 0.0;
    std::string label;  // perfect_match or partial_match

    friend bool operator==(const FinalSample&, const FinalSample&) = default;
};

struct AssembleResult {
    std::vector<FinalSample> samples;
    /// Absent when no sample survived.
    std::optional<evalkit::DatasetStats> stats;
};

/// Keeps candidates whose consensus label is perfect_match or partial_match
/// and attaches their selected image. Output follows candidate order.
/// Throws ValidationError naming any labeled candidate that lacks a
/// candidate record, a dialogue, a match or a stage-one proba.
AssembleResult assemble_dataset(const std::vector<corpus::Candidate>& candidates,
                                const std::vector<corpus::Dialogue>& dialogues,
                                const std::vector<matcher::MatchResult>& matches,
                                const std::vector<ConsensusLabel>& consensus,
                                const std::vector<Selection>& stage1);

Json to_json(const FinalSample& sample);
FinalSample final_sample_from_json(const Json& j, std::size_t line = 0);
void write_dataset(const std::filesystem::path& path, const std::vector<FinalSample>& samples);
std::vector<FinalSample> read_dataset(const std::filesystem::path& path);

std::vector<evalkit::StatsSample> stats_samples(std::span<const FinalSample> samples);

}  // namespace imad::pipeline
