// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "imad/jsonl.hpp"
#include "imad/vecstore.hpp"

namespace imad::matcher {

/// Question posed to the VQA model for every (utterance, image) pair.
inline constexpr std::string_view kVqaQuestion = "Which phrase can describe this image?";
inline constexpr std::size_t kDefaultN = 10;

/// Sum of the token log-probabilities. Throws ValidationError when empty
/// or when any entry is not finite.
double confidence(std::span<const double> token_logprobs);

struct VqaScoreRecord {
    std::string candidate_id;
    std::string image_id;
    std::string question;
    std::vector<std::string> tokens;
    std::vector<double> token_logprobs;
    std::string tokenizer_id;
};

/// Immutable lookup of VQA records by (candidate_id, image_id).
class VqaIndex {
public:
    /// Validates and inserts; rejects duplicates, empty or positive
    /// log-probs, and token lists whose length differs from the log-probs.
    void add(VqaScoreRecord record);
    const VqaScoreRecord* find(std::string_view candidate_id, std::string_view image_id) const;
    std::size_t size() const { return records_.size(); }

private:
    std::map<std::pair<std::string, std::string>, VqaScoreRecord, std::less<>> records_;
};

VqaIndex load_vqa_scores(const std::filesystem::path& path);
void write_vqa_scores(const std::filesystem::path& path, const std::vector<VqaScoreRecord>& records);

struct RankedImage {
    std::string image_id;
    double confidence = 0.0;

    friend bool operator==(const RankedImage&, const RankedImage&) = default;
};

struct MatchResult {
    std::string candidate_id;
    std::size_t n_used = 0;
    std::vector<RankedImage> ranked;
    std::string selected_image;
    double selected_confidence = 0.0;

    friend bool operator==(const MatchResult&, const MatchResult&) = default;
};

/// Orders retrieved images by VQA confidence, descending. Equal confidences
/// keep retrieval order. Throws ValidationError naming the pair when a
/// retrieved image has no record.
MatchResult rerank(std::string_view candidate_id, const vecstore::TopNResult& retrieved, const VqaIndex& records);

/// For each candidate, top-N images by cosine against its utterance vector,
/// then rerank. Results follow the input order.
std::vector<MatchResult> match_all(const std::vector<std::string>& candidate_ids,
                                   const vecstore::EmbeddingTable& utterances, const vecstore::EmbeddingTable& images,
                                   const VqaIndex& records, std::size_t n = kDefaultN);

Json to_json(const MatchResult& result);
MatchResult match_from_json(const Json& j, std::size_t line = 0);
void write_matches(const std::filesystem::path& path, const std::vector<MatchResult>& results);
std::vector<MatchResult> read_matches(const std::filesystem::path& path);
/// Run metadata written beside matches.jsonl.
void write_match_meta(const std::filesystem::path& path, std::size_t n);

enum class Judgment { image_matches, image_does_not_match, unknown };

Judgment parse_judgment(std::string_view label);
std::string_view to_string(Judgment judgment);

/// (candidate_id, image_id) -> human judgment of that pairing.
using Judgments = std::map<std::pair<std::string, std::string>, Judgment, std::less<>>;

/// Reads {"candidate_id", "image_id", "label"} lines.
Judgments load_judgments(const std::filesystem::path& path);

struct SweepRow {
    std::size_t n = 0;
    std::size_t candidates = 0;
    double mean_confidence = 0.0;
    /// Counts of selected pairs by judgment; all zero without judgments.
    std::size_t image_matches = 0;
    std::size_t no_match = 0;
    std::size_t unknown = 0;
    std::size_t unjudged = 0;
};

struct SweepReport {
    bool judged = false;
    std::vector<SweepRow> rows;
    /// Per N, the match results the row was computed from.
    std::vector<std::vector<MatchResult>> results;
};

inline const std::vector<std::size_t> kDefaultSweepGrid{1, 5, 10, 15, 50};

SweepReport n_sweep(const std::vector<std::string>& candidate_ids, const vecstore::EmbeddingTable& utterances,
                    const vecstore::EmbeddingTable& images, const VqaIndex& records, const std::vector<std::size_t>& ns,
                    const Judgments* judgments = nullptr);

Json to_json(const SweepReport& report);
std::string format_sweep(const SweepReport& report);

}  // namespace imad::matcher
