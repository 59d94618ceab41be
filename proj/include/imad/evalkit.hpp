// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imad/jsonl.hpp"

namespace imad::evalkit {

inline constexpr int kMaxBleuOrder = 4;

enum class Smoothing {
    none,
    /// Lin & Och add-one: orders n >= 2 use (matches + 1) / (total + 1).
    /// Unigram precision stays unsmoothed, so a hypothesis sharing no token
    /// with its reference still scores 0.
    add_one,
};

/// Clipped n-gram match counts and lengths for one or more
/// (hypothesis, reference) pairs. Counts pool by addition.
struct NgramStats {
    std::array<std::int64_t, kMaxBleuOrder> matches{};
    std::array<std::int64_t, kMaxBleuOrder> totals{};
    std::int64_t hyp_len = 0;
    std::int64_t ref_len = 0;

    NgramStats& operator+=(const NgramStats& other);
};

NgramStats ngram_stats(std::span<const std::string> hypothesis, std::span<const std::string> reference);

/// BLEU-k on the 0-100 scale: brevity penalty times the geometric mean of
/// the modified precisions of orders 1..k.
double bleu_from_stats(const NgramStats& stats, int k, Smoothing smoothing);

/// Sentence-level BLEU-k as a fraction in [0, 1].
double sentence_bleu(std::span<const std::string> hypothesis, std::span<const std::string> reference, int k,
                     Smoothing smoothing);

struct GenerationRecord {
    std::string sample_id;
    std::string source;
    std::vector<std::string> hypothesis;
    std::vector<std::string> reference;
    std::optional<std::vector<double>> token_logprobs;
};

/// Reads generations.jsonl, tokenizing hypothesis and reference text.
/// Log-probs, when present, must be finite, <= 0 and one per reference token.
std::vector<GenerationRecord> load_generations(const std::filesystem::path& path);

/// Corpus BLEU-max_n (0-100) with n-gram statistics pooled over all records.
double corpus_bleu(std::span<const GenerationRecord> records, int max_n, Smoothing smoothing);

/// exp of the mean negative log-likelihood over every token of every record
/// that carries log-probs.
double perplexity(std::span<const GenerationRecord> records);

/// Per-item category counts; every row must sum to the same rater count.
struct RatingMatrix {
    std::vector<std::string> items;
    std::vector<std::string> categories;
    std::vector<std::vector<std::int64_t>> counts;
};

/// Fleiss' kappa. Throws ValidationError for fewer than two items, unequal
/// or < 2 raters per item, or when every rating falls in one category.
double fleiss_kappa(const RatingMatrix& matrix);

struct StatsSample {
    std::vector<std::string> context;  // turn texts
    std::string utterance;
};

struct DatasetStats {
    std::size_t total_dialogues = 0;
    double avg_turns_per_context = 0.0;
    double avg_tokens_per_context = 0.0;
    double avg_tokens_per_utterance = 0.0;
    std::size_t context_vocabulary = 0;
    std::size_t utterance_vocabulary = 0;
};

DatasetStats dataset_stats(std::span<const StatsSample> samples);
Json to_json(const DatasetStats& stats);
std::string format_stats(const DatasetStats& stats);

struct BootstrapSettings {
    std::size_t resamples = 1000;
    std::uint64_t seed = 0;
};

struct Spread {
    double mean = 0.0;
    double std = 0.0;
};

struct GroupMetrics {
    std::string group;
    std::size_t samples = 0;
    std::array<double, kMaxBleuOrder> bleu{};
    std::optional<double> perplexity;
    std::optional<std::array<Spread, kMaxBleuOrder>> bleu_bootstrap;
    std::optional<Spread> perplexity_bootstrap;
};

struct EvalReport {
    std::vector<GroupMetrics> groups;  // sorted by group name
    GroupMetrics overall;
    std::optional<BootstrapSettings> bootstrap;
};

struct GroupedEvalOptions {
    std::optional<BootstrapSettings> bootstrap;
    /// Restrict the per-group rows to these groups; empty means all. Naming
    /// a group with no records is an error.
    std::vector<std::string> groups;
};

/// Unsmoothed BLEU-1..4 (and perplexity when log-probs exist) per source
/// group and overall, optionally with bootstrap mean and standard deviation.
EvalReport grouped_eval(std::span<const GenerationRecord> records, const GroupedEvalOptions& options = {});

Json to_json(const EvalReport& report);
std::string format_report(const EvalReport& report);

}  // namespace imad::evalkit
