// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "imad/jsonl.hpp"

namespace imad::corpus {

enum class SourceKind {
    persona_chat,
    daily_dialog,
    empathetic_dialogues,
    commonsense_dialogues,
    mutual,
    dream,
    other,
};

/// Corpus a dialogue came from. Known corpora serialize to their snake_case
/// tag; anything else keeps its own name under SourceKind::other.
struct Source {
    SourceKind kind = SourceKind::other;
    std::string name;

    static Source parse(std::string_view tag);
    const std::string& tag() const { return name; }

    friend bool operator==(const Source&, const Source&) = default;
};

struct Turn {
    std::string speaker;
    std::string text;

    friend bool operator==(const Turn&, const Turn&) = default;
};

struct Dialogue {
    std::string dialogue_id;
    Source source;
    std::vector<Turn> turns;

    friend bool operator==(const Dialogue&, const Dialogue&) = default;
};

/// A (context, utterance) pair: turn `turn_index` of a dialogue together with
/// every turn before it.
struct Candidate {
    std::string candidate_id;
    std::string dialogue_id;
    std::size_t turn_index = 0;
    std::vector<Turn> context;
    std::string utterance;

    friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Input adapters understood by ingest_dialogues.
enum class Adapter {
    /// Canonical dialogues.jsonl records.
    canonical,
    /// One dialogue per line, turns terminated by "__eou__" (DailyDialog's
    /// raw text release). Speakers alternate A/B; ids are "<source>-<line>".
    eou_lines,
};

Adapter parse_adapter(std::string_view id);

/// Parses a dialogue stream. `source` fills in records that carry no source
/// of their own (and every eou_lines dialogue). Malformed records raise
/// ValidationError with the line number; an empty stream yields no dialogues.
std::vector<Dialogue> ingest_dialogues(std::istream& raw, const Source& source, Adapter adapter);
std::vector<Dialogue> read_dialogues(const std::filesystem::path& path);
void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues);

Json to_json(const Dialogue& dialogue);
Json to_json(const Candidate& candidate);
Json to_json(const Turn& turn);
/// Parses a JSON array of {"speaker", "text"} turns; empty texts are rejected.
std::vector<Turn> turns_from_json(const Json& j, std::size_t line = 0);

/// "<dialogue_id>#<turn_index>". Injective: the index is recovered by
/// splitting on the last '#'.
std::string make_candidate_id(std::string_view dialogue_id, std::size_t turn_index);

/// One candidate per turn whose index is >= min_context_turns, in dialogue
/// order then turn order.
std::vector<Candidate> extract_candidates(const std::vector<Dialogue>& dialogues,
                                          std::size_t min_context_turns = 1);

std::vector<Candidate> read_candidates(const std::filesystem::path& path);
void write_candidates(const std::filesystem::path& path, const std::vector<Candidate>& candidates);

/// Lowercases, isolates every punctuation code point as its own token and
/// splits on Unicode whitespace. Input is treated as UTF-8; invalid bytes are
/// kept verbatim inside word tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Uniform sample of n candidates without replacement, returned in corpus
/// order. Throws ValidationError when n exceeds the pool.
std::vector<Candidate> sample_for_labeling(const std::vector<Candidate>& candidates, std::size_t n,
                                           std::uint64_t seed);

}  // namespace imad::corpus
