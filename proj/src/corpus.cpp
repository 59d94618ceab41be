// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/corpus.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "imad/error.hpp"
#include "imad/rng.hpp"

namespace imad::corpus {

namespace {

constexpr std::array<std::pair<std::string_view, SourceKind>, 6> kKnownSources{{
    {"persona_chat", SourceKind::persona_chat},
    {"daily_dialog", SourceKind::daily_dialog},
    {"empathetic_dialogues", SourceKind::empathetic_dialogues},
    {"commonsense_dialogues", SourceKind::commonsense_dialogues},
    {"mutual", SourceKind::mutual},
    {"dream", SourceKind::dream},
}};

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n\f\v");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n\f\v");
    return s.substr(first, last - first + 1);
}

Turn parse_turn(const Json& j, std::size_t line) {
    if (!j.is_object()) throw ValidationError("turn is not an object", line);
    Turn turn{require_string(j, "speaker", line), require_string(j, "text", line)};
    if (trim(turn.text).empty()) throw ValidationError("turn text is empty", line);
    return turn;
}

void check_dialogue(const Dialogue& d, std::size_t line) {
    if (d.dialogue_id.empty()) throw ValidationError("empty dialogue_id", line);
    if (d.turns.size() < 2) throw ValidationError("dialogue " + d.dialogue_id + " has fewer than 2 turns", line);
}

std::vector<Dialogue> ingest_canonical(std::istream& raw, const Source& fallback) {
    std::vector<Dialogue> out;
    for_each_jsonl(raw, [&](const Json& j, std::size_t line) {
        Dialogue d;
        d.dialogue_id = require_string(j, "dialogue_id", line);
        if (auto it = j.find("source"); it != j.end()) {
            if (!it->is_string()) throw ValidationError("field \"source\" must be a string", line);
            d.source = Source::parse(it->get<std::string>());
        } else {
            d.source = fallback;
        }
        d.turns = turns_from_json(require_field(j, "turns", line), line);
        check_dialogue(d, line);
        out.push_back(std::move(d));
    });
    return out;
}

std::vector<Dialogue> ingest_eou_lines(std::istream& raw, const Source& source) {
    constexpr std::string_view kEou = "__eou__";
    std::vector<Dialogue> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(raw, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        Dialogue d;
        d.dialogue_id = source.tag() + "-" + std::to_string(line_no);
        d.source = source;
        std::string_view rest = line;
        while (!trim(rest).empty()) {
            const auto end = rest.find(kEou);
            const auto text = trim(rest.substr(0, end));
            if (text.empty()) throw ValidationError("empty turn", line_no);
            d.turns.push_back({d.turns.size() % 2 == 0 ? "A" : "B", std::string(text)});
            if (end == std::string_view::npos) break;
            rest.remove_prefix(end + kEou.size());
        }
        check_dialogue(d, line_no);
        out.push_back(std::move(d));
    }
    return out;
}

// --- tokenizer -------------------------------------------------------------

struct CodePoint {
    char32_t value;
    std::size_t length;  // bytes consumed; value is meaningless when valid == false
    bool valid;
};

CodePoint decode_utf8(std::string_view s, std::size_t pos) {
    const auto b0 = static_cast<unsigned char>(s[pos]);
    if (b0 < 0x80) return {b0, 1, true};
    std::size_t len = 0;
    char32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        len = 2;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        len = 3;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        len = 4;
        cp = b0 & 0x07;
    } else {
        return {0, 1, false};
    }
    if (pos + len > s.size()) return {0, 1, false};
    for (std::size_t i = 1; i < len; ++i) {
        const auto b = static_cast<unsigned char>(s[pos + i]);
        if ((b & 0xC0) != 0x80) return {0, 1, false};
        cp = (cp << 6) | (b & 0x3F);
    }
    return {cp, len, true};
}

void encode_utf8(char32_t cp, std::string& out) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

// Unicode White_Space property.
bool is_space(char32_t c) {
    return (c >= 0x09 && c <= 0x0D) || c == 0x20 || c == 0x85 || c == 0xA0 || c == 0x1680 ||
           (c >= 0x2000 && c <= 0x200A) || c == 0x2028 || c == 0x2029 || c == 0x202F || c == 0x205F ||
           c == 0x3000;
}

// ASCII punctuation and symbols, the Latin-1 punctuation block, General
// Punctuation, and CJK/fullwidth punctuation.
bool is_punct(char32_t c) {
    if (c < 0x80) return (c >= 0x21 && c <= 0x2F) || (c >= 0x3A && c <= 0x40) || (c >= 0x5B && c <= 0x60) ||
                         (c >= 0x7B && c <= 0x7E);
    if (c >= 0xA1 && c <= 0xBF) return true;
    if (c == 0xD7 || c == 0xF7) return true;
    if (c >= 0x2010 && c <= 0x2027) return true;
    if (c >= 0x2030 && c <= 0x205E) return true;
    if (c >= 0x3001 && c <= 0x3003) return true;
    if (c >= 0x3008 && c <= 0x3011) return true;
    if (c >= 0xFF01 && c <= 0xFF0F) return true;
    if (c >= 0xFF1A && c <= 0xFF20) return true;
    return false;
}

// Simple case mapping for Latin, Greek and Cyrillic capitals.
char32_t to_lower(char32_t c) {
    if (c >= 'A' && c <= 'Z') return c + 0x20;
    if (c < 0xC0) return c;
    if (c <= 0xDE && c != 0xD7) return c + 0x20;
    if (c >= 0x100 && c <= 0x137 && c % 2 == 0) return c + 1;
    if (c >= 0x139 && c <= 0x148 && c % 2 == 1) return c + 1;
    if (c >= 0x14A && c <= 0x177 && c % 2 == 0) return c + 1;
    if (c == 0x178) return 0xFF;
    if (c == 0x179 || c == 0x17B || c == 0x17D) return c + 1;
    if (c >= 0x391 && c <= 0x3AB && c != 0x3A2) return c + 0x20;
    if (c >= 0x400 && c <= 0x40F) return c + 0x50;
    if (c >= 0x410 && c <= 0x42F) return c + 0x20;
    if (c >= 0x460 && c <= 0x4FF && c % 2 == 0 && !(c >= 0x482 && c <= 0x489)) return c + 1;
    return c;
}

}  // namespace

std::vector<Turn> turns_from_json(const Json& j, std::size_t line) {
    if (!j.is_array()) throw ValidationError("\"turns\" must be an array", line);
    std::vector<Turn> turns;
    turns.reserve(j.size());
    for (const auto& t : j) turns.push_back(parse_turn(t, line));
    return turns;
}

Source Source::parse(std::string_view tag) {
    for (const auto& [name, kind] : kKnownSources) {
        if (name == tag) return {kind, std::string(name)};
    }
    if (tag.empty()) throw ValidationError("empty source tag");
    return {SourceKind::other, std::string(tag)};
}

Adapter parse_adapter(std::string_view id) {
    if (id == "canonical" || id == "jsonl") return Adapter::canonical;
    if (id == "eou_lines" || id == "eou") return Adapter::eou_lines;
    throw ValidationError("unknown input adapter \"" + std::string(id) + "\"");
}

std::vector<Dialogue> ingest_dialogues(std::istream& raw, const Source& source, Adapter adapter) {
    auto dialogues = adapter == Adapter::canonical ? ingest_canonical(raw, source) : ingest_eou_lines(raw, source);
    std::unordered_set<std::string_view> seen;
    for (std::size_t i = 0; i < dialogues.size(); ++i) {
        if (!seen.insert(dialogues[i].dialogue_id).second)
            throw ValidationError("duplicate dialogue_id " + dialogues[i].dialogue_id + " (record " +
                                  std::to_string(i + 1) + ")");
    }
    return dialogues;
}

std::vector<Dialogue> read_dialogues(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return ingest_dialogues(in, Source::parse("other"), Adapter::canonical);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

Json to_json(const Turn& turn) { return Json{{"speaker", turn.speaker}, {"text", turn.text}}; }

namespace {
Json turns_json(const std::vector<Turn>& turns) {
    Json arr = Json::array();
    for (const auto& t : turns) arr.push_back(to_json(t));
    return arr;
}
}  // namespace

Json to_json(const Dialogue& d) {
    return Json{{"dialogue_id", d.dialogue_id}, {"source", d.source.tag()}, {"turns", turns_json(d.turns)}};
}

Json to_json(const Candidate& c) {
    return Json{{"candidate_id", c.candidate_id},
                {"dialogue_id", c.dialogue_id},
                {"turn_index", c.turn_index},
                {"context", turns_json(c.context)},
                {"utterance", c.utterance}};
}

void write_dialogues(const std::filesystem::path& path, const std::vector<Dialogue>& dialogues) {
    std::vector<Json> records;
    records.reserve(dialogues.size());
    for (const auto& d : dialogues) records.push_back(to_json(d));
    write_jsonl(path, records);
}

std::string make_candidate_id(std::string_view dialogue_id, std::size_t turn_index) {
    return std::string(dialogue_id) + "#" + std::to_string(turn_index);
}

std::vector<Candidate> extract_candidates(const std::vector<Dialogue>& dialogues, std::size_t min_context_turns) {
    if (min_context_turns < 1) throw ValidationError("min_context_turns must be >= 1");
    std::vector<Candidate> out;
    for (const auto& d : dialogues) {
        for (std::size_t i = min_context_turns; i < d.turns.size(); ++i) {
            Candidate c;
            c.candidate_id = make_candidate_id(d.dialogue_id, i);
            c.dialogue_id = d.dialogue_id;
            c.turn_index = i;
            c.context.assign(d.turns.begin(), d.turns.begin() + static_cast<std::ptrdiff_t>(i));
            c.utterance = d.turns[i].text;
            out.push_back(std::move(c));
        }
    }
    return out;
}

std::vector<Candidate> read_candidates(const std::filesystem::path& path) {
    std::vector<Candidate> out;
    std::unordered_set<std::string> seen;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        Candidate c;
        c.candidate_id = require_string(j, "candidate_id", line);
        c.dialogue_id = require_string(j, "dialogue_id", line);
        const auto& idx = require_field(j, "turn_index", line);
        if (!idx.is_number_unsigned()) throw ValidationError("turn_index must be a non-negative integer", line);
        c.turn_index = idx.get<std::size_t>();
        c.context = turns_from_json(require_field(j, "context", line), line);
        c.utterance = require_string(j, "utterance", line);
        if (c.turn_index < 1 || c.context.size() != c.turn_index)
            throw ValidationError("candidate " + c.candidate_id + ": context length must equal turn_index >= 1", line);
        if (trim(c.utterance).empty()) throw ValidationError("candidate " + c.candidate_id + ": empty utterance", line);
        if (!seen.insert(c.candidate_id).second)
            throw ValidationError("duplicate candidate_id " + c.candidate_id, line);
        out.push_back(std::move(c));
    });
    return out;
}

void write_candidates(const std::filesystem::path& path, const std::vector<Candidate>& candidates) {
    std::vector<Json> records;
    records.reserve(candidates.size());
    for (const auto& c : candidates) records.push_back(to_json(c));
    write_jsonl(path, records);
}

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string word;
    auto flush = [&] {
        if (!word.empty()) tokens.push_back(std::move(word));
        word.clear();
    };
    for (std::size_t pos = 0; pos < text.size();) {
        const auto cp = decode_utf8(text, pos);
        if (!cp.valid) {
            word += text[pos];
        } else if (is_space(cp.value)) {
            flush();
        } else if (is_punct(cp.value)) {
            flush();
            std::string p;
            encode_utf8(cp.value, p);
            tokens.push_back(std::move(p));
        } else {
            encode_utf8(to_lower(cp.value), word);
        }
        pos += cp.length;
    }
    flush();
    return tokens;
}

std::vector<Candidate> sample_for_labeling(const std::vector<Candidate>& candidates, std::size_t n,
                                           std::uint64_t seed) {
    if (n > candidates.size())
        throw ValidationError("cannot sample " + std::to_string(n) + " of " + std::to_string(candidates.size()) +
                              " candidates");
    std::vector<std::size_t> order(candidates.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    // Partial Fisher-Yates: the first n slots end up a uniform n-subset.
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const auto j = i + static_cast<std::size_t>(rng.below(order.size() - i));
        std::swap(order[i], order[j]);
    }
    order.resize(n);
    std::sort(order.begin(), order.end());
    std::vector<Candidate> out;
    out.reserve(n);
    for (auto i : order) out.push_back(candidates[i]);
    return out;
}

}  // namespace imad::corpus
