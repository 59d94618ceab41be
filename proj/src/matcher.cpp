// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "imad/error.hpp"
#include "imad/parallel.hpp"

namespace imad::matcher {

namespace {

std::string pair_name(std::string_view candidate_id, std::string_view image_id) {
    return "(" + std::string(candidate_id) + ", " + std::string(image_id) + ")";
}

std::vector<double> number_array(const Json& j, std::string_view field, std::size_t line) {
    const auto& arr = require_field(j, field, line);
    if (!arr.is_array()) throw ValidationError("\"" + std::string(field) + "\" must be an array", line);
    std::vector<double> out;
    for (const auto& v : arr) {
        if (!v.is_number()) throw ValidationError("\"" + std::string(field) + "\" holds a non-number", line);
        out.push_back(v.get<double>());
    }
    return out;
}

}  // namespace

double confidence(std::span<const double> token_logprobs) {
    if (token_logprobs.empty()) throw ValidationError("confidence of an empty token sequence");
    double sum = 0.0;
    for (double lp : token_logprobs) {
        if (!std::isfinite(lp)) throw ValidationError("non-finite token log-probability");
        sum += lp;
    }
    return sum;
}

void VqaIndex::add(VqaScoreRecord record) {
    const auto name = pair_name(record.candidate_id, record.image_id);
    if (record.candidate_id.empty() || record.image_id.empty())
        throw ValidationError("VQA record needs candidate_id and image_id");
    if (record.token_logprobs.empty()) throw ValidationError("VQA record " + name + " has no token log-probabilities");
    for (double lp : record.token_logprobs) {
        if (!std::isfinite(lp) || lp > 0.0)
            throw ValidationError("VQA record " + name + " has a log-probability that is not finite and <= 0");
    }
    if (!record.tokens.empty() && record.tokens.size() != record.token_logprobs.size())
        throw ValidationError("VQA record " + name + " has " + std::to_string(record.tokens.size()) + " tokens but " +
                              std::to_string(record.token_logprobs.size()) + " log-probabilities");
    auto key = std::make_pair(record.candidate_id, record.image_id);
    if (!records_.emplace(std::move(key), std::move(record)).second)
        throw ValidationError("duplicate VQA record " + name);
}

const VqaScoreRecord* VqaIndex::find(std::string_view candidate_id, std::string_view image_id) const {
    auto it = records_.find(std::make_pair(std::string(candidate_id), std::string(image_id)));
    return it == records_.end() ? nullptr : &it->second;
}

VqaIndex load_vqa_scores(const std::filesystem::path& path) {
    VqaIndex index;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        VqaScoreRecord r;
        r.candidate_id = require_string(j, "candidate_id", line);
        r.image_id = require_string(j, "image_id", line);
        if (j.contains("question")) r.question = require_string(j, "question", line);
        if (j.contains("tokenizer_id")) r.tokenizer_id = require_string(j, "tokenizer_id", line);
        if (j.contains("tokens")) {
            const auto& tokens = j.at("tokens");
            if (!tokens.is_array()) throw ValidationError("\"tokens\" must be an array", line);
            for (const auto& t : tokens) {
                if (!t.is_string()) throw ValidationError("\"tokens\" holds a non-string", line);
                r.tokens.push_back(t.get<std::string>());
            }
        }
        r.token_logprobs = number_array(j, "token_logprobs", line);
        try {
            index.add(std::move(r));
        } catch (const ValidationError& e) {
            throw ValidationError(e.what(), line);
        }
    });
    return index;
}

void write_vqa_scores(const std::filesystem::path& path, const std::vector<VqaScoreRecord>& records) {
    std::vector<Json> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        out.push_back(Json{{"candidate_id", r.candidate_id},
                           {"image_id", r.image_id},
                           {"question", r.question},
                           {"tokens", r.tokens},
                           {"token_logprobs", r.token_logprobs},
                           {"tokenizer_id", r.tokenizer_id}});
    }
    write_jsonl(path, out);
}

MatchResult rerank(std::string_view candidate_id, const vecstore::TopNResult& retrieved, const VqaIndex& records) {
    if (retrieved.ranked.empty()) throw ValidationError("nothing retrieved for candidate " + std::string(candidate_id));
    MatchResult result;
    result.candidate_id = std::string(candidate_id);
    result.n_used = retrieved.n_requested;
    for (const auto& hit : retrieved.ranked) {
        const auto* record = records.find(candidate_id, hit.id);
        if (!record) throw ValidationError("no VQA record for " + pair_name(candidate_id, hit.id));
        result.ranked.push_back({hit.id, confidence(record->token_logprobs)});
    }
    std::stable_sort(result.ranked.begin(), result.ranked.end(),
                     [](const RankedImage& a, const RankedImage& b) { return a.confidence > b.confidence; });
    result.selected_image = result.ranked.front().image_id;
    result.selected_confidence = result.ranked.front().confidence;
    return result;
}

std::vector<MatchResult> match_all(const std::vector<std::string>& candidate_ids,
                                   const vecstore::EmbeddingTable& utterances, const vecstore::EmbeddingTable& images,
                                   const VqaIndex& records, std::size_t n) {
    std::vector<MatchResult> results(candidate_ids.size());
    parallel_for(candidate_ids.size(), [&](std::size_t i) {
        const auto& id = candidate_ids[i];
        try {
            const auto top = vecstore::top_n(utterances.at(id), images, n, id);
            results[i] = rerank(id, top, records);
        } catch (const ValidationError& e) {
            throw ValidationError("matching candidate " + id + ": " + e.what());
        }
    });
    return results;
}

Json to_json(const MatchResult& r) {
    Json ranked = Json::array();
    for (const auto& x : r.ranked) ranked.push_back(Json::array({x.image_id, x.confidence}));
    return Json{{"candidate_id", r.candidate_id},
                {"n", r.n_used},
                {"selected_image", r.selected_image},
                {"confidence", r.selected_confidence},
                {"ranked", std::move(ranked)}};
}

MatchResult match_from_json(const Json& j, std::size_t line) {
    MatchResult r;
    r.candidate_id = require_string(j, "candidate_id", line);
    const auto& n = require_field(j, "n", line);
    if (!n.is_number_unsigned() || n.get<std::size_t>() == 0) throw ValidationError("\"n\" must be a positive integer", line);
    r.n_used = n.get<std::size_t>();
    r.selected_image = require_string(j, "selected_image", line);
    const auto& conf = require_field(j, "confidence", line);
    if (!conf.is_number()) throw ValidationError("\"confidence\" must be a number", line);
    r.selected_confidence = conf.get<double>();
    const auto& ranked = require_field(j, "ranked", line);
    if (!ranked.is_array() || ranked.empty()) throw ValidationError("\"ranked\" must be a non-empty array", line);
    for (const auto& entry : ranked) {
        if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() || !entry[1].is_number())
            throw ValidationError("\"ranked\" entries must be [image_id, confidence]", line);
        r.ranked.push_back({entry[0].get<std::string>(), entry[1].get<double>()});
        if (!std::isfinite(r.ranked.back().confidence)) throw ValidationError("non-finite confidence", line);
    }
    if (r.ranked.front().image_id != r.selected_image || r.ranked.front().confidence != r.selected_confidence)
        throw ValidationError("selected_image must be the first ranked entry", line);
    return r;
}

void write_matches(const std::filesystem::path& path, const std::vector<MatchResult>& results) {
    std::vector<Json> out;
    out.reserve(results.size());
    for (const auto& r : results) out.push_back(to_json(r));
    write_jsonl(path, out);
}

std::vector<MatchResult> read_matches(const std::filesystem::path& path) {
    std::vector<MatchResult> out;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) { out.push_back(match_from_json(j, line)); });
    return out;
}

void write_match_meta(const std::filesystem::path& path, std::size_t n) {
    write_file(path, Json{{"question", kVqaQuestion}, {"n", n}}.dump() + "\n");
}

Judgment parse_judgment(std::string_view label) {
    if (label == "image_matches") return Judgment::image_matches;
    if (label == "image_does_not_match") return Judgment::image_does_not_match;
    if (label == "unknown") return Judgment::unknown;
    throw ValidationError("unknown judgment label \"" + std::string(label) + "\"");
}

std::string_view to_string(Judgment judgment) {
    switch (judgment) {
        case Judgment::image_matches: return "image_matches";
        case Judgment::image_does_not_match: return "image_does_not_match";
        case Judgment::unknown: return "unknown";
    }
    return "unknown";
}

Judgments load_judgments(const std::filesystem::path& path) {
    Judgments out;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        auto key = std::make_pair(require_string(j, "candidate_id", line), require_string(j, "image_id", line));
        Judgment label;
        try {
            label = parse_judgment(require_string(j, "label", line));
        } catch (const ValidationError& e) {
            throw ValidationError(e.what(), line);
        }
        if (!out.emplace(key, label).second)
            throw ValidationError("duplicate judgment for " + pair_name(key.first, key.second), line);
    });
    return out;
}

SweepReport n_sweep(const std::vector<std::string>& candidate_ids, const vecstore::EmbeddingTable& utterances,
                    const vecstore::EmbeddingTable& images, const VqaIndex& records, const std::vector<std::size_t>& ns,
                    const Judgments* judgments) {
    if (ns.empty()) throw ValidationError("the sweep needs at least one N");
    SweepReport report;
    report.judged = judgments != nullptr;
    for (auto n : ns) {
        auto results = match_all(candidate_ids, utterances, images, records, n);
        SweepRow row;
        row.n = n;
        row.candidates = results.size();
        double sum = 0.0;
        for (const auto& r : results) {
            sum += r.selected_confidence;
            if (!judgments) continue;
            auto it = judgments->find(std::make_pair(r.candidate_id, r.selected_image));
            if (it == judgments->end()) {
                ++row.unjudged;
                continue;
            }
            switch (it->second) {
                case Judgment::image_matches: ++row.image_matches; break;
                case Judgment::image_does_not_match: ++row.no_match; break;
                case Judgment::unknown: ++row.unknown; break;
            }
        }
        row.mean_confidence = results.empty() ? 0.0 : sum / static_cast<double>(results.size());
        report.rows.push_back(row);
        report.results.push_back(std::move(results));
    }
    return report;
}

Json to_json(const SweepReport& report) {
    Json rows = Json::array();
    for (const auto& r : report.rows) {
        Json row{{"n", r.n}, {"candidates", r.candidates}, {"mean_confidence", r.mean_confidence}};
        if (report.judged) {
            row["image_matches"] = r.image_matches;
            row["no_match"] = r.no_match;
            row["unknown"] = r.unknown;
            row["unjudged"] = r.unjudged;
        }
        rows.push_back(std::move(row));
    }
    return Json{{"question", kVqaQuestion}, {"judged", report.judged}, {"rows", std::move(rows)}};
}

std::string format_sweep(const SweepReport& report) {
    std::ostringstream os;
    os << std::left << std::setw(6) << "N" << std::right << std::setw(12) << "candidates";
    if (report.judged)
        os << std::setw(16) << "Image matches" << std::setw(10) << "No Match" << std::setw(9) << "Unknown"
           << std::setw(10) << "unjudged";
    os << std::setw(17) << "mean confidence" << '\n';
    for (const auto& r : report.rows) {
        os << std::left << std::setw(6) << r.n << std::right << std::setw(12) << r.candidates;
        if (report.judged)
            os << std::setw(16) << r.image_matches << std::setw(10) << r.no_match << std::setw(9) << r.unknown
               << std::setw(10) << r.unjudged;
        os << std::setw(17) << std::fixed << std::setprecision(4) << r.mean_confidence << '\n';
    }
    return os.str();
}

}  // namespace imad::matcher
