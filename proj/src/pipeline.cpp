// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_map>

#include "imad/error.hpp"

namespace imad::pipeline {

namespace {

bool kept_label(std::string_view label) { return label == "perfect_match" || label == "partial_match"; }

double require_number(const Json& j, std::string_view field, std::size_t line) {
    const auto& v = require_field(j, field, line);
    if (!v.is_number()) throw ValidationError("\"" + std::string(field) + "\" must be a number", line);
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ValidationError("\"" + std::string(field) + "\" is not finite", line);
    return x;
}

}  // namespace

std::vector<Selection> stage1_select(const forest::ForestModel& model, const features::FeatureMatrix& matrix,
                                     double threshold, std::optional<Band> band) {
    if (matrix.feature_names != model.feature_names)
        throw ValidationError("feature names of the matrix differ from those the model was trained on");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ValidationError("decision threshold must lie in [0, 1]");
    if (band && !(band->lo >= 0.0 && band->lo < band->hi && band->hi <= 1.0))
        throw ValidationError("band must satisfy 0 <= lo < hi <= 1");

    const auto probas = forest::predict_proba(model, matrix.rows);
    std::vector<Selection> out;
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        const double p = probas[i][1];
        const bool keep = band ? (p >= band->lo && p < band->hi) : p >= threshold;
        if (keep) out.push_back({matrix.candidate_ids[i], p});
    }
    std::sort(out.begin(), out.end(), [](const Selection& a, const Selection& b) {
        return a.proba != b.proba ? a.proba > b.proba : a.candidate_id < b.candidate_id;
    });
    return out;
}

void write_selection(const std::filesystem::path& path, const std::vector<Selection>& selection) {
    std::vector<Json> out;
    out.reserve(selection.size());
    for (const auto& s : selection) out.push_back(Json{{"candidate_id", s.candidate_id}, {"proba", s.proba}});
    write_jsonl(path, out);
}

std::vector<Selection> read_selection(const std::filesystem::path& path) {
    std::vector<Selection> out;
    std::set<std::string> seen;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        Selection s{require_string(j, "candidate_id", line), require_number(j, "proba", line)};
        if (s.proba < 0.0 || s.proba > 1.0) throw ValidationError("proba must lie in [0, 1]", line);
        if (!seen.insert(s.candidate_id).second) throw ValidationError("duplicate candidate_id " + s.candidate_id, line);
        out.push_back(std::move(s));
    });
    return out;
}

TrainingSet training_set(const features::FeatureMatrix& matrix, std::span<const labels::LabelRecord> records) {
    std::map<std::string, std::pair<std::size_t, std::size_t>> votes;  // (replaceable, total)
    for (const auto& r : records) {
        if (r.taxonomy != labels::Taxonomy::stage1_binary) continue;
        auto& v = votes[r.candidate_id];
        v.first += r.label == "replaceable";
        ++v.second;
    }
    std::unordered_map<std::string, std::size_t> row_of;
    for (std::size_t i = 0; i < matrix.size(); ++i) row_of.emplace(matrix.candidate_ids[i], i);
    for (const auto& [id, v] : votes) {
        if (!row_of.contains(id)) throw ValidationError("stage-one label for candidate " + id + " has no feature row");
    }

    TrainingSet t;
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        auto it = votes.find(matrix.candidate_ids[i]);
        if (it == votes.end()) continue;
        t.candidate_ids.push_back(matrix.candidate_ids[i]);
        t.X.push_back(matrix.rows[i]);
        t.y.push_back(2 * it->second.first > it->second.second ? 1 : 0);
    }
    return t;
}

ConsensusLabel consensus(std::span<const labels::LabelRecord> records) {
    if (records.empty()) throw ValidationError("consensus needs at least one label record");
    ConsensusLabel c;
    c.candidate_id = records.front().candidate_id;
    for (auto label : labels::legal_labels(labels::Taxonomy::stage2_four_class)) c.votes[std::string(label)] = 0;
    for (const auto& r : records) {
        if (r.candidate_id != c.candidate_id) throw ValidationError("consensus over records of different candidates");
        if (r.taxonomy != labels::Taxonomy::stage2_four_class)
            throw ValidationError("consensus expects stage2_four_class records, got " +
                                  std::string(labels::to_string(r.taxonomy)));
        ++c.votes.at(r.label);
    }
    c.n_raters = records.size();
    c.label = "undefined";
    for (const auto& [label, count] : c.votes) {
        if (2 * count > c.n_raters) c.label = label;
    }
    return c;
}

std::vector<ConsensusLabel> consensus_all(std::span<const labels::LabelRecord> records) {
    std::map<std::string, std::vector<labels::LabelRecord>> by_candidate;
    for (const auto& r : records) {
        if (r.taxonomy == labels::Taxonomy::stage2_four_class) by_candidate[r.candidate_id].push_back(r);
    }
    std::vector<ConsensusLabel> out;
    out.reserve(by_candidate.size());
    for (const auto& [id, group] : by_candidate) out.push_back(consensus(group));
    return out;
}

void write_consensus(const std::filesystem::path& path, const std::vector<ConsensusLabel>& labels) {
    std::vector<Json> out;
    out.reserve(labels.size());
    for (const auto& c : labels) {
        Json votes = Json::object();
        for (auto label : labels::legal_labels(labels::Taxonomy::stage2_four_class))
            votes[std::string(label)] = c.votes.contains(std::string(label)) ? c.votes.at(std::string(label)) : 0;
        out.push_back(Json{{"candidate_id", c.candidate_id}, {"label", c.label}, {"n_raters", c.n_raters}, {"votes", votes}});
    }
    write_jsonl(path, out);
}

std::vector<ConsensusLabel> read_consensus(const std::filesystem::path& path) {
    std::vector<ConsensusLabel> out;
    std::set<std::string> seen;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        ConsensusLabel c;
        c.candidate_id = require_string(j, "candidate_id", line);
        c.label = require_string(j, "label", line);
        if (!labels::is_legal(labels::Taxonomy::stage2_four_class, c.label))
            throw ValidationError("\"" + c.label + "\" is not a four-class label", line);
        const auto& n = require_field(j, "n_raters", line);
        if (!n.is_number_unsigned()) throw ValidationError("n_raters must be a non-negative integer", line);
        c.n_raters = n.get<std::size_t>();
        const auto& votes = require_field(j, "votes", line);
        if (!votes.is_object()) throw ValidationError("votes must be an object", line);
        std::size_t total = 0;
        for (auto label : labels::legal_labels(labels::Taxonomy::stage2_four_class)) {
            const auto key = std::string(label);
            if (!votes.contains(key) || !votes.at(key).is_number_unsigned())
                throw ValidationError("votes." + key + " must be a non-negative integer", line);
            c.votes[key] = votes.at(key).get<std::size_t>();
            total += c.votes[key];
        }
        if (votes.size() != c.votes.size()) throw ValidationError("votes holds an unknown label", line);
        if (total != c.n_raters) throw ValidationError("n_raters differs from the vote total", line);
        std::string expected = "undefined";
        for (const auto& [label, count] : c.votes)
            if (2 * count > c.n_raters) expected = label;
        if (expected != c.label) throw ValidationError("label does not follow from the votes", line);
        if (!seen.insert(c.candidate_id).second) throw ValidationError("duplicate candidate_id " + c.candidate_id, line);
        out.push_back(std::move(c));
    });
    return out;
}

AssembleResult assemble_dataset(const std::vector<corpus::Candidate>& candidates,
                                const std::vector<corpus::Dialogue>& dialogues,
                                const std::vector<matcher::MatchResult>& matches,
                                const std::vector<ConsensusLabel>& consensus,
                                const std::vector<Selection>& stage1) {
    std::unordered_map<std::string, const corpus::Candidate*> candidate_by_id;
    for (const auto& c : candidates) candidate_by_id.emplace(c.candidate_id, &c);
    std::unordered_map<std::string, const corpus::Dialogue*> dialogue_by_id;
    for (const auto& d : dialogues) dialogue_by_id.emplace(d.dialogue_id, &d);
    std::unordered_map<std::string, const matcher::MatchResult*> match_by_id;
    for (const auto& m : matches) match_by_id.emplace(m.candidate_id, &m);
    std::unordered_map<std::string, double> proba_by_id;
    for (const auto& s : stage1) proba_by_id.emplace(s.candidate_id, s.proba);

    std::unordered_map<std::string, const ConsensusLabel*> kept;
    for (const auto& c : consensus) {
        const auto& id = c.candidate_id;
        if (!candidate_by_id.contains(id)) throw ValidationError("labeled candidate " + id + " is not in the corpus");
        if (!match_by_id.contains(id)) throw ValidationError("labeled candidate " + id + " has no match result");
        if (!proba_by_id.contains(id)) throw ValidationError("labeled candidate " + id + " has no stage-one proba");
        if (!dialogue_by_id.contains(candidate_by_id.at(id)->dialogue_id))
            throw ValidationError("labeled candidate " + id + " refers to unknown dialogue " +
                                  candidate_by_id.at(id)->dialogue_id);
        if (kept_label(c.label)) kept.emplace(id, &c);
    }

    AssembleResult result;
    for (const auto& cand : candidates) {
        auto it = kept.find(cand.candidate_id);
        if (it == kept.end()) continue;
        const auto& match = *match_by_id.at(cand.candidate_id);
        FinalSample s;
        s.candidate_id = cand.candidate_id;
        s.dialogue_id = cand.dialogue_id;
        s.source = dialogue_by_id.at(cand.dialogue_id)->source.tag();
        s.context = cand.context;
        s.image_id = match.selected_image;
        s.replaced_utterance = cand.utterance;
        s.stage1_proba = proba_by_id.at(cand.candidate_id);
        s.match_confidence = match.selected_confidence;
        s.label = it->second->label;
        result.samples.push_back(std::move(s));
    }
    if (!result.samples.empty()) {
        const auto stats_input = stats_samples(result.samples);
        result.stats = evalkit::dataset_stats(stats_input);
    }
    return result;
}

Json to_json(const FinalSample& s) {
    Json context = Json::array();
    for (const auto& t : s.context) context.push_back(corpus::to_json(t));
    return Json{{"candidate_id", s.candidate_id},
                {"dialogue_id", s.dialogue_id},
                {"source", s.source},
                {"context", std::move(context)},
                {"image_id", s.image_id},
                {"replaced_utterance", s.replaced_utterance},
                {"stage1_proba", s.stage1_proba},
                {"match_confidence", s.match_confidence},
                {"label", s.label}};
}

FinalSample final_sample_from_json(const Json& j, std::size_t line) {
    FinalSample s;
    s.candidate_id = require_string(j, "candidate_id", line);
    s.dialogue_id = require_string(j, "dialogue_id", line);
    s.source = require_string(j, "source", line);
    s.context = corpus::turns_from_json(require_field(j, "context", line), line);
    s.image_id = require_string(j, "image_id", line);
    s.replaced_utterance = require_string(j, "replaced_utterance", line);
    s.stage1_proba = require_number(j, "stage1_proba", line);
    s.match_confidence = require_number(j, "match_confidence", line);
    s.label = require_string(j, "label", line);
    if (!kept_label(s.label)) throw ValidationError("dataset label must be perfect_match or partial_match", line);
    return s;
}

void write_dataset(const std::filesystem::path& path, const std::vector<FinalSample>& samples) {
    std::vector<Json> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(to_json(s));
    write_jsonl(path, out);
}

std::vector<FinalSample> read_dataset(const std::filesystem::path& path) {
    std::vector<FinalSample> out;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) { out.push_back(final_sample_from_json(j, line)); });
    return out;
}

std::vector<evalkit::StatsSample> stats_samples(std::span<const FinalSample> samples) {
    std::vector<evalkit::StatsSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        evalkit::StatsSample x;
        for (const auto& t : s.context) x.context.push_back(t.text);
        x.utterance = s.replaced_utterance;
        out.push_back(std::move(x));
    }
    return out;
}

}  // namespace imad::pipeline
