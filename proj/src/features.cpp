// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/features.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "imad/error.hpp"
#include "imad/evalkit.hpp"
#include "imad/jsonl.hpp"
#include "imad/parallel.hpp"

namespace imad::features {

namespace {

double image_score(const FeatureInputs& in, const FeatureVector&) {
    return vecstore::max_cosine(in.utterance, in.images);
}

double max_entity_score(const FeatureInputs& in, const FeatureVector&) {
    if (in.entities.empty()) return 0.0;
    double best = -1.0;
    for (const auto& e : in.entities) best = std::max(best, vecstore::max_cosine(e, in.images));
    return best;
}

double sentence_similarity(const FeatureInputs& in, const FeatureVector&) {
    return vecstore::cosine(in.utterance, in.context);
}

double bleu_score(const FeatureInputs& in, const FeatureVector&) {
    const auto hyp = corpus::tokenize(in.candidate.utterance);
    std::vector<std::string> ref;
    for (const auto& turn : in.candidate.context) {
        auto t = corpus::tokenize(turn.text);
        ref.insert(ref.end(), std::make_move_iterator(t.begin()), std::make_move_iterator(t.end()));
    }
    return evalkit::sentence_bleu(hyp, ref, 2, evalkit::Smoothing::add_one);
}

double threshold_flag(const FeatureInputs& in, const FeatureVector& so_far) {
    return so_far.image_score >= in.tau ? 1.0 : 0.0;
}

void set_field(FeatureVector& v, std::size_t column, double value) {
    switch (column) {
        case 0: v.image_score = value; break;
        case 1: v.max_entity_score = value; break;
        case 2: v.sentence_similarity = value; break;
        case 3: v.bleu_score = value; break;
        case 4: v.threshold_flag = value; break;
    }
}

}  // namespace

const ScorerSet& ScorerSet::defaults() {
    static const ScorerSet set{{{
        {std::string(kFeatureNames[0]), image_score},
        {std::string(kFeatureNames[1]), max_entity_score},
        {std::string(kFeatureNames[2]), sentence_similarity},
        {std::string(kFeatureNames[3]), bleu_score},
        {std::string(kFeatureNames[4]), threshold_flag},
    }}};
    return set;
}

std::vector<std::string> default_feature_names() { return {kFeatureNames.begin(), kFeatureNames.end()}; }

FeatureVector compute_features(const FeatureInputs& inputs, const ScorerSet& scorers) {
    if (inputs.images.empty()) throw ValidationError("feature computation needs a non-empty image table");
    if (!(inputs.tau >= -1.0 && inputs.tau <= 1.0)) throw ValidationError("tau must lie in [-1, 1]");
    FeatureVector v;
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
        const double value = scorers.scorers[c].score(inputs, v);
        if (!std::isfinite(value))
            throw ValidationError("feature " + scorers.scorers[c].name + " is not finite for candidate " +
                                  inputs.candidate.candidate_id);
        set_field(v, c, value);
    }
    return v;
}

FeatureVector compute_features(const corpus::Candidate& candidate, std::span<const float> utterance_vec,
                               const std::vector<std::span<const float>>& entity_vecs,
                               std::span<const float> context_vec, const vecstore::EmbeddingTable& images,
                               double tau) {
    return compute_features(FeatureInputs{candidate, utterance_vec, entity_vecs, context_vec, images, tau});
}

EntityMap load_entities(const std::filesystem::path& path) {
    EntityMap out;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        auto id = require_string(j, "candidate_id", line);
        const auto& list = require_field(j, "entities", line);
        if (!list.is_array()) throw ValidationError("\"entities\" must be an array", line);
        std::vector<EntityRef> refs;
        for (const auto& e : list) {
            if (!e.is_object()) throw ValidationError("entity is not an object", line);
            refs.push_back({require_string(e, "text", line), require_string(e, "embedding_id", line)});
        }
        if (!out.emplace(id, std::move(refs)).second) throw ValidationError("duplicate candidate_id " + id, line);
    });
    return out;
}

void write_entities(const std::filesystem::path& path, const std::vector<std::string>& candidate_order,
                    const EntityMap& entities) {
    std::vector<Json> records;
    for (const auto& id : candidate_order) {
        auto it = entities.find(id);
        if (it == entities.end()) continue;
        Json list = Json::array();
        for (const auto& e : it->second) list.push_back(Json{{"text", e.text}, {"embedding_id", e.embedding_id}});
        records.push_back(Json{{"candidate_id", id}, {"entities", list}});
    }
    write_jsonl(path, records);
}

FeatureMatrix build_feature_matrix(const std::vector<corpus::Candidate>& candidates, const FeatureTables& tables,
                                   const EntityMap& entities, double tau, const ScorerSet& scorers) {
    FeatureMatrix m;
    m.feature_names.reserve(kFeatureCount);
    for (const auto& s : scorers.scorers) m.feature_names.push_back(s.name);
    m.candidate_ids.reserve(candidates.size());
    for (const auto& c : candidates) m.candidate_ids.push_back(c.candidate_id);
    m.rows.resize(candidates.size());

    parallel_for(candidates.size(), [&](std::size_t i) {
        const auto& c = candidates[i];
        const auto utt = tables.utterances.find(c.candidate_id);
        if (!utt) throw ValidationError("no utterance embedding for candidate " + c.candidate_id);
        const auto ctx = tables.contexts.find(c.candidate_id);
        if (!ctx) throw ValidationError("no context embedding for candidate " + c.candidate_id);

        std::vector<std::span<const float>> entity_vecs;
        if (auto it = entities.find(c.candidate_id); it != entities.end()) {
            for (const auto& e : it->second) {
                if (!tables.entities)
                    throw ValidationError("candidate " + c.candidate_id + " lists entities but no entity table was given");
                const auto row = tables.entities->find(e.embedding_id);
                if (!row)
                    throw ValidationError("candidate " + c.candidate_id + ": no entity embedding " + e.embedding_id);
                entity_vecs.push_back(tables.entities->vector(*row));
            }
        }
        try {
            m.rows[i] = compute_features(FeatureInputs{c, tables.utterances.vector(*utt), std::move(entity_vecs),
                                                       tables.contexts.vector(*ctx), tables.images, tau},
                                         scorers)
                            .as_row();
        } catch (const ValidationError& e) {
            throw ValidationError("candidate " + c.candidate_id + ": " + e.what());
        }
    });
    return m;
}

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& matrix) {
    std::vector<Json> records;
    records.reserve(matrix.size());
    for (std::size_t i = 0; i < matrix.size(); ++i) {
        records.push_back(Json{{"candidate_id", matrix.candidate_ids[i]},
                               {"features", matrix.rows[i]},
                               {"feature_names", matrix.feature_names}});
    }
    write_jsonl(path, records);
}

FeatureMatrix read_feature_matrix(const std::filesystem::path& path) {
    FeatureMatrix m;
    std::unordered_set<std::string> seen;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        auto id = require_string(j, "candidate_id", line);
        const auto& values = require_field(j, "features", line);
        if (!values.is_array() || values.size() != kFeatureCount)
            throw ValidationError("\"features\" must hold " + std::to_string(kFeatureCount) + " numbers", line);
        FeatureRow row;
        for (std::size_t c = 0; c < kFeatureCount; ++c) {
            if (!values[c].is_number()) throw ValidationError("feature value is not a number", line);
            row[c] = values[c].get<double>();
            if (!std::isfinite(row[c])) throw ValidationError("non-finite feature value", line);
        }
        const auto& names = require_field(j, "feature_names", line);
        if (!names.is_array()) throw ValidationError("\"feature_names\" must be an array", line);
        std::vector<std::string> parsed;
        for (const auto& n : names) {
            if (!n.is_string()) throw ValidationError("feature name is not a string", line);
            parsed.push_back(n.get<std::string>());
        }
        if (m.feature_names.empty()) {
            if (parsed.size() != kFeatureCount) throw ValidationError("expected 5 feature names", line);
            m.feature_names = parsed;
        } else if (parsed != m.feature_names) {
            throw ValidationError("feature names differ from earlier rows", line);
        }
        if (!seen.insert(id).second) throw ValidationError("duplicate candidate_id " + id, line);
        m.candidate_ids.push_back(std::move(id));
        m.rows.push_back(row);
    });
    if (m.feature_names.empty()) m.feature_names = default_feature_names();
    return m;
}

}  // namespace imad::features
