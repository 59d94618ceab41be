// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "imad/corpus.hpp"
#include "imad/vecstore.hpp"

namespace imad::features {

inline constexpr std::size_t kFeatureCount = 5;

/// Column order of the feature matrix. The forest model stores these names
/// and refuses matrices whose names differ.
inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames{
    "image_score", "max_entity_score", "sentence_similarity", "bleu_score", "threshold"};

using FeatureRow = std::array<double, kFeatureCount>;

struct FeatureVector {
    double image_score = 0.0;
    double max_entity_score = 0.0;
    double sentence_similarity = 0.0;
    double bleu_score = 0.0;
    double threshold_flag = 0.0;

    FeatureRow as_row() const { return {image_score, max_entity_score, sentence_similarity, bleu_score, threshold_flag}; }
    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

/// Everything a scorer may look at for one candidate.
struct FeatureInputs {
    const corpus::Candidate& candidate;
    std::span<const float> utterance;
    std::vector<std::span<const float>> entities;
    std::span<const float> context;
    const vecstore::EmbeddingTable& images;
    double tau = 0.3;
};

/// A scorer sees the inputs and the fields computed before it (scorers run
/// in column order), so later features may reuse earlier ones.
using Scorer = std::function<double(const FeatureInputs&, const FeatureVector& so_far)>;

struct NamedScorer {
    std::string name;
    Scorer score;
};

/// One scorer per column. Swap an entry to try an alternative definition of
/// that feature without touching the rest of the pipeline.
struct ScorerSet {
    std::array<NamedScorer, kFeatureCount> scorers;

    /// image_score: best cosine of the utterance against any image.
    /// max_entity_score: best cosine of any entity against any image; 0 without entities.
    /// sentence_similarity: cosine of utterance and context embeddings.
    /// bleu_score: add-one smoothed sentence BLEU-2 of utterance tokens against context tokens.
    /// threshold: 1 when image_score >= tau, else 0.
    static const ScorerSet& defaults();
};

FeatureVector compute_features(const FeatureInputs& inputs, const ScorerSet& scorers = ScorerSet::defaults());

FeatureVector compute_features(const corpus::Candidate& candidate, std::span<const float> utterance_vec,
                               const std::vector<std::span<const float>>& entity_vecs,
                               std::span<const float> context_vec, const vecstore::EmbeddingTable& images,
                               double tau);

struct EntityRef {
    std::string text;
    std::string embedding_id;
};

/// candidate_id -> entities, as exported next to the entity embedding table.
using EntityMap = std::unordered_map<std::string, std::vector<EntityRef>>;

EntityMap load_entities(const std::filesystem::path& path);
void write_entities(const std::filesystem::path& path, const std::vector<std::string>& candidate_order,
                    const EntityMap& entities);

/// Embedding tables a feature run reads. Utterance and context vectors are
/// keyed by candidate_id; entity vectors by EntityRef::embedding_id.
struct FeatureTables {
    const vecstore::EmbeddingTable& utterances;
    const vecstore::EmbeddingTable& contexts;
    const vecstore::EmbeddingTable& images;
    const vecstore::EmbeddingTable* entities = nullptr;
};

struct FeatureMatrix {
    std::vector<std::string> candidate_ids;
    std::vector<FeatureRow> rows;
    std::vector<std::string> feature_names;

    std::size_t size() const { return rows.size(); }
};

std::vector<std::string> default_feature_names();

/// One row per candidate in corpus order. Throws ValidationError naming the
/// candidate when its utterance or context vector is missing.
FeatureMatrix build_feature_matrix(const std::vector<corpus::Candidate>& candidates, const FeatureTables& tables,
                                   const EntityMap& entities, double tau,
                                   const ScorerSet& scorers = ScorerSet::defaults());

void write_feature_matrix(const std::filesystem::path& path, const FeatureMatrix& matrix);
FeatureMatrix read_feature_matrix(const std::filesystem::path& path);

}  // namespace imad::features
