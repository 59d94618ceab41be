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

#include "imad/features.hpp"
#include "imad/jsonl.hpp"

namespace imad::forest {

using features::FeatureRow;
using features::kFeatureCount;

/// Labels are 0 (negative) and 1 (positive, "replaceable").
using Label = int;
using ClassCounts = std::array<std::int64_t, 2>;
using Proba = std::array<double, 2>;

struct ForestParams {
    int n_trees = 100;
    /// Unlimited when empty.
    std::optional<int> max_depth;
    /// Features drawn per split; 0 means ceil(sqrt(feature count)).
    int max_features = 0;
    int min_samples_leaf = 1;
    std::uint64_t seed = 0;

    friend bool operator==(const ForestParams&, const ForestParams&) = default;
};

/// Flat tree node. Leaves have feature == -1 and only `counts` set.
/// Internal nodes route x[feature] <= threshold to `left`.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    std::int32_t left = -1;
    std::int32_t right = -1;
    /// Bootstrap-weighted sample count reaching the node.
    std::int64_t n_samples = 0;
    /// n * gini(node) - n_left * gini(left) - n_right * gini(right).
    double impurity_decrease = 0.0;
    ClassCounts counts{};

    bool is_leaf() const { return feature < 0; }
    friend bool operator==(const TreeNode&, const TreeNode&) = default;
};

/// Nodes in preorder; nodes[0] is the root.
struct Tree {
    std::vector<TreeNode> nodes;

    const TreeNode& leaf_for(const FeatureRow& x) const;
    friend bool operator==(const Tree&, const Tree&) = default;
};

struct ForestModel {
    ForestParams params;  // max_features stored resolved
    std::vector<std::string> feature_names;
    std::vector<Label> classes{0, 1};
    std::vector<Tree> trees;

    friend bool operator==(const ForestModel&, const ForestModel&) = default;
};

/// Grows params.n_trees CART trees, each on its own bootstrap resample and
/// random stream. Throws ValidationError for empty or single-class data,
/// mismatched lengths, labels outside {0, 1}, non-finite values or invalid
/// params.
ForestModel train_forest(std::span<const FeatureRow> X, std::span<const Label> y, ForestParams params = {},
                         std::vector<std::string> feature_names = features::default_feature_names());

/// Mean over trees of the leaf class frequencies.
Proba predict_proba(const ForestModel& model, std::span<const double> x);
Proba predict_proba(const ForestModel& model, const FeatureRow& x);
std::vector<Proba> predict_proba(const ForestModel& model, std::span<const FeatureRow> X);

/// Impurity-decrease importances, normalized per tree, averaged, then
/// normalized to sum 1. All zeros if no tree ever split.
std::vector<double> feature_importances(const ForestModel& model);

Json to_json(const ForestModel& model);
/// Rebuilds a model from its JSON dump, checking every structural invariant.
ForestModel model_from_json(const Json& j);
void save_model(const std::filesystem::path& path, const ForestModel& model);
ForestModel load_model(const std::filesystem::path& path);

struct FoldSplit {
    std::size_t repeat = 0;
    std::size_t fold = 0;
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// k * repeats splits, repeat-major. Each repeat shuffles every class on its
/// own stream and deals its members round-robin into the k folds. Index
/// lists are sorted. Throws ValidationError when k < 2, repeats < 1 or a
/// present class has fewer than k members.
std::vector<FoldSplit> stratified_repeated_kfold(std::span<const Label> y, std::size_t k, std::size_t repeats,
                                                 std::uint64_t seed);

struct Confusion {
    std::int64_t tp = 0, fp = 0, tn = 0, fn = 0;
};

struct FoldScore {
    std::size_t repeat = 0;
    std::size_t fold = 0;
    Confusion confusion;
    double precision = 0.0;
    double recall = 0.0;
    double accuracy = 0.0;
    double f1 = 0.0;
    /// Set when the fold predicted no positives; precision is then 0.
    bool no_positive_predictions = false;
};

struct MetricSummary {
    double mean = 0.0;
    double std = 0.0;  // population
};

struct CvOptions {
    std::size_t k = 3;
    std::size_t repeats = 40;
    std::uint64_t seed = 0;
    double decision_threshold = 0.5;
    /// Record failing folds as diagnostics instead of aborting.
    bool skip_failed_folds = false;
};

struct CvReport {
    ForestParams params;
    CvOptions options;
    MetricSummary precision, recall, accuracy, f1;
    std::vector<FoldScore> folds;
    std::vector<std::string> diagnostics;
};

/// Scores a fold's predictions: positive when proba[1] >= threshold.
FoldScore score_fold(std::span<const Label> truth, std::span<const Proba> probas, double threshold);

CvReport cross_validate(std::span<const FeatureRow> X, std::span<const Label> y, const ForestParams& params,
                        const CvOptions& options = {});

Json to_json(const CvReport& report);

}  // namespace imad::forest
