// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/forest.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "imad/error.hpp"
#include "imad/parallel.hpp"
#include "imad/rng.hpp"

namespace imad::forest {

namespace {

using i128 = __int128;

double gini_mass(const ClassCounts& c) {
    const auto n = c[0] + c[1];
    return n == 0 ? 0.0 : static_cast<double>(c[0] * c[0] + c[1] * c[1]) / static_cast<double>(n);
}

// Split quality PL/nL + PR/nR (sum of squared class counts over size, per
// side), kept as an exact fraction. Larger is better; it differs from the
// weighted child Gini impurity only by a constant per node.
struct SplitScore {
    i128 num = 0;
    i128 den = 1;
    int feature = -1;
    double threshold = 0.0;
    ClassCounts left{}, right{};
};

bool better(const SplitScore& a, const SplitScore& b) {
    if (b.feature < 0) return true;
    const i128 lhs = a.num * b.den, rhs = b.num * a.den;
    if (lhs != rhs) return lhs > rhs;
    if (a.feature != b.feature) return a.feature < b.feature;
    return a.threshold < b.threshold;
}

struct Pending {
    std::vector<std::uint32_t> samples;
    int depth = 0;
    std::int32_t parent = -1;
    bool is_left = false;
};

class TreeBuilder {
public:
    TreeBuilder(std::span<const FeatureRow> X, std::span<const Label> y, const ForestParams& params, Rng& rng,
                const std::vector<std::int64_t>& weights)
        : X_(X), y_(y), params_(params), rng_(rng), w_(weights) {}

    Tree build(std::vector<std::uint32_t> root_samples) {
        Tree tree;
        std::vector<Pending> stack;
        stack.push_back({std::move(root_samples), 0, -1, false});
        while (!stack.empty()) {
            Pending p = std::move(stack.back());
            stack.pop_back();

            TreeNode node;
            for (auto i : p.samples) node.counts[y_[i]] += w_[i];
            node.n_samples = node.counts[0] + node.counts[1];
            const auto id = static_cast<std::int32_t>(tree.nodes.size());
            if (p.parent >= 0) (p.is_left ? tree.nodes[p.parent].left : tree.nodes[p.parent].right) = id;

            std::optional<SplitScore> split;
            const bool pure = node.counts[0] == 0 || node.counts[1] == 0;
            const bool depth_ok = !params_.max_depth || p.depth < *params_.max_depth;
            if (!pure && depth_ok && node.n_samples >= 2 * params_.min_samples_leaf) split = find_split(p.samples, node);

            if (!split) {
                tree.nodes.push_back(node);
                continue;
            }
            node.feature = split->feature;
            node.threshold = split->threshold;
            const double decrease = gini_mass(split->left) + gini_mass(split->right) - gini_mass(node.counts);
            node.impurity_decrease = std::max(0.0, decrease);
            tree.nodes.push_back(node);

            std::vector<std::uint32_t> left, right;
            for (auto i : p.samples) (X_[i][split->feature] <= split->threshold ? left : right).push_back(i);
            // Right is pushed first so the left subtree is emitted next (preorder).
            stack.push_back({std::move(right), p.depth + 1, id, false});
            stack.push_back({std::move(left), p.depth + 1, id, true});
        }
        return tree;
    }

private:
    std::optional<SplitScore> find_split(const std::vector<std::uint32_t>& samples, const TreeNode& node) {
        std::array<int, kFeatureCount> order;
        std::iota(order.begin(), order.end(), 0);
        rng_.shuffle(std::span<int>(order));

        SplitScore best;
        int visited = 0;
        std::vector<std::pair<double, std::uint32_t>> values;
        for (int f : order) {
            if (visited == params_.max_features) break;
            values.clear();
            for (auto i : samples) values.emplace_back(X_[i][f], i);
            std::sort(values.begin(), values.end());
            if (values.front().first == values.back().first) continue;  // constant here; does not count
            ++visited;

            ClassCounts left{};
            for (std::size_t k = 0; k + 1 < values.size(); ++k) {
                const auto i = values[k].second;
                left[y_[i]] += w_[i];
                const double a = values[k].first, b = values[k + 1].first;
                if (a == b) continue;
                const ClassCounts right{node.counts[0] - left[0], node.counts[1] - left[1]};
                const auto nl = left[0] + left[1], nr = right[0] + right[1];
                if (nl < params_.min_samples_leaf || nr < params_.min_samples_leaf) continue;

                SplitScore s;
                const i128 pl = i128(left[0]) * left[0] + i128(left[1]) * left[1];
                const i128 pr = i128(right[0]) * right[0] + i128(right[1]) * right[1];
                s.num = pl * nr + pr * nl;
                s.den = i128(nl) * nr;
                s.feature = f;
                s.threshold = a + (b - a) / 2;
                if (!(s.threshold < b) || !std::isfinite(s.threshold)) s.threshold = a;
                s.left = left;
                s.right = right;
                if (better(s, best)) best = s;
            }
        }
        if (best.feature < 0) return std::nullopt;
        return best;
    }

    std::span<const FeatureRow> X_;
    std::span<const Label> y_;
    const ForestParams& params_;
    Rng& rng_;
    const std::vector<std::int64_t>& w_;
};

void validate_params(const ForestParams& p, std::size_t n_features) {
    if (p.n_trees < 1) throw ValidationError("n_trees must be at least 1");
    if (p.max_depth && *p.max_depth < 1) throw ValidationError("max_depth must be at least 1");
    if (p.max_features < 0 || static_cast<std::size_t>(p.max_features) > n_features)
        throw ValidationError("max_features must lie in [1, " + std::to_string(n_features) + "]");
    if (p.min_samples_leaf < 1) throw ValidationError("min_samples_leaf must be at least 1");
}

void check_row(std::span<const double> x, std::size_t n_features) {
    if (x.size() != n_features)
        throw ValidationError("expected " + std::to_string(n_features) + " features, got " + std::to_string(x.size()));
    for (double v : x)
        if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
}

Json node_to_json(const Tree& tree, std::size_t id) {
    const auto& n = tree.nodes[id];
    if (n.is_leaf()) return Json{{"counts", {n.counts[0], n.counts[1]}}};
    return Json{{"feature", n.feature},
                {"threshold", n.threshold},
                {"n_samples", n.n_samples},
                {"impurity_decrease", n.impurity_decrease},
                {"left", node_to_json(tree, n.left)},
                {"right", node_to_json(tree, n.right)}};
}

std::int64_t require_int(const Json& j, std::string_view field, std::int64_t min) {
    if (!j.contains(field)) throw ValidationError("model: missing \"" + std::string(field) + "\"");
    const auto& v = j.at(std::string(field));
    if (!v.is_number_integer()) throw ValidationError("model: \"" + std::string(field) + "\" must be an integer");
    const auto x = v.get<std::int64_t>();
    if (x < min) throw ValidationError("model: \"" + std::string(field) + "\" out of range");
    return x;
}

std::int32_t node_from_json(const Json& j, std::size_t n_features, Tree& tree, int depth) {
    if (depth > 10000) throw ValidationError("model: tree too deep");
    if (!j.is_object()) throw ValidationError("model: tree node is not an object");
    const auto id = static_cast<std::int32_t>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (j.contains("counts")) {
        if (j.contains("feature")) throw ValidationError("model: node is both leaf and internal");
        const auto& c = j.at("counts");
        if (!c.is_array() || c.size() != 2 || !c[0].is_number_integer() || !c[1].is_number_integer())
            throw ValidationError("model: leaf counts must be two integers");
        TreeNode leaf;
        leaf.counts = {c[0].get<std::int64_t>(), c[1].get<std::int64_t>()};
        if (leaf.counts[0] < 0 || leaf.counts[1] < 0 || leaf.counts[0] + leaf.counts[1] == 0)
            throw ValidationError("model: leaf counts must be nonnegative with a positive sum");
        leaf.n_samples = leaf.counts[0] + leaf.counts[1];
        tree.nodes[id] = leaf;
        return id;
    }
    TreeNode node;
    node.feature = static_cast<int>(require_int(j, "feature", 0));
    if (static_cast<std::size_t>(node.feature) >= n_features) throw ValidationError("model: feature index out of range");
    if (!j.contains("threshold") || !j.at("threshold").is_number())
        throw ValidationError("model: internal node needs a numeric threshold");
    node.threshold = j.at("threshold").get<double>();
    node.n_samples = require_int(j, "n_samples", 1);
    if (!j.contains("impurity_decrease") || !j.at("impurity_decrease").is_number())
        throw ValidationError("model: internal node needs impurity_decrease");
    node.impurity_decrease = j.at("impurity_decrease").get<double>();
    if (!std::isfinite(node.threshold) || !std::isfinite(node.impurity_decrease) || node.impurity_decrease < 0)
        throw ValidationError("model: invalid threshold or impurity_decrease");
    if (!j.contains("left") || !j.contains("right")) throw ValidationError("model: internal node needs both children");
    node.left = node_from_json(j.at("left"), n_features, tree, depth + 1);
    node.right = node_from_json(j.at("right"), n_features, tree, depth + 1);
    const auto& l = tree.nodes[node.left];
    const auto& r = tree.nodes[node.right];
    node.counts = {l.counts[0] + r.counts[0], l.counts[1] + r.counts[1]};
    if (node.n_samples != node.counts[0] + node.counts[1])
        throw ValidationError("model: n_samples does not equal the sum of its leaves");
    tree.nodes[id] = node;
    return id;
}

MetricSummary summarize(const std::vector<FoldScore>& folds, double FoldScore::*metric) {
    MetricSummary s;
    if (folds.empty()) return s;
    double sum = 0;
    for (const auto& f : folds) sum += f.*metric;
    s.mean = sum / static_cast<double>(folds.size());
    double sq = 0;
    for (const auto& f : folds) sq += (f.*metric - s.mean) * (f.*metric - s.mean);
    s.std = std::sqrt(sq / static_cast<double>(folds.size()));
    return s;
}

Json params_json(const ForestParams& p) {
    return Json{{"n_trees", p.n_trees},
                {"max_depth", p.max_depth ? Json(*p.max_depth) : Json(nullptr)},
                {"max_features", p.max_features},
                {"min_samples_leaf", p.min_samples_leaf},
                {"seed", p.seed}};
}

}  // namespace

const TreeNode& Tree::leaf_for(const FeatureRow& x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i];
}

ForestModel train_forest(std::span<const FeatureRow> X, std::span<const Label> y, ForestParams params,
                         std::vector<std::string> feature_names) {
    if (X.empty()) throw ValidationError("cannot train on an empty feature matrix");
    if (X.size() != y.size()) throw ValidationError("feature rows and labels differ in length");
    if (X.size() < 2) throw ValidationError("need at least two samples to train");
    if (feature_names.size() != kFeatureCount)
        throw ValidationError("expected " + std::to_string(kFeatureCount) + " feature names");
    if (params.max_features == 0)
        params.max_features = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(kFeatureCount))));
    validate_params(params, kFeatureCount);
    bool seen[2] = {false, false};
    for (auto label : y) {
        if (label != 0 && label != 1) throw ValidationError("labels must be 0 or 1");
        seen[label] = true;
    }
    if (!seen[0] || !seen[1]) throw ValidationError("training labels hold a single class");
    for (const auto& row : X) check_row(row, kFeatureCount);
    if (X.size() > (std::size_t{1} << 31)) throw ValidationError("too many samples");

    ForestModel model;
    model.params = params;
    model.feature_names = std::move(feature_names);
    model.trees.resize(static_cast<std::size_t>(params.n_trees));
    parallel_for(model.trees.size(), [&](std::size_t t) {
        Rng rng(derive_seed(params.seed, t));
        std::vector<std::int64_t> weights(X.size(), 0);
        for (std::size_t i = 0; i < X.size(); ++i) ++weights[rng.below(X.size())];
        std::vector<std::uint32_t> samples;
        for (std::size_t i = 0; i < X.size(); ++i)
            if (weights[i] > 0) samples.push_back(static_cast<std::uint32_t>(i));
        model.trees[t] = TreeBuilder(X, y, model.params, rng, weights).build(std::move(samples));
    });
    return model;
}

Proba predict_proba(const ForestModel& model, std::span<const double> x) {
    check_row(x, model.feature_names.size());
    FeatureRow row;
    std::copy(x.begin(), x.end(), row.begin());
    Proba p{0.0, 0.0};
    for (const auto& tree : model.trees) {
        const auto& c = tree.leaf_for(row).counts;
        const double n = static_cast<double>(c[0] + c[1]);
        p[0] += static_cast<double>(c[0]) / n;
        p[1] += static_cast<double>(c[1]) / n;
    }
    const double t = static_cast<double>(model.trees.size());
    return {p[0] / t, p[1] / t};
}

Proba predict_proba(const ForestModel& model, const FeatureRow& x) {
    return predict_proba(model, std::span<const double>(x));
}

std::vector<Proba> predict_proba(const ForestModel& model, std::span<const FeatureRow> X) {
    std::vector<Proba> out(X.size());
    parallel_for(X.size(), [&](std::size_t i) { out[i] = predict_proba(model, X[i]); });
    return out;
}

std::vector<double> feature_importances(const ForestModel& model) {
    const std::size_t d = model.feature_names.size();
    std::vector<double> acc(d, 0.0);
    for (const auto& tree : model.trees) {
        std::vector<double> imp(d, 0.0);
        for (const auto& n : tree.nodes)
            if (!n.is_leaf()) imp[n.feature] += n.impurity_decrease;
        const double total = std::accumulate(imp.begin(), imp.end(), 0.0);
        if (total <= 0) continue;
        for (std::size_t f = 0; f < d; ++f) acc[f] += imp[f] / total;
    }
    const double total = std::accumulate(acc.begin(), acc.end(), 0.0);
    if (total > 0)
        for (auto& v : acc) v /= total;
    return acc;
}

Json to_json(const ForestModel& model) {
    Json trees = Json::array();
    for (const auto& t : model.trees) trees.push_back(node_to_json(t, 0));
    return Json{{"params", params_json(model.params)},
                {"classes", model.classes},
                {"feature_names", model.feature_names},
                {"trees", std::move(trees)}};
}

ForestModel model_from_json(const Json& j) {
    if (!j.is_object()) throw ValidationError("model: not a JSON object");
    for (const char* key : {"params", "classes", "feature_names", "trees"})
        if (!j.contains(key)) throw ValidationError(std::string("model: missing \"") + key + "\"");
    ForestModel m;
    const auto& p = j.at("params");
    if (!p.is_object()) throw ValidationError("model: params must be an object");
    m.params.n_trees = static_cast<int>(require_int(p, "n_trees", 1));
    if (p.contains("max_depth") && !p.at("max_depth").is_null())
        m.params.max_depth = static_cast<int>(require_int(p, "max_depth", 1));
    m.params.max_features = static_cast<int>(require_int(p, "max_features", 1));
    m.params.min_samples_leaf = static_cast<int>(require_int(p, "min_samples_leaf", 1));
    if (!p.contains("seed") || !p.at("seed").is_number_unsigned()) throw ValidationError("model: seed must be unsigned");
    m.params.seed = p.at("seed").get<std::uint64_t>();

    if (j.at("classes") != Json::array({0, 1})) throw ValidationError("model: classes must be [0, 1]");
    const auto& names = j.at("feature_names");
    if (!names.is_array()) throw ValidationError("model: feature_names must be an array");
    std::set<std::string> unique;
    for (const auto& n : names) {
        if (!n.is_string()) throw ValidationError("model: feature name is not a string");
        m.feature_names.push_back(n.get<std::string>());
        unique.insert(m.feature_names.back());
    }
    if (m.feature_names.size() != kFeatureCount || unique.size() != kFeatureCount)
        throw ValidationError("model: expected " + std::to_string(kFeatureCount) + " distinct feature names");
    validate_params(m.params, m.feature_names.size());

    const auto& trees = j.at("trees");
    if (!trees.is_array()) throw ValidationError("model: trees must be an array");
    if (trees.size() != static_cast<std::size_t>(m.params.n_trees))
        throw ValidationError("model: tree count differs from n_trees");
    for (const auto& t : trees) {
        Tree tree;
        node_from_json(t, m.feature_names.size(), tree, 0);
        m.trees.push_back(std::move(tree));
    }
    return m;
}

void save_model(const std::filesystem::path& path, const ForestModel& model) {
    write_file(path, to_json(model).dump() + "\n");
}

ForestModel load_model(const std::filesystem::path& path) {
    const auto text = read_file(path);
    Json j;
    try {
        j = Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ValidationError(path.string() + ": invalid JSON: " + e.what());
    }
    try {
        return model_from_json(j);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::vector<FoldSplit> stratified_repeated_kfold(std::span<const Label> y, std::size_t k, std::size_t repeats,
                                                 std::uint64_t seed) {
    if (k < 2) throw ValidationError("k must be at least 2");
    if (repeats < 1) throw ValidationError("repeats must be at least 1");
    if (y.empty()) throw ValidationError("cannot split an empty label vector");
    std::map<Label, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
    for (const auto& [label, members] : by_class) {
        if (members.size() < k)
            throw ValidationError("class " + std::to_string(label) + " has " + std::to_string(members.size()) +
                                  " members, fewer than k = " + std::to_string(k));
    }

    std::vector<FoldSplit> out;
    out.reserve(k * repeats);
    for (std::size_t r = 0; r < repeats; ++r) {
        Rng rng(derive_seed(seed, r));
        std::vector<std::size_t> order;
        order.reserve(y.size());
        for (auto [label, members] : by_class) {
            rng.shuffle(std::span<std::size_t>(members));
            order.insert(order.end(), members.begin(), members.end());
        }
        std::vector<std::vector<std::size_t>> tests(k);
        for (std::size_t j = 0; j < order.size(); ++j) tests[j % k].push_back(order[j]);
        for (std::size_t f = 0; f < k; ++f) {
            FoldSplit split{r, f, {}, std::move(tests[f])};
            std::sort(split.test.begin(), split.test.end());
            std::vector<char> in_test(y.size(), 0);
            for (auto i : split.test) in_test[i] = 1;
            for (std::size_t i = 0; i < y.size(); ++i)
                if (!in_test[i]) split.train.push_back(i);
            out.push_back(std::move(split));
        }
    }
    return out;
}

FoldScore score_fold(std::span<const Label> truth, std::span<const Proba> probas, double threshold) {
    if (truth.size() != probas.size()) throw ValidationError("truth and predictions differ in length");
    if (truth.empty()) throw ValidationError("cannot score an empty fold");
    FoldScore s;
    auto& c = s.confusion;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const bool predicted = probas[i][1] >= threshold;
        const bool actual = truth[i] == 1;
        if (predicted && actual) ++c.tp;
        else if (predicted) ++c.fp;
        else if (actual) ++c.fn;
        else ++c.tn;
    }
    s.no_positive_predictions = c.tp + c.fp == 0;
    s.precision = s.no_positive_predictions ? 0.0 : double(c.tp) / double(c.tp + c.fp);
    s.recall = c.tp + c.fn == 0 ? 0.0 : double(c.tp) / double(c.tp + c.fn);
    s.accuracy = double(c.tp + c.tn) / double(truth.size());
    s.f1 = c.tp == 0 ? 0.0 : 2.0 * double(c.tp) / double(2 * c.tp + c.fp + c.fn);
    return s;
}

CvReport cross_validate(std::span<const FeatureRow> X, std::span<const Label> y, const ForestParams& params,
                        const CvOptions& options) {
    if (X.size() != y.size()) throw ValidationError("feature rows and labels differ in length");
    const auto splits = stratified_repeated_kfold(y, options.k, options.repeats, options.seed);

    std::vector<std::optional<FoldScore>> scores(splits.size());
    std::vector<std::string> errors(splits.size());
    parallel_for(splits.size(), [&](std::size_t s) {
        const auto& split = splits[s];
        try {
            std::vector<FeatureRow> Xtr, Xte;
            std::vector<Label> ytr, yte;
            for (auto i : split.train) {
                Xtr.push_back(X[i]);
                ytr.push_back(y[i]);
            }
            for (auto i : split.test) {
                Xte.push_back(X[i]);
                yte.push_back(y[i]);
            }
            const auto model = train_forest(Xtr, ytr, params);
            auto score = score_fold(yte, predict_proba(model, Xte), options.decision_threshold);
            score.repeat = split.repeat;
            score.fold = split.fold;
            scores[s] = score;
        } catch (const ValidationError& e) {
            errors[s] = "repeat " + std::to_string(split.repeat) + " fold " + std::to_string(split.fold) + ": " +
                        e.what();
        }
    });

    CvReport report;
    report.params = params;
    report.options = options;
    for (std::size_t s = 0; s < splits.size(); ++s) {
        if (scores[s]) {
            report.folds.push_back(*scores[s]);
            continue;
        }
        if (!options.skip_failed_folds) throw ValidationError("cross-validation failed at " + errors[s]);
        report.diagnostics.push_back("skipped " + errors[s]);
    }
    if (report.folds.empty()) throw ValidationError("every cross-validation fold failed");
    report.precision = summarize(report.folds, &FoldScore::precision);
    report.recall = summarize(report.folds, &FoldScore::recall);
    report.accuracy = summarize(report.folds, &FoldScore::accuracy);
    report.f1 = summarize(report.folds, &FoldScore::f1);
    return report;
}

Json to_json(const CvReport& r) {
    auto summary = [](const MetricSummary& m) { return Json{{"mean", m.mean}, {"std", m.std}}; };
    Json folds = Json::array();
    for (const auto& f : r.folds) {
        folds.push_back(Json{{"repeat", f.repeat},
                             {"fold", f.fold},
                             {"tp", f.confusion.tp},
                             {"fp", f.confusion.fp},
                             {"tn", f.confusion.tn},
                             {"fn", f.confusion.fn},
                             {"precision", f.precision},
                             {"recall", f.recall},
                             {"accuracy", f.accuracy},
                             {"f1", f.f1},
                             {"no_positive_predictions", f.no_positive_predictions}});
    }
    return Json{{"params", params_json(r.params)},
                {"options",
                 {{"k", r.options.k},
                  {"repeats", r.options.repeats},
                  {"seed", r.options.seed},
                  {"decision_threshold", r.options.decision_threshold},
                  {"skip_failed_folds", r.options.skip_failed_folds}}},
                {"metrics",
                 {{"precision", summary(r.precision)},
                  {"recall", summary(r.recall)},
                  {"accuracy", summary(r.accuracy)},
                  {"f1", summary(r.f1)}}},
                {"folds", std::move(folds)},
                {"diagnostics", r.diagnostics}};
}

}  // namespace imad::forest
