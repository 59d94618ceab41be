// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/config.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "imad/error.hpp"
#include "toml.hpp"

namespace imad {

namespace {

Json toml_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        Json out = Json::object();
        for (const auto& [k, v] : *t) out[std::string(k.str())] = toml_to_json(v);
        return out;
    }
    if (const auto* a = node.as_array()) {
        Json out = Json::array();
        for (const auto& v : *a) out.push_back(toml_to_json(v));
        return out;
    }
    if (const auto* s = node.as_string()) return Json(s->get());
    if (const auto* i = node.as_integer()) return Json(i->get());
    if (const auto* f = node.as_floating_point()) return Json(f->get());
    if (const auto* b = node.as_boolean()) return Json(b->get());
    throw ValidationError("config: dates and times are not supported");
}

void reject_unknown(const Json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) throw ValidationError("config: " + std::string(where) + " must be a table");
    for (const auto& [key, value] : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
            throw ValidationError("config: unknown key \"" + key + "\" in " + std::string(where));
    }
}

double get_double(const Json& j, std::string_view key, std::string_view where) {
    const auto& v = j.at(std::string(key));
    if (!v.is_number()) throw ValidationError("config: " + std::string(where) + "." + std::string(key) + " must be a number");
    return v.get<double>();
}

std::uint64_t get_uint(const Json& j, std::string_view key, std::string_view where) {
    const auto& v = j.at(std::string(key));
    if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
        throw ValidationError("config: " + std::string(where) + "." + std::string(key) +
                              " must be a non-negative integer");
    return v.get<std::uint64_t>();
}

int get_int(const Json& j, std::string_view key, std::string_view where) {
    const auto v = get_uint(j, key, where);
    if (v > 1'000'000'000) throw ValidationError("config: " + std::string(where) + "." + std::string(key) + " is too large");
    return static_cast<int>(v);
}

}  // namespace

const std::vector<std::pair<std::string_view, std::string_view>>& known_paths() {
    static const std::vector<std::pair<std::string_view, std::string_view>> paths{
        {"raw", ""},
        {"dialogues", "dialogues.jsonl"},
        {"candidates", "candidates.jsonl"},
        {"sample", "sample.jsonl"},
        {"utterance_embeddings", ""},
        {"context_embeddings", ""},
        {"image_embeddings", ""},
        {"entity_embeddings", ""},
        {"entities", ""},
        {"features", "features.jsonl"},
        {"stage1_labels", ""},
        {"model", "forest.json"},
        {"importances", "forest.importances.json"},
        {"cv_report", "cv_report.json"},
        {"selected", "selected.jsonl"},
        {"vqa_scores", ""},
        {"matches", "matches.jsonl"},
        {"judgments", ""},
        {"sweep", "sweep.json"},
        {"labels", ""},
        {"consensus", "consensus.jsonl"},
        {"dataset", "imad.jsonl"},
        {"stats", "imad.stats.json"},
        {"generations", ""},
        {"eval_report", "eval_report.json"},
        {"annotation_log", "labels.log.jsonl"},
        {"static_dir", ""},
    };
    return paths;
}

void RunConfig::validate() const {
    if (!(tau >= -1.0 && tau <= 1.0)) throw ValidationError("config: tau must lie in [-1, 1]");
    if (!(decision_threshold >= 0.0 && decision_threshold <= 1.0))
        throw ValidationError("config: decision_threshold must lie in [0, 1]");
    if (band && !(band->lo >= 0.0 && band->lo < band->hi && band->hi <= 1.0))
        throw ValidationError("config: band must satisfy 0 <= lo < hi <= 1");
    if (n == 0) throw ValidationError("config: match.n must be positive");
    if (sweep_ns.empty() || std::find(sweep_ns.begin(), sweep_ns.end(), 0) != sweep_ns.end())
        throw ValidationError("config: match.sweep_ns must be a non-empty list of positive integers");
    if (cv_k < 2) throw ValidationError("config: cv.k must be at least 2");
    if (cv_repeats < 1) throw ValidationError("config: cv.repeats must be at least 1");
    if (bootstrap_resamples < 1) throw ValidationError("config: eval.bootstrap_resamples must be positive");
    if (raters_per_item < 2) throw ValidationError("config: annotation.raters_per_item must be at least 2");
    if (forest.n_trees < 1) throw ValidationError("config: forest.n_trees must be at least 1");
    if (forest.max_depth && *forest.max_depth < 1) throw ValidationError("config: forest.max_depth must be at least 1");
    if (forest.max_features < 0 || forest.max_features > static_cast<int>(forest::kFeatureCount))
        throw ValidationError("config: forest.max_features must lie in [1, 5]");
    if (forest.min_samples_leaf < 1) throw ValidationError("config: forest.min_samples_leaf must be at least 1");
}

std::uint64_t RunConfig::require_seed() const {
    if (!seed) throw ValidationError("no seed configured; pass --seed or set seed in the config file");
    return *seed;
}

std::filesystem::path RunConfig::path(std::string_view name) const {
    if (auto it = paths.find(std::string(name)); it != paths.end()) return it->second;
    for (const auto& [key, file] : known_paths()) {
        if (key != name) continue;
        if (file.empty()) throw ValidationError("no path configured for \"" + std::string(name) + "\"");
        return out_dir / file;
    }
    throw ValidationError("unknown path name \"" + std::string(name) + "\"");
}

RunConfig config_from_json(const Json& j) {
    reject_unknown(j, "config",
                   {"seed", "out_dir", "paths", "features", "forest", "cv", "select", "match", "eval", "corpus",
                    "annotation"});
    RunConfig c;
    if (j.contains("seed") && !j.at("seed").is_null()) c.seed = get_uint(j, "seed", "config");
    if (j.contains("out_dir")) {
        if (!j.at("out_dir").is_string()) throw ValidationError("config: out_dir must be a string");
        c.out_dir = j.at("out_dir").get<std::string>();
    }
    if (j.contains("paths")) {
        const auto& p = j.at("paths");
        if (!p.is_object()) throw ValidationError("config: paths must be a table");
        for (const auto& [key, value] : p.items()) {
            const auto& known = known_paths();
            if (std::none_of(known.begin(), known.end(), [&](const auto& kv) { return kv.first == key; }))
                throw ValidationError("config: unknown path name \"" + key + "\"");
            if (!value.is_string()) throw ValidationError("config: paths." + key + " must be a string");
            c.paths[key] = value.get<std::string>();
        }
    }
    if (j.contains("features")) {
        const auto& s = j.at("features");
        reject_unknown(s, "features", {"tau"});
        if (s.contains("tau")) c.tau = get_double(s, "tau", "features");
    }
    if (j.contains("forest")) {
        const auto& s = j.at("forest");
        reject_unknown(s, "forest", {"n_trees", "max_depth", "max_features", "min_samples_leaf"});
        if (s.contains("n_trees")) c.forest.n_trees = get_int(s, "n_trees", "forest");
        if (s.contains("max_depth") && !s.at("max_depth").is_null()) c.forest.max_depth = get_int(s, "max_depth", "forest");
        if (s.contains("max_features")) c.forest.max_features = get_int(s, "max_features", "forest");
        if (s.contains("min_samples_leaf")) c.forest.min_samples_leaf = get_int(s, "min_samples_leaf", "forest");
    }
    if (j.contains("cv")) {
        const auto& s = j.at("cv");
        reject_unknown(s, "cv", {"k", "repeats"});
        if (s.contains("k")) c.cv_k = get_uint(s, "k", "cv");
        if (s.contains("repeats")) c.cv_repeats = get_uint(s, "repeats", "cv");
    }
    if (j.contains("select")) {
        const auto& s = j.at("select");
        reject_unknown(s, "select", {"decision_threshold", "band"});
        if (s.contains("decision_threshold")) c.decision_threshold = get_double(s, "decision_threshold", "select");
        if (s.contains("band") && !s.at("band").is_null()) {
            const auto& b = s.at("band");
            if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number())
                throw ValidationError("config: select.band must be [lo, hi]");
            c.band = Band{b[0].get<double>(), b[1].get<double>()};
        }
    }
    if (j.contains("match")) {
        const auto& s = j.at("match");
        reject_unknown(s, "match", {"n", "sweep_ns"});
        if (s.contains("n")) c.n = get_uint(s, "n", "match");
        if (s.contains("sweep_ns")) {
            const auto& ns = s.at("sweep_ns");
            if (!ns.is_array()) throw ValidationError("config: match.sweep_ns must be a list");
            c.sweep_ns.clear();
            for (const auto& v : ns) {
                if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ValidationError("config: match.sweep_ns must hold positive integers");
                c.sweep_ns.push_back(v.get<std::size_t>());
            }
        }
    }
    if (j.contains("eval")) {
        const auto& s = j.at("eval");
        reject_unknown(s, "eval", {"bootstrap_resamples"});
        if (s.contains("bootstrap_resamples")) c.bootstrap_resamples = get_uint(s, "bootstrap_resamples", "eval");
    }
    if (j.contains("corpus")) {
        const auto& s = j.at("corpus");
        reject_unknown(s, "corpus", {"min_context_turns", "sample_n"});
        if (s.contains("min_context_turns")) c.min_context_turns = get_uint(s, "min_context_turns", "corpus");
        if (s.contains("sample_n")) c.sample_n = get_uint(s, "sample_n", "corpus");
    }
    if (j.contains("annotation")) {
        const auto& s = j.at("annotation");
        reject_unknown(s, "annotation", {"raters_per_item"});
        if (s.contains("raters_per_item")) c.raters_per_item = get_uint(s, "raters_per_item", "annotation");
    }
    c.validate();
    return c;
}

RunConfig load_config(const std::filesystem::path& path) {
    const auto text = read_file(path);
    Json j;
    if (path.extension() == ".toml") {
        try {
            j = toml_to_json(toml::parse(text, path.string()));
        } catch (const toml::parse_error& e) {
            std::ostringstream os;
            os << path.string() << ": invalid TOML at line " << e.source().begin.line << ": " << e.description();
            throw ValidationError(os.str());
        }
    } else {
        try {
            j = Json::parse(text);
        } catch (const Json::parse_error& e) {
            throw ValidationError(path.string() + ": invalid JSON: " + e.what());
        }
    }
    try {
        return config_from_json(j);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

Json to_json(const RunConfig& c) {
    Json paths = Json::object();
    for (const auto& [k, v] : c.paths) paths[k] = v.string();
    return Json{{"seed", c.seed ? Json(*c.seed) : Json(nullptr)},
                {"out_dir", c.out_dir.string()},
                {"paths", paths},
                {"features", {{"tau", c.tau}}},
                {"forest",
                 {{"n_trees", c.forest.n_trees},
                  {"max_depth", c.forest.max_depth ? Json(*c.forest.max_depth) : Json(nullptr)},
                  {"max_features", c.forest.max_features},
                  {"min_samples_leaf", c.forest.min_samples_leaf}}},
                {"cv", {{"k", c.cv_k}, {"repeats", c.cv_repeats}}},
                {"select",
                 {{"decision_threshold", c.decision_threshold},
                  {"band", c.band ? Json::array({c.band->lo, c.band->hi}) : Json(nullptr)}}},
                {"match", {{"n", c.n}, {"sweep_ns", c.sweep_ns}}},
                {"eval", {{"bootstrap_resamples", c.bootstrap_resamples}}},
                {"corpus", {{"min_context_turns", c.min_context_turns}, {"sample_n", c.sample_n}}},
                {"annotation", {{"raters_per_item", c.raters_per_item}}}};
}

}  // namespace imad
