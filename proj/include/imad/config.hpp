// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "imad/forest.hpp"
#include "imad/jsonl.hpp"

namespace imad {

/// Half-open probability interval [lo, hi).
struct Band {
    double lo = 0.0;
    double hi = 1.0;
};

/// Settings shared by every CLI subcommand. Loaded from JSON or TOML:
///
///   seed = 7
///   out_dir = "run"
///   [paths]      dialogues = "...", image_embeddings = "...", ...
///   [features]   tau
///   [forest]     n_trees, max_depth, max_features, min_samples_leaf
///   [cv]         k, repeats
///   [select]     decision_threshold, band = [lo, hi]
///   [match]      n, sweep_ns
///   [eval]       bootstrap_resamples
///   [corpus]     min_context_turns, sample_n
///   [annotation] raters_per_item
///
/// Unknown keys are rejected.
struct RunConfig {
    std::optional<std::uint64_t> seed;
    std::filesystem::path out_dir = ".";
    std::map<std::string, std::filesystem::path> paths;

    double tau = 0.3;
    forest::ForestParams forest;
    std::size_t cv_k = 3;
    std::size_t cv_repeats = 40;
    double decision_threshold = 0.5;
    std::optional<Band> band;
    std::size_t n = 10;
    std::vector<std::size_t> sweep_ns{1, 5, 10, 15, 50};
    std::size_t bootstrap_resamples = 1000;
    std::size_t min_context_turns = 1;
    std::size_t sample_n = 200;
    std::size_t raters_per_item = 3;

    /// Throws ValidationError for out-of-range values.
    void validate() const;

    /// The seed, or ValidationError when none was configured.
    std::uint64_t require_seed() const;

    /// Explicit path for `name`, else `out_dir / <default file name>` for
    /// artifacts the pipeline writes itself. Inputs with no default (such as
    /// embedding tables) throw ValidationError when unset.
    std::filesystem::path path(std::string_view name) const;
};

/// Logical path names and their default file names under out_dir. An empty
/// default marks an external input that must be configured.
const std::vector<std::pair<std::string_view, std::string_view>>& known_paths();

RunConfig config_from_json(const Json& j);
/// Dispatches on extension: `.toml` is parsed as TOML, anything else as JSON.
RunConfig load_config(const std::filesystem::path& path);
Json to_json(const RunConfig& config);

}  // namespace imad
