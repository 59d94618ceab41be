// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "imad/pipeline.hpp"

namespace imad::testing {

/// 40 two-turn dialogues and 16 basis-vector images. Even dialogues are
/// visual: their utterance points mostly at one image and partly at the next
/// two. Odd dialogues live in dimensions no image touches. Every visual
/// candidate has VQA records for all 16 images with a planted winner among
/// its three nearest images, and three four-class labels whose consensus is
/// fixed by a repeating pattern.
struct PlantedFixture {
    std::filesystem::path raw;     // canonical dialogues JSONL
    std::filesystem::path config;  // run.json; out_dir is <root>/<out>
    std::vector<pipeline::FinalSample> expected;
};

inline constexpr std::size_t kPlantedDialogues = 40;
inline constexpr std::size_t kPlantedImages = 16;

/// Writes every input file under `root`. The run config sends outputs to
/// `root / out`.
PlantedFixture write_planted_fixture(const std::filesystem::path& root, const std::string& out = "out");

/// CLI steps that rebuild the dataset from the fixture, in order.
std::vector<std::string> planted_steps();

/// Runs every step through the CLI binary with outputs in `out_dir`.
/// Returns an empty string on success, else the failing step and its log.
std::string run_planted_pipeline(const std::filesystem::path& cli, const PlantedFixture& fixture,
                                 const std::filesystem::path& out_dir);

}  // namespace imad::testing
