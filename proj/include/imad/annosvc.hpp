// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <tuple>
#include <vector>

#include "imad/corpus.hpp"
#include "imad/error.hpp"
#include "imad/labels.hpp"
#include "imad/matcher.hpp"

namespace imad::annosvc {

class UnknownRaterError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};
class UnknownCandidateError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};
class DuplicateLabelError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};
class IllegalLabelError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};
class NoCompleteItemsError : public ValidationError {
  public:
    using ValidationError::ValidationError;
};

/// A candidate that can be handed to raters.
struct PoolItem {
    std::string candidate_id;
    std::string source;
    std::vector<corpus::Turn> context;
    std::string utterance;
    std::optional<std::string> image_id;  // set for stage-two items
};

/// stage1 serves stage1_binary tasks; stage2 serves both stage-two taxonomies.
struct TaskPool {
    std::vector<PoolItem> stage1;
    std::vector<PoolItem> stage2;

    const std::vector<PoolItem>& items(labels::Taxonomy taxonomy) const;
};

/// Every candidate goes into the stage-one pool. Candidates with a match go
/// into the stage-two pool with their selected image. Throws ValidationError
/// for a candidate whose dialogue is missing or a match with no candidate.
TaskPool build_pool(const std::vector<corpus::Candidate>& candidates, const std::vector<corpus::Dialogue>& dialogues,
                    const std::vector<matcher::MatchResult>& matches = {});

struct AnnotationTask {
    std::string candidate_id;
    labels::Taxonomy taxonomy = labels::Taxonomy::stage1_binary;
    std::vector<corpus::Turn> context;
    std::string utterance;
    std::optional<std::string> image_id;
};

Json to_json(const AnnotationTask& task);

struct SourceAgreement {
    std::string source;
    std::optional<double> kappa;  // absent when undefined for this source
    std::size_t items = 0;        // complete items used
    std::vector<std::string> excluded;  // labeled items with the wrong rater count
    std::string note;
};

struct AgreementReport {
    labels::Taxonomy taxonomy = labels::Taxonomy::stage2_four_class;
    std::size_t raters_per_item = 0;
    std::vector<SourceAgreement> sources;  // ordered by source tag
    std::optional<double> mean;            // unweighted mean of defined kappas
    std::size_t items = 0;
    std::size_t excluded = 0;
};

Json to_json(const AgreementReport& report);

/// Current time as ISO 8601 UTC with second precision.
std::string utc_now();

struct ServiceOptions {
    std::filesystem::path log_path;
    std::set<std::string> raters;
    std::size_t raters_per_item = 3;
    std::function<std::string()> clock = utc_now;
};

/// Label store backed by an append-only JSONL log. The log is replayed on
/// construction. All methods are safe to call concurrently; submissions
/// are serialized.
class AnnotationService {
  public:
    AnnotationService(TaskPool pool, ServiceOptions options);
    ~AnnotationService();
    AnnotationService(const AnnotationService&) = delete;
    AnnotationService& operator=(const AnnotationService&) = delete;

    /// Unfinished item the rater has not labeled: fewest labels first, then
    /// ascending candidate_id. Throws UnknownRaterError.
    std::optional<AnnotationTask> next_task(const std::string& rater_id, labels::Taxonomy taxonomy) const;

    /// Appends one record to the log and returns it. Throws
    /// UnknownRaterError, UnknownCandidateError, IllegalLabelError,
    /// DuplicateLabelError, or IoError when the append fails.
    labels::LabelRecord submit(const std::string& rater_id, const std::string& candidate_id, const std::string& label,
                               labels::Taxonomy taxonomy);

    /// Fleiss kappa per source over items with exactly raters_per_item
    /// labels. Throws NoCompleteItemsError when there are none.
    AgreementReport agreement(labels::Taxonomy taxonomy) const;

    /// Records sorted for export; all taxonomies when none is given.
    std::vector<labels::LabelRecord> export_labels(std::optional<labels::Taxonomy> taxonomy = std::nullopt) const;
    Json progress() const;

    std::size_t log_size() const;
    bool has_rater(const std::string& rater_id) const { return options_.raters.contains(rater_id); }

  private:
    using Key = std::pair<labels::Taxonomy, std::string>;

    const PoolItem* find_item(labels::Taxonomy taxonomy, const std::string& candidate_id) const;
    void index(const labels::LabelRecord& record);

    TaskPool pool_;
    ServiceOptions options_;
    std::map<Key, const PoolItem*> items_;
    mutable std::shared_mutex mutex_;
    std::vector<labels::LabelRecord> records_;
    std::map<Key, std::vector<std::size_t>> by_item_;
    std::set<std::tuple<labels::Taxonomy, std::string, std::string>> seen_;
    int fd_ = -1;
};

/// Labels JSONL text for the given records, one compact object per line.
std::string labels_text(const std::vector<labels::LabelRecord>& records);

/// Agreement computed from an exported labels list, for checking that
/// export and import preserve the live report.
AgreementReport agreement_from_records(const TaskPool& pool, const std::vector<labels::LabelRecord>& records,
                                       labels::Taxonomy taxonomy, std::size_t raters_per_item);

/// HTTP front end.
///   GET  /task?rater=..&taxonomy=..  200 task JSON | 204 | 400 | 403
///   POST /label                       201 | 400 | 403 | 404 | 409 | 422
///   GET  /agreement?taxonomy=..       200 report | 400 | 422
///   GET  /export[?taxonomy=..]        200 labels JSONL
///   GET  /progress                    200 counts
/// Errors carry {"error": message}. Static files are served from
/// static_dir when given.
class HttpServer {
  public:
    explicit HttpServer(AnnotationService& service, std::optional<std::filesystem::path> static_dir = std::nullopt);
    ~HttpServer();

    /// Binds host:port; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port);
    /// Serves until stop() is called.
    void listen();
    void stop();

  private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace imad::annosvc
