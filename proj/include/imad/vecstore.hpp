// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace imad::vecstore {

enum class TableKind { utterance, context, entity, image };

TableKind parse_table_kind(std::string_view name);
std::string_view to_string(TableKind kind);

/// Immutable id-indexed embedding table. Vectors are stored exactly as
/// loaded (32-bit floats, not normalized); cosine normalizes per call.
class EmbeddingTable {
public:
    EmbeddingTable(TableKind kind, std::size_t dim);

    /// Validates and appends one row. Throws ValidationError on dimension
    /// mismatch, non-finite components or a duplicate id.
    void add(std::string id, std::span<const float> vector);

    TableKind kind() const { return kind_; }
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }

    const std::string& id(std::size_t row) const { return ids_[row]; }
    const std::vector<std::string>& ids() const { return ids_; }
    std::span<const float> vector(std::size_t row) const;
    /// Squared L2 norm of a row, accumulated in double.
    double squared_norm(std::size_t row) const { return sq_norms_[row]; }

    std::optional<std::size_t> find(std::string_view id) const;
    /// Vector for `id`; throws ValidationError naming the id when absent.
    std::span<const float> at(std::string_view id) const;

    friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b);

private:
    TableKind kind_;
    std::size_t dim_;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::vector<double> sq_norms_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Loads `*.embjsonl` (one {"id", "vector"} record per line) or
/// `*.embmanifest` ({"dim", "ids", "data_file"} beside a little-endian
/// float32 array). Dimension comes from the first row.
EmbeddingTable load_table(const std::filesystem::path& path, TableKind kind);

/// Writes the JSONL form. Floats are printed with enough digits to reload
/// bit-exactly.
void save_table_jsonl(const std::filesystem::path& path, const EmbeddingTable& table);

/// Writes a manifest plus its raw data file (`<stem>.f32` beside it).
void save_table_manifest(const std::filesystem::path& manifest_path, const EmbeddingTable& table);

/// dot(a, b) / (|a| |b|) clamped to [-1, 1]. Throws ValidationError on
/// unequal lengths or a zero vector.
double cosine(std::span<const float> a, std::span<const float> b);

struct ScoredId {
    std::string id;
    double score = 0.0;

    friend bool operator==(const ScoredId&, const ScoredId&) = default;
};

/// Cosine of a query against every table row, in table order.
struct SimilarityRow {
    std::string query_id;
    std::vector<ScoredId> scores;
};

/// The n best rows by cosine, score descending, ties by ascending id.
struct TopNResult {
    std::string query_id;
    std::size_t n_requested = 0;
    std::vector<ScoredId> ranked;
};

SimilarityRow similarity_row(std::span<const float> query, const EmbeddingTable& table,
                             std::string query_id = {});
TopNResult top_n(std::span<const float> query, const EmbeddingTable& table, std::size_t n,
                 std::string query_id = {});

/// Highest cosine of the query against any table row.
double max_cosine(std::span<const float> query, const EmbeddingTable& table);

}  // namespace imad::vecstore
