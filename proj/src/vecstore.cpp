// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/vecstore.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "imad/error.hpp"
#include "imad/jsonl.hpp"

namespace imad::vecstore {

namespace {

float from_little_endian(const char* bytes) {
    std::uint32_t bits;
    std::memcpy(&bits, bytes, sizeof bits);
    if constexpr (std::endian::native == std::endian::big) {
        bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) | (bits >> 24);
    }
    return std::bit_cast<float>(bits);
}

void to_little_endian(float value, char* out) {
    auto bits = std::bit_cast<std::uint32_t>(value);
    if constexpr (std::endian::native == std::endian::big) {
        bits = ((bits & 0xFF) << 24) | ((bits & 0xFF00) << 8) | ((bits >> 8) & 0xFF00) | (bits >> 24);
    }
    std::memcpy(out, &bits, sizeof bits);
}

double sum_of_squares(std::span<const float> v) {
    double sum = 0.0;
    for (float x : v) sum += static_cast<double>(x) * x;
    return sum;
}

double dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
    return sum;
}

// sqrt of the product, not the product of square roots: sqrt(x * x) == x
// exactly in IEEE arithmetic, so cosine(v, v) is exactly 1.
double cosine_with_norms(std::span<const float> a, double sq_norm_a, std::span<const float> b, double sq_norm_b) {
    return std::clamp(dot(a, b) / std::sqrt(sq_norm_a * sq_norm_b), -1.0, 1.0);
}

std::vector<float> parse_vector(const Json& value, std::size_t line) {
    if (!value.is_array()) throw ValidationError("\"vector\" must be an array", line);
    std::vector<float> out;
    out.reserve(value.size());
    for (const auto& x : value) {
        if (!x.is_number()) throw ValidationError("vector component is not a number", line);
        out.push_back(static_cast<float>(x.get<double>()));
    }
    return out;
}

EmbeddingTable load_jsonl(const std::filesystem::path& path, TableKind kind) {
    std::optional<EmbeddingTable> table;
    for_each_jsonl(path, [&](const Json& j, std::size_t line) {
        auto id = require_string(j, "id", line);
        auto vec = parse_vector(require_field(j, "vector", line), line);
        if (!table) {
            if (vec.empty()) throw ValidationError("first vector is empty", line);
            table.emplace(kind, vec.size());
        }
        try {
            table->add(std::move(id), vec);
        } catch (const ValidationError& e) {
            throw ValidationError(e.what(), line);
        }
    });
    if (!table) throw ValidationError(path.string() + ": embedding file has no rows");
    return std::move(*table);
}

EmbeddingTable load_manifest(const std::filesystem::path& path, TableKind kind) {
    Json manifest;
    try {
        manifest = Json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": malformed manifest: " + e.what());
    }
    const auto& dim_field = require_field(manifest, "dim", 1);
    if (!dim_field.is_number_unsigned() || dim_field.get<std::size_t>() == 0)
        throw ValidationError(path.string() + ": \"dim\" must be a positive integer");
    const auto dim = dim_field.get<std::size_t>();
    const auto& ids = require_field(manifest, "ids", 1);
    if (!ids.is_array() || ids.empty()) throw ValidationError(path.string() + ": \"ids\" must be a non-empty array");
    const auto data_path = path.parent_path() / require_string(manifest, "data_file", 1);

    const auto raw = read_file(data_path);
    const auto expected = dim * ids.size() * sizeof(float);
    if (raw.size() != expected)
        throw ValidationError(data_path.string() + ": expected " + std::to_string(expected) + " bytes, found " +
                              std::to_string(raw.size()));

    EmbeddingTable table(kind, dim);
    std::vector<float> row(dim);
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (!ids[r].is_string()) throw ValidationError(path.string() + ": id at position " + std::to_string(r) + " is not a string");
        for (std::size_t c = 0; c < dim; ++c) row[c] = from_little_endian(raw.data() + (r * dim + c) * sizeof(float));
        table.add(ids[r].get<std::string>(), row);
    }
    return table;
}

void append_float(std::string& out, float value) {
    // JSON readers take "-0" as the integer 0 and drop the sign.
    if (value == 0.0f && std::signbit(value)) {
        out += "-0.0";
        return;
    }
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, value);
    out.append(buf, end);
}

}  // namespace

TableKind parse_table_kind(std::string_view name) {
    if (name == "utterance") return TableKind::utterance;
    if (name == "context") return TableKind::context;
    if (name == "entity") return TableKind::entity;
    if (name == "image") return TableKind::image;
    throw ValidationError("unknown embedding table kind \"" + std::string(name) + "\"");
}

std::string_view to_string(TableKind kind) {
    switch (kind) {
        case TableKind::utterance: return "utterance";
        case TableKind::context: return "context";
        case TableKind::entity: return "entity";
        case TableKind::image: return "image";
    }
    return "unknown";
}

EmbeddingTable::EmbeddingTable(TableKind kind, std::size_t dim) : kind_(kind), dim_(dim) {
    if (dim == 0) throw ValidationError("embedding dimension must be positive");
}

void EmbeddingTable::add(std::string id, std::span<const float> vector) {
    if (vector.size() != dim_)
        throw ValidationError("dimension mismatch for id " + id + ": expected " + std::to_string(dim_) + ", got " +
                              std::to_string(vector.size()));
    for (float x : vector) {
        if (!std::isfinite(x)) throw ValidationError("non-finite component in vector for id " + id);
    }
    if (index_.contains(id)) throw ValidationError("duplicate id " + id);
    index_.emplace(id, ids_.size());
    data_.insert(data_.end(), vector.begin(), vector.end());
    sq_norms_.push_back(sum_of_squares(vector));
    ids_.push_back(std::move(id));
}

std::span<const float> EmbeddingTable::vector(std::size_t row) const {
    return std::span<const float>(data_).subspan(row * dim_, dim_);
}

std::optional<std::size_t> EmbeddingTable::find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::span<const float> EmbeddingTable::at(std::string_view id) const {
    auto row = find(id);
    if (!row) throw ValidationError("no " + std::string(to_string(kind_)) + " embedding for id " + std::string(id));
    return vector(*row);
}

bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
    if (a.kind_ != b.kind_ || a.dim_ != b.dim_ || a.ids_ != b.ids_ || a.data_.size() != b.data_.size()) return false;
    // Bitwise, so -0.0f and 0.0f count as different.
    return std::memcmp(a.data_.data(), b.data_.data(), a.data_.size() * sizeof(float)) == 0;
}

EmbeddingTable load_table(const std::filesystem::path& path, TableKind kind) {
    const auto ext = path.extension();
    if (ext == ".embjsonl") return load_jsonl(path, kind);
    if (ext == ".embmanifest") return load_manifest(path, kind);
    throw ValidationError(path.string() + ": unsupported embedding file extension (want .embjsonl or .embmanifest)");
}

void save_table_jsonl(const std::filesystem::path& path, const EmbeddingTable& table) {
    std::string out;
    for (std::size_t r = 0; r < table.size(); ++r) {
        out += "{\"id\":";
        out += Json(table.id(r)).dump();
        out += ",\"vector\":[";
        const auto v = table.vector(r);
        for (std::size_t c = 0; c < v.size(); ++c) {
            if (c) out += ',';
            append_float(out, v[c]);
        }
        out += "]}\n";
    }
    write_file(path, out);
}

void save_table_manifest(const std::filesystem::path& manifest_path, const EmbeddingTable& table) {
    auto data_name = manifest_path.stem().string() + ".f32";
    std::string raw(table.size() * table.dim() * sizeof(float), '\0');
    for (std::size_t r = 0; r < table.size(); ++r) {
        const auto v = table.vector(r);
        for (std::size_t c = 0; c < v.size(); ++c)
            to_little_endian(v[c], raw.data() + (r * table.dim() + c) * sizeof(float));
    }
    write_file(manifest_path.parent_path() / data_name, raw);
    Json manifest{{"dim", table.dim()}, {"ids", table.ids()}, {"data_file", data_name}};
    write_file(manifest_path, manifest.dump() + "\n");
}

double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size())
        throw ValidationError("cosine of vectors with different lengths (" + std::to_string(a.size()) + " vs " +
                              std::to_string(b.size()) + ")");
    const double na = sum_of_squares(a);
    const double nb = sum_of_squares(b);
    if (na == 0.0 || nb == 0.0) throw ValidationError("cosine is undefined for a zero vector");
    return cosine_with_norms(a, na, b, nb);
}

SimilarityRow similarity_row(std::span<const float> query, const EmbeddingTable& table, std::string query_id) {
    if (query.size() != table.dim())
        throw ValidationError("query dimension " + std::to_string(query.size()) + " does not match table dimension " +
                              std::to_string(table.dim()));
    const double qn = sum_of_squares(query);
    if (qn == 0.0) throw ValidationError("cosine is undefined for a zero query vector" +
                                         (query_id.empty() ? std::string() : " (" + query_id + ")"));
    if (table.empty()) throw ValidationError("query against an empty " + std::string(to_string(table.kind())) + " table");
    SimilarityRow row{std::move(query_id), {}};
    row.scores.reserve(table.size());
    for (std::size_t r = 0; r < table.size(); ++r) {
        if (table.squared_norm(r) == 0.0) throw ValidationError("cosine is undefined for zero vector " + table.id(r));
        row.scores.push_back({table.id(r), cosine_with_norms(query, qn, table.vector(r), table.squared_norm(r))});
    }
    return row;
}

TopNResult top_n(std::span<const float> query, const EmbeddingTable& table, std::size_t n, std::string query_id) {
    if (n == 0) throw ValidationError("top_n requires N >= 1");
    auto row = similarity_row(query, table, std::move(query_id));
    auto better = [](const ScoredId& a, const ScoredId& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.id < b.id;
    };
    const auto keep = std::min(n, row.scores.size());
    std::partial_sort(row.scores.begin(), row.scores.begin() + static_cast<std::ptrdiff_t>(keep), row.scores.end(),
                      better);
    row.scores.resize(keep);
    return {std::move(row.query_id), n, std::move(row.scores)};
}

double max_cosine(std::span<const float> query, const EmbeddingTable& table) {
    auto row = similarity_row(query, table);
    double best = -1.0;
    for (const auto& s : row.scores) best = std::max(best, s.score);
    return best;
}

}  // namespace imad::vecstore
