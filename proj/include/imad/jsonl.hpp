// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace imad {

/// Insertion-ordered JSON, so written records keep their documented field order.
using Json = nlohmann::ordered_json;

/// Calls on_record(record, line_number) for every non-blank line of a JSONL
/// stream. Parse failures raise ValidationError carrying the line number.
void for_each_jsonl(std::istream& in, const std::function<void(const Json&, std::size_t)>& on_record);
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& on_record);

/// Writes one compact record per line (LF). The file is written to a
/// sibling temp file and renamed into place.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

/// Atomically replaces `path` with `contents`.
void write_file(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

/// Typed field accessors that turn nlohmann type errors into ValidationError
/// naming the field.
std::string require_string(const Json& record, std::string_view field, std::size_t line);
const Json& require_field(const Json& record, std::string_view field, std::size_t line);

}  // namespace imad
