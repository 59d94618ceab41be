// Copyright 2026 The IMAD Authors
// SPDX-License-Identifier: Apache-2.0

#include "imad/jsonl.hpp"

#include <fstream>
#include <sstream>
#include <system_error>

#include "imad/error.hpp"

namespace imad {

namespace {

bool is_blank(std::string_view line) {
    return line.find_first_not_of(" \t\r") == std::string_view::npos;
}

}  // namespace

void for_each_jsonl(std::istream& in, const std::function<void(const Json&, std::size_t)>& on_record) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (is_blank(line)) continue;
        Json record;
        try {
            record = Json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ValidationError(std::string("malformed JSON: ") + e.what(), line_no);
        }
        if (!record.is_object()) throw ValidationError("record is not a JSON object", line_no);
        on_record(record, line_no);
    }
    if (in.bad()) throw IoError("read failure after line " + std::to_string(line_no));
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const Json&, std::size_t)>& on_record) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        for_each_jsonl(in, on_record);
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) throw IoError("write failure on " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    write_file(path, out);
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) throw IoError("read failure on " + path.string());
    return buf.str();
}

const Json& require_field(const Json& record, std::string_view field, std::size_t line) {
    auto it = record.find(field);
    if (it == record.end()) throw ValidationError("missing field \"" + std::string(field) + "\"", line);
    return *it;
}

std::string require_string(const Json& record, std::string_view field, std::size_t line) {
    const auto& value = require_field(record, field, line);
    if (!value.is_string()) throw ValidationError("field \"" + std::string(field) + "\" must be a string", line);
    return value.get<std::string>();
}

}  // namespace imad
