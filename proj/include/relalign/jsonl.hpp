// Copyright 2026-present the relalign project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "relalign/error.hpp"

namespace relalign {

using Json = nlohmann::json;

/// Line-oriented JSON writer. One compact object per line, '\n' terminated.
class JsonlWriter {
 public:
    explicit JsonlWriter(const std::filesystem::path& path)
        : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) {
            throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
        }
    }

    void
    write(const Json& record) {
        out_ << record.dump() << '\n';
    }

    // already-serialized line, used where a field needs a fixed number format
    void
    write_raw(const std::string& line) {
        out_ << line << '\n';
    }

    void
    close() {
        out_.close();
        if (!out_) {
            throw Error(ErrorCode::kIoError, "write failed for '" + path_.string() + "'");
        }
    }

 private:
    std::filesystem::path path_;
    std::ofstream out_;
};

inline std::vector<Json>
read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
    }
    std::vector<Json> records;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line); ++line_no) {
        if (line.empty()) {
            continue;
        }
        try {
            records.push_back(Json::parse(line));
        } catch (const Json::exception& e) {
            throw Error(ErrorCode::kParseError, path.string() + ": " + e.what(), line_no);
        }
    }
    return records;
}

inline Json
read_json(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
    }
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
    }
}

inline void
write_json(const std::filesystem::path& path, const Json& value) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
    }
    out << value.dump(2) << '\n';
}

}  // namespace relalign
