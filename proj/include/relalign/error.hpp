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

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace relalign {

enum class ErrorCode {
    kIoError,
    kMalformedHeader,
    kDimensionMismatch,
    kNonFiniteValue,
    kZeroVector,
    kDuplicateId,
    kUnknownRecord,
    kAnchorStoreMismatch,
    kDimMismatch,
    kZeroRelRep,
    kPoolTooSmall,
    kEmptyEmbeddings,
    kCandidateImageMismatch,
    kShapeMismatch,
    kSpecInvalid,
    kConfigInvalid,
    kParseError,
};

inline std::string_view
error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::kIoError:
            return "IoError";
        case ErrorCode::kMalformedHeader:
            return "MalformedHeader";
        case ErrorCode::kDimensionMismatch:
            return "DimensionMismatch";
        case ErrorCode::kNonFiniteValue:
            return "NonFiniteValue";
        case ErrorCode::kZeroVector:
            return "ZeroVector";
        case ErrorCode::kDuplicateId:
            return "DuplicateId";
        case ErrorCode::kUnknownRecord:
            return "UnknownRecord";
        case ErrorCode::kAnchorStoreMismatch:
            return "AnchorStoreMismatch";
        case ErrorCode::kDimMismatch:
            return "DimMismatch";
        case ErrorCode::kZeroRelRep:
            return "ZeroRelRep";
        case ErrorCode::kPoolTooSmall:
            return "PoolTooSmall";
        case ErrorCode::kEmptyEmbeddings:
            return "EmptyEmbeddings";
        case ErrorCode::kCandidateImageMismatch:
            return "CandidateImageMismatch";
        case ErrorCode::kShapeMismatch:
            return "ShapeMismatch";
        case ErrorCode::kSpecInvalid:
            return "SpecInvalid";
        case ErrorCode::kConfigInvalid:
            return "ConfigInvalid";
        case ErrorCode::kParseError:
            return "ParseError";
    }
    return "Unknown";
}

/// Library error. Carries a machine-checkable code and, when the failure is
/// attributable to one record, that record's index.
class Error : public std::runtime_error {
 public:
    Error(ErrorCode code, const std::string& message, std::optional<std::size_t> record = {})
        : std::runtime_error(format(code, message, record)), code_(code), record_(record) {
    }

    ErrorCode
    code() const noexcept {
        return code_;
    }

    std::optional<std::size_t>
    record() const noexcept {
        return record_;
    }

 private:
    static std::string
    format(ErrorCode code, const std::string& message, std::optional<std::size_t> record) {
        std::string out(error_code_name(code));
        if (record) {
            out += "(" + std::to_string(*record) + ")";
        }
        if (!message.empty()) {
            out += ": " + message;
        }
        return out;
    }

    ErrorCode code_;
    std::optional<std::size_t> record_;
};

/// An Error raised inside a named pipeline stage.
class StageError : public std::runtime_error {
 public:
    StageError(std::string stage, const std::exception& cause)
        : std::runtime_error("stage " + stage + ": " + cause.what()), stage_(std::move(stage)) {
        if (const auto* err = dynamic_cast<const Error*>(&cause)) {
            code_ = err->code();
        }
    }

    const std::string&
    stage() const noexcept {
        return stage_;
    }

    std::optional<ErrorCode>
    code() const noexcept {
        return code_;
    }

 private:
    std::string stage_;
    std::optional<ErrorCode> code_;
};

}  // namespace relalign
