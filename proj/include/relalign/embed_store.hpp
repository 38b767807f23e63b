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

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "relalign/error.hpp"

namespace relalign {

enum class Modality { kImage, kText };

inline std::string_view
modality_name(Modality m) {
    return m == Modality::kImage ? "image" : "text";
}

inline Modality
parse_modality(std::string_view name) {
    if (name == "image") {
        return Modality::kImage;
    }
    if (name == "text") {
        return Modality::kText;
    }
    throw Error(ErrorCode::kParseError, "unknown modality '" + std::string(name) + "'");
}

/// Dot product and L2 norm in double precision. Every similarity in the
/// library goes through these two so that equal inputs give equal bits.
inline double
dot(std::span<const float> a, std::span<const float> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

inline double
l2_norm(std::span<const float> a) {
    return std::sqrt(dot(a, a));
}

/// Immutable N x dim matrix of embeddings of one modality with unique IDs.
///
/// Construction validates every record: finite entries, no all-zero rows,
/// unique IDs, and a payload of exactly N * dim floats.
class EmbeddingStore {
 public:
    EmbeddingStore() = default;

    EmbeddingStore(Modality modality,
                   std::uint32_t dim,
                   std::vector<std::string> ids,
                   std::vector<float> data)
        : modality_(modality), dim_(dim), ids_(std::move(ids)), data_(std::move(data)) {
        if (dim_ == 0 && !ids_.empty()) {
            throw Error(ErrorCode::kMalformedHeader, "dim must be positive");
        }
        if (data_.size() != ids_.size() * dim_) {
            std::size_t first_bad = dim_ == 0 ? 0 : data_.size() / dim_;
            throw Error(ErrorCode::kDimensionMismatch,
                        "payload holds " + std::to_string(data_.size()) + " floats, expected " +
                            std::to_string(ids_.size() * dim_),
                        first_bad);
        }
        index_.reserve(ids_.size());
        for (std::size_t i = 0; i < ids_.size(); ++i) {
            auto r = row(i);
            bool all_zero = true;
            for (float v : r) {
                if (!std::isfinite(v)) {
                    throw Error(ErrorCode::kNonFiniteValue, "", i);
                }
                all_zero = all_zero && v == 0.0f;
            }
            if (all_zero) {
                throw Error(ErrorCode::kZeroVector, "", i);
            }
            if (!index_.emplace(ids_[i], i).second) {
                throw Error(ErrorCode::kDuplicateId, "id '" + ids_[i] + "'", i);
            }
        }
    }

    Modality
    modality() const noexcept {
        return modality_;
    }

    std::uint32_t
    dim() const noexcept {
        return dim_;
    }

    std::size_t
    size() const noexcept {
        return ids_.size();
    }

    bool
    empty() const noexcept {
        return ids_.empty();
    }

    std::span<const float>
    row(std::size_t i) const {
        return {data_.data() + i * dim_, dim_};
    }

    const std::string&
    id(std::size_t i) const {
        return ids_[i];
    }

    const std::vector<std::string>&
    ids() const noexcept {
        return ids_;
    }

    std::span<const float>
    data() const noexcept {
        return data_;
    }

    std::optional<std::size_t>
    find(std::string_view id) const {
        auto it = index_.find(std::string(id));
        if (it == index_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::size_t
    index_of(std::string_view id) const {
        auto pos = find(id);
        if (!pos) {
            throw Error(ErrorCode::kUnknownRecord, "id '" + std::string(id) + "'");
        }
        return *pos;
    }

 private:
    Modality modality_ = Modality::kImage;
    std::uint32_t dim_ = 0;
    std::vector<std::string> ids_;
    std::vector<float> data_;
    std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline constexpr std::array<char, 4> kMagic = {'E', 'M', 'B', '1'};

inline std::uint32_t
read_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void
write_u32_le(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff),
                           static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff),
                           static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

inline std::string
ids_path(const std::filesystem::path& path) {
    return path.string() + ".ids";
}

}  // namespace detail

/// Writes `store` as an EMB1 file plus its `<path>.ids` sidecar.
inline void
save_store(const std::filesystem::path& path, const EmbeddingStore& store) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "' for writing");
    }
    out.write(detail::kMagic.data(), 4);
    detail::write_u32_le(out, static_cast<std::uint32_t>(store.size()));
    detail::write_u32_le(out, store.dim());
    for (float v : store.data()) {
        auto bits = std::bit_cast<std::uint32_t>(v);
        detail::write_u32_le(out, bits);
    }
    if (!out) {
        throw Error(ErrorCode::kIoError, "write failed for '" + path.string() + "'");
    }

    std::ofstream ids(detail::ids_path(path), std::ios::trunc);
    if (!ids) {
        throw Error(ErrorCode::kIoError, "cannot open '" + detail::ids_path(path) + "'");
    }
    for (const auto& id : store.ids()) {
        if (id.find('\n') != std::string::npos) {
            throw Error(ErrorCode::kParseError, "id contains a newline");
        }
        ids << id << '\n';
    }
}

/// Reads and validates an EMB1 file and its sidecar.
inline EmbeddingStore
load_store(const std::filesystem::path& path,
           Modality expected_modality,
           std::optional<std::uint32_t> expected_dim = std::nullopt) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::kIoError, "cannot open '" + path.string() + "'");
    }
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (bytes.size() < 12 || std::memcmp(bytes.data(), detail::kMagic.data(), 4) != 0) {
        throw Error(ErrorCode::kMalformedHeader, "'" + path.string() + "' is not an EMB1 file");
    }
    const std::uint32_t count = detail::read_u32_le(bytes.data() + 4);
    const std::uint32_t dim = detail::read_u32_le(bytes.data() + 8);
    if (count > 0 && dim == 0) {
        throw Error(ErrorCode::kMalformedHeader, "dim is zero with nonzero count");
    }
    if (expected_dim && count > 0 && dim != *expected_dim) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "dim " + std::to_string(dim) + " != expected " + std::to_string(*expected_dim),
                    0);
    }

    const std::size_t payload = bytes.size() - 12;
    const std::size_t floats = static_cast<std::size_t>(count) * dim;
    if (payload != floats * 4) {
        std::size_t complete = dim == 0 ? 0 : payload / (4 * static_cast<std::size_t>(dim));
        throw Error(ErrorCode::kDimensionMismatch,
                    "payload of " + std::to_string(payload) + " bytes does not hold " +
                        std::to_string(count) + " x " + std::to_string(dim) + " floats",
                    complete);
    }
    std::vector<float> data(floats);
    for (std::size_t i = 0; i < floats; ++i) {
        data[i] = std::bit_cast<float>(detail::read_u32_le(bytes.data() + 12 + 4 * i));
    }

    std::vector<std::string> ids;
    ids.reserve(count);
    std::ifstream ids_in(detail::ids_path(path));
    if (!ids_in && count > 0) {
        throw Error(ErrorCode::kIoError, "missing id sidecar '" + detail::ids_path(path) + "'");
    }
    for (std::string line; std::getline(ids_in, line);) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        ids.push_back(std::move(line));
    }
    if (ids.size() != count) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "sidecar has " + std::to_string(ids.size()) + " ids, header says " +
                        std::to_string(count),
                    std::min<std::size_t>(ids.size(), count));
    }
    return EmbeddingStore(expected_modality, dim, std::move(ids), std::move(data));
}

/// Returns a copy with every row scaled to unit L2 norm.
inline EmbeddingStore
unit_normalize(const EmbeddingStore& store) {
    std::vector<float> data(store.data().begin(), store.data().end());
    const std::size_t dim = store.dim();
    for (std::size_t i = 0; i < store.size(); ++i) {
        const double norm = l2_norm(store.row(i));
        for (std::size_t j = 0; j < dim; ++j) {
            data[i * dim + j] = static_cast<float>(static_cast<double>(data[i * dim + j]) / norm);
        }
    }
    return EmbeddingStore(store.modality(), store.dim(), store.ids(), std::move(data));
}

}  // namespace relalign
