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
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "relalign/embed_store.hpp"
#include "relalign/error.hpp"
#include "relalign/jsonl.hpp"
#include "relalign/parallel.hpp"

namespace relalign {

struct AnchorPair {
    std::string image_id;
    std::string text_id;

    bool
    operator==(const AnchorPair&) const = default;
};

/// Where an anchor set came from. Written as the header of anchor manifests.
struct AnchorSource {
    std::string strategy = "manual";
    std::uint64_t seed = 0;
    std::string cluster_modality;
    std::size_t pool_size = 0;
    std::uint32_t kmeans_iters = 0;
    std::uint32_t kmeans_restarts = 0;
    bool normalized = false;
    std::vector<std::string> warnings;

    bool
    operator==(const AnchorSource&) const = default;
};

/// Ordered list of paired anchors. Neither image nor text IDs repeat.
class AnchorSet {
 public:
    AnchorSet() = default;

    explicit AnchorSet(std::vector<AnchorPair> pairs, AnchorSource source = {})
        : pairs_(std::move(pairs)), source_(std::move(source)) {
        std::unordered_set<std::string> images;
        std::unordered_set<std::string> texts;
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            if (!images.insert(pairs_[i].image_id).second) {
                throw Error(ErrorCode::kDuplicateId, "anchor image '" + pairs_[i].image_id + "'", i);
            }
            if (!texts.insert(pairs_[i].text_id).second) {
                throw Error(ErrorCode::kDuplicateId, "anchor text '" + pairs_[i].text_id + "'", i);
            }
        }
    }

    std::size_t
    size() const noexcept {
        return pairs_.size();
    }

    const std::vector<AnchorPair>&
    pairs() const noexcept {
        return pairs_;
    }

    const AnchorPair&
    operator[](std::size_t i) const {
        return pairs_[i];
    }

    const AnchorSource&
    source() const noexcept {
        return source_;
    }

    bool
    operator==(const AnchorSet&) const = default;

 private:
    std::vector<AnchorPair> pairs_;
    AnchorSource source_;
};

/// The anchor embeddings of one modality, resolved out of a store, with
/// their norms precomputed. Row i belongs to anchor i.
class AnchorBasis {
 public:
    AnchorBasis() = default;

    static AnchorBasis
    resolve(const AnchorSet& anchors, const EmbeddingStore& store) {
        AnchorBasis basis;
        basis.modality_ = store.modality();
        basis.dim_ = store.dim();
        basis.rows_.reserve(anchors.size() * store.dim());
        basis.norms_.reserve(anchors.size());
        for (std::size_t i = 0; i < anchors.size(); ++i) {
            const auto& id = store.modality() == Modality::kImage ? anchors[i].image_id
                                                                  : anchors[i].text_id;
            auto pos = store.find(id);
            if (!pos) {
                throw Error(ErrorCode::kAnchorStoreMismatch,
                            "anchor " + std::string(modality_name(store.modality())) + " '" + id +
                                "' not in store",
                            i);
            }
            auto row = store.row(*pos);
            basis.rows_.insert(basis.rows_.end(), row.begin(), row.end());
            basis.norms_.push_back(l2_norm(row));
        }
        return basis;
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
        return norms_.size();
    }

    std::span<const float>
    row(std::size_t i) const {
        return {rows_.data() + i * dim_, dim_};
    }

    double
    norm(std::size_t i) const {
        return norms_[i];
    }

 private:
    Modality modality_ = Modality::kImage;
    std::uint32_t dim_ = 0;
    std::vector<float> rows_;
    std::vector<double> norms_;
};

/// Sparse relative representation: similarities to the top-k anchors.
/// `idx` is strictly increasing; `val[j]` is the similarity to anchor
/// `idx[j]`. A kept similarity may be exactly zero and still occupies a slot.
struct RelRep {
    std::string id;
    Modality modality = Modality::kImage;
    std::uint32_t dim = 0;
    std::uint32_t k = 0;
    std::vector<std::uint32_t> idx;
    std::vector<double> val;

    std::size_t
    nnz() const noexcept {
        return idx.size();
    }

    bool
    operator==(const RelRep&) const = default;
};

/// Ordering used everywhere a ranked selection is made: larger value first,
/// lower index on ties.
inline bool
ranks_before(double value_a, std::size_t index_a, double value_b, std::size_t index_b) {
    if (value_a != value_b) {
        return value_a > value_b;
    }
    return index_a < index_b;
}

inline double
cosine(std::span<const float> a, double norm_a, std::span<const float> b, double norm_b) {
    return std::clamp(dot(a, b) / (norm_a * norm_b), -1.0, 1.0);
}

/// Keeps the k entries of `dense` that rank first under ranks_before and
/// returns them in increasing index order.
inline RelRep
sparsify_top_k(std::span<const double> dense, std::uint32_t k) {
    const auto m = static_cast<std::uint32_t>(dense.size());
    if (k < 1 || k > m) {
        throw Error(ErrorCode::kConfigInvalid,
                    "k=" + std::to_string(k) + " outside [1, " + std::to_string(m) + "]");
    }
    std::vector<std::uint32_t> order(m);
    std::iota(order.begin(), order.end(), 0u);
    auto by_rank = [&](std::uint32_t a, std::uint32_t b) {
        return ranks_before(dense[a], a, dense[b], b);
    };
    if (k < m) {
        std::nth_element(order.begin(), order.begin() + (k - 1), order.end(), by_rank);
        order.resize(k);
    }
    std::sort(order.begin(), order.end());

    RelRep rel;
    rel.dim = m;
    rel.k = k;
    rel.idx = std::move(order);
    rel.val.reserve(k);
    for (auto i : rel.idx) {
        rel.val.push_back(dense[i]);
    }
    return rel;
}

/// Cosine similarities of `x` to every anchor of `basis`.
inline std::vector<double>
dense_similarities(std::span<const float> x, const AnchorBasis& basis) {
    if (x.size() != basis.dim()) {
        throw Error(ErrorCode::kAnchorStoreMismatch,
                    "vector dim " + std::to_string(x.size()) + " != anchor dim " +
                        std::to_string(basis.dim()));
    }
    const double norm_x = l2_norm(x);
    std::vector<double> sims(basis.size());
    for (std::size_t i = 0; i < basis.size(); ++i) {
        sims[i] = cosine(x, norm_x, basis.row(i), basis.norm(i));
    }
    return sims;
}

/// Relative representation of a raw embedding against `basis`.
inline RelRep
relrep(std::span<const float> x, const AnchorBasis& basis, std::uint32_t k, std::string id = {}) {
    auto sims = dense_similarities(x, basis);
    RelRep rel = sparsify_top_k(sims, k);
    rel.id = std::move(id);
    rel.modality = basis.modality();
    return rel;
}

namespace detail {

inline RelRep
relrep_of_record(std::string_view id,
                 const EmbeddingStore& store,
                 const AnchorBasis& basis,
                 std::uint32_t k,
                 Modality expected) {
    if (store.modality() != expected || basis.modality() != expected) {
        throw Error(ErrorCode::kAnchorStoreMismatch,
                    "expected " + std::string(modality_name(expected)) + " store and anchors");
    }
    auto pos = store.index_of(id);
    return relrep(store.row(pos), basis, k, std::string(id));
}

}  // namespace detail

inline RelRep
relrep_image(std::string_view x_id,
             const EmbeddingStore& images,
             const AnchorBasis& anchor_images,
             std::uint32_t k) {
    return detail::relrep_of_record(x_id, images, anchor_images, k, Modality::kImage);
}

/// Anchors are looked up in `images` itself.
inline RelRep
relrep_image(std::string_view x_id,
             const EmbeddingStore& images,
             const AnchorSet& anchors,
             std::uint32_t k) {
    return relrep_image(x_id, images, AnchorBasis::resolve(anchors, images), k);
}

inline RelRep
relrep_text(std::string_view y_id,
            const EmbeddingStore& texts,
            const AnchorBasis& anchor_texts,
            std::uint32_t k) {
    return detail::relrep_of_record(y_id, texts, anchor_texts, k, Modality::kText);
}

inline RelRep
relrep_text(std::string_view y_id,
            const EmbeddingStore& texts,
            const AnchorSet& anchors,
            std::uint32_t k) {
    return relrep_text(y_id, texts, AnchorBasis::resolve(anchors, texts), k);
}

/// Batch form of relrep_image / relrep_text. Output order follows `ids`.
/// An unknown ID aborts with its position in `ids` before any work starts.
inline std::vector<RelRep>
relrep_batch(std::span<const std::string> ids,
             const EmbeddingStore& store,
             const AnchorBasis& basis,
             std::uint32_t k,
             std::size_t workers = 1) {
    if (store.modality() != basis.modality()) {
        throw Error(ErrorCode::kAnchorStoreMismatch, "store and anchor modality differ");
    }
    std::vector<std::size_t> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        auto pos = store.find(ids[i]);
        if (!pos) {
            throw Error(ErrorCode::kUnknownRecord, "id '" + ids[i] + "'", i);
        }
        rows[i] = *pos;
    }
    std::vector<RelRep> out(ids.size());
    parallel_for(ids.size(), workers, [&](std::size_t i) {
        out[i] = relrep(store.row(rows[i]), basis, k, ids[i]);
    });
    return out;
}

inline std::vector<RelRep>
relrep_batch(std::span<const std::string> ids,
             const EmbeddingStore& store,
             const AnchorSet& anchors,
             std::uint32_t k,
             std::size_t workers = 1) {
    return relrep_batch(ids, store, AnchorBasis::resolve(anchors, store), k, workers);
}

/// Every record of `store`, in store order.
inline std::vector<RelRep>
relrep_all(const EmbeddingStore& store,
           const AnchorBasis& basis,
           std::uint32_t k,
           std::size_t workers = 1) {
    return relrep_batch(store.ids(), store, basis, k, workers);
}

inline double
relrep_norm(const RelRep& r) {
    double sum = 0.0;
    for (double v : r.val) {
        sum += v * v;
    }
    return std::sqrt(sum);
}

/// Dot product over the intersection of supports, summed in increasing
/// anchor index order.
inline double
sparse_dot(const RelRep& a, const RelRep& b) {
    double sum = 0.0;
    std::size_t i = 0;
    std::size_t j = 0;
    while (i < a.idx.size() && j < b.idx.size()) {
        if (a.idx[i] == b.idx[j]) {
            sum += a.val[i] * b.val[j];
            ++i;
            ++j;
        } else if (a.idx[i] < b.idx[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return sum;
}

/// Shared final step of every relative-representation cosine. The indexed
/// retriever calls it too, which is what makes both paths bit-identical.
inline double
finish_cosine(double dot_value, double norm_a, double norm_b) {
    return std::clamp(dot_value / (norm_a * norm_b), -1.0, 1.0);
}

inline double
relrep_cosine(const RelRep& a, const RelRep& b) {
    if (a.dim != b.dim) {
        throw Error(ErrorCode::kDimMismatch,
                    std::to_string(a.dim) + " vs " + std::to_string(b.dim));
    }
    const double na = relrep_norm(a);
    const double nb = relrep_norm(b);
    if (na == 0.0) {
        throw Error(ErrorCode::kZeroRelRep, "'" + a.id + "'");
    }
    if (nb == 0.0) {
        throw Error(ErrorCode::kZeroRelRep, "'" + b.id + "'");
    }
    return finish_cosine(sparse_dot(a, b), na, nb);
}

// JSON Lines form: {"id", "modality", "m", "k", "idx", "val"}

inline Json
to_json(const RelRep& r) {
    return Json{{"id", r.id},
                {"modality", modality_name(r.modality)},
                {"m", r.dim},
                {"k", r.k},
                {"idx", r.idx},
                {"val", r.val}};
}

inline RelRep
relrep_from_json(const Json& j) {
    RelRep r;
    try {
        r.id = j.at("id").get<std::string>();
        r.modality = parse_modality(j.at("modality").get<std::string>());
        r.dim = j.at("m").get<std::uint32_t>();
        r.k = j.at("k").get<std::uint32_t>();
        r.idx = j.at("idx").get<std::vector<std::uint32_t>>();
        r.val = j.at("val").get<std::vector<double>>();
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kParseError, std::string("relrep record: ") + e.what());
    }
    if (r.idx.size() != r.val.size() || r.idx.size() > r.k || r.k > r.dim) {
        throw Error(ErrorCode::kParseError, "relrep '" + r.id + "' has inconsistent sizes");
    }
    for (std::size_t i = 0; i < r.idx.size(); ++i) {
        if (r.idx[i] >= r.dim || (i > 0 && r.idx[i] <= r.idx[i - 1])) {
            throw Error(ErrorCode::kParseError, "relrep '" + r.id + "' idx not strictly increasing");
        }
        if (!(r.val[i] >= -1.0 && r.val[i] <= 1.0)) {
            throw Error(ErrorCode::kParseError, "relrep '" + r.id + "' value outside [-1, 1]");
        }
    }
    return r;
}

inline void
write_relreps(const std::filesystem::path& path, std::span<const RelRep> relreps) {
    JsonlWriter out(path);
    for (const auto& r : relreps) {
        out.write(to_json(r));
    }
    out.close();
}

inline std::vector<RelRep>
read_relreps(const std::filesystem::path& path) {
    std::vector<RelRep> out;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(relrep_from_json(j));
    }
    return out;
}

}  // namespace relalign
