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
#include <cstdio>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relalign/embed_store.hpp"
#include "relalign/error.hpp"
#include "relalign/jsonl.hpp"
#include "relalign/random.hpp"
#include "relalign/relrep.hpp"

namespace relalign {

enum class Provenance { kRetrieved, kGenerated };

inline std::string_view
provenance_name(Provenance p) {
    return p == Provenance::kRetrieved ? "retrieved" : "generated";
}

inline Provenance
parse_provenance(std::string_view name) {
    if (name == "retrieved") {
        return Provenance::kRetrieved;
    }
    if (name == "generated") {
        return Provenance::kGenerated;
    }
    throw Error(ErrorCode::kParseError, "unknown provenance '" + std::string(name) + "'");
}

struct WeaklyAlignedPair {
    std::string image_id;
    std::string partner_id;
    double score = 0.0;
    Provenance provenance = Provenance::kRetrieved;
    std::uint32_t k_used = 0;
    std::uint32_t m_used = 0;

    bool
    operator==(const WeaklyAlignedPair&) const = default;
};

/// A generated caption for one image, delivered as a text-space embedding
/// by an external generator.
struct CandidateCaption {
    std::string candidate_id;
    std::string image_id;
    std::vector<float> embedding;
    std::uint32_t rank_in_sample = 1;
};

/// Quality of an image/partner pair: cosine of their relative
/// representations.
inline double
quality_score(const RelRep& image_rel, const RelRep& partner_rel) {
    return relrep_cosine(image_rel, partner_rel);
}

/// Keeps `retrieved` unless some candidate scores strictly higher, in which
/// case the best candidate (lowest rank_in_sample among equals) replaces it.
/// Candidate RelReps are computed against `anchor_texts` with the same k as
/// `image_rel`.
inline WeaklyAlignedPair
adjudicate(const WeaklyAlignedPair& retrieved,
           const RelRep& image_rel,
           std::span<const CandidateCaption> candidates,
           const AnchorBasis& anchor_texts) {
    if (anchor_texts.modality() != Modality::kText) {
        throw Error(ErrorCode::kShapeMismatch, "candidate anchors must be text anchors");
    }
    if (!candidates.empty() && anchor_texts.size() != image_rel.dim) {
        throw Error(ErrorCode::kShapeMismatch,
                    "image relrep has m=" + std::to_string(image_rel.dim) + " but " +
                        std::to_string(anchor_texts.size()) + " anchor texts");
    }
    std::size_t best = candidates.size();
    double best_score = 0.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const auto& cand = candidates[c];
        if (cand.image_id != retrieved.image_id) {
            throw Error(ErrorCode::kCandidateImageMismatch,
                        "candidate '" + cand.candidate_id + "' targets '" + cand.image_id + "'", c);
        }
        if (cand.embedding.size() != anchor_texts.dim()) {
            throw Error(ErrorCode::kShapeMismatch,
                        "candidate '" + cand.candidate_id + "' has dim " +
                            std::to_string(cand.embedding.size()),
                        c);
        }
        if (!std::all_of(cand.embedding.begin(), cand.embedding.end(),
                         [](float v) { return std::isfinite(v); })) {
            throw Error(ErrorCode::kNonFiniteValue, "candidate '" + cand.candidate_id + "'", c);
        }
        if (l2_norm(cand.embedding) == 0.0) {
            throw Error(ErrorCode::kZeroVector, "candidate '" + cand.candidate_id + "'", c);
        }
        const RelRep cand_rel = relrep(cand.embedding, anchor_texts, image_rel.k, cand.candidate_id);
        const double s = quality_score(image_rel, cand_rel);
        if (best == candidates.size() || s > best_score ||
            (s == best_score && cand.rank_in_sample < candidates[best].rank_in_sample)) {
            best = c;
            best_score = s;
        }
    }
    // strictly higher replaces; a tie keeps the retrieved pair
    if (best == candidates.size() || !(best_score > retrieved.score)) {
        return retrieved;
    }
    return {retrieved.image_id, candidates[best].candidate_id, best_score, Provenance::kGenerated,
            image_rel.k, image_rel.dim};
}

struct PrefixWeights {
    std::uint32_t d = 0;
    std::uint32_t d_t = 0;
    std::vector<double> w_r;  // 1 x d
    std::vector<double> w_e;  // d_t x d, row-major

    void
    validate() const {
        if (w_r.size() != d || w_e.size() != static_cast<std::size_t>(d_t) * d) {
            throw Error(ErrorCode::kShapeMismatch, "prefix weight shapes disagree with d / d_t");
        }
        for (double v : w_r) {
            if (!std::isfinite(v)) {
                throw Error(ErrorCode::kNonFiniteValue, "w_r");
            }
        }
        for (double v : w_e) {
            if (!std::isfinite(v)) {
                throw Error(ErrorCode::kNonFiniteValue, "w_e");
            }
        }
    }
};

/// Gaussian weights with standard deviation `scale`, for shape tests and
/// untrained runs.
inline PrefixWeights
random_prefix_weights(std::uint32_t d_t, std::uint32_t d, std::uint64_t seed, double scale = 0.02) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    PrefixWeights w{d, d_t, std::vector<double>(d), std::vector<double>(static_cast<std::size_t>(d_t) * d)};
    for (auto& v : w.w_r) {
        v = normal(rng);
    }
    for (auto& v : w.w_e) {
        v = normal(rng);
    }
    return w;
}

inline Json
to_json(const PrefixWeights& w) {
    Json w_e = Json::array();
    for (std::uint32_t i = 0; i < w.d_t; ++i) {
        w_e.push_back(std::vector<double>(w.w_e.begin() + i * w.d, w.w_e.begin() + (i + 1) * w.d));
    }
    return Json{{"d", w.d}, {"d_t", w.d_t}, {"w_r", w.w_r}, {"w_e", std::move(w_e)}};
}

inline PrefixWeights
prefix_weights_from_json(const Json& j) {
    PrefixWeights w;
    try {
        w.d = j.at("d").get<std::uint32_t>();
        w.d_t = j.at("d_t").get<std::uint32_t>();
        w.w_r = j.at("w_r").get<std::vector<double>>();
        for (const auto& row : j.at("w_e")) {
            auto r = row.get<std::vector<double>>();
            if (r.size() != w.d) {
                throw Error(ErrorCode::kShapeMismatch, "w_e row width != d");
            }
            w.w_e.insert(w.w_e.end(), r.begin(), r.end());
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kParseError, std::string("prefix weights: ") + e.what());
    }
    w.validate();
    return w;
}

/// K x d conditioning matrix. Row r belongs to anchor anchor_indices[r];
/// rows run from highest to lowest similarity.
struct PrefixMatrix {
    std::uint32_t d = 0;
    std::vector<std::uint32_t> anchor_indices;
    std::vector<double> rows;

    std::size_t
    size() const noexcept {
        return anchor_indices.size();
    }

    std::span<const double>
    row(std::size_t r) const {
        return {rows.data() + r * d, d};
    }
};

/// Row for anchor a: rel[a] * w_r + E_T(anchor text a) * w_e, kept only
/// for the anchors present in `rel`.
inline PrefixMatrix
build_prefix(const RelRep& rel, const AnchorBasis& anchor_texts, const PrefixWeights& weights) {
    weights.validate();
    if (anchor_texts.size() != rel.dim) {
        throw Error(ErrorCode::kShapeMismatch,
                    std::to_string(anchor_texts.size()) + " anchor texts for m=" +
                        std::to_string(rel.dim));
    }
    if (anchor_texts.dim() != weights.d_t) {
        throw Error(ErrorCode::kShapeMismatch,
                    "anchor text dim " + std::to_string(anchor_texts.dim()) + " != d_t " +
                        std::to_string(weights.d_t));
    }
    std::vector<std::size_t> order(rel.nnz());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return ranks_before(rel.val[a], rel.idx[a], rel.val[b], rel.idx[b]);
    });

    const std::uint32_t d = weights.d;
    PrefixMatrix p;
    p.d = d;
    p.anchor_indices.reserve(order.size());
    p.rows.assign(order.size() * d, 0.0);
    for (std::size_t r = 0; r < order.size(); ++r) {
        const std::uint32_t a = rel.idx[order[r]];
        const double s = rel.val[order[r]];
        p.anchor_indices.push_back(a);
        auto e = anchor_texts.row(a);
        double* out = p.rows.data() + r * d;
        for (std::uint32_t c = 0; c < d; ++c) {
            double acc = s * weights.w_r[c];
            for (std::uint32_t j = 0; j < weights.d_t; ++j) {
                acc += static_cast<double>(e[j]) * weights.w_e[static_cast<std::size_t>(j) * d + c];
            }
            out[c] = acc;
        }
    }
    return p;
}

// Weight manifest: per-pair multiplicative loss weights for a downstream
// trainer.

struct WeightRecord {
    std::string image_id;
    std::string partner_id;
    double weight = 0.0;
    Provenance provenance = Provenance::kRetrieved;
};

inline std::vector<WeightRecord>
export_weights(std::span<const WeaklyAlignedPair> pairs) {
    std::vector<WeightRecord> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        out.push_back({p.image_id, p.partner_id, p.score, p.provenance});
    }
    return out;
}

inline std::string
weight_line(const WeightRecord& w) {
    char num[32];
    std::snprintf(num, sizeof(num), "%.12g", w.weight);
    return "{\"image_id\":" + Json(w.image_id).dump() + ",\"partner_id\":" +
           Json(w.partner_id).dump() + ",\"weight\":" + num + ",\"provenance\":\"" +
           std::string(provenance_name(w.provenance)) + "\"}";
}

inline void
write_weights(const std::filesystem::path& path, std::span<const WeightRecord> weights) {
    JsonlWriter out(path);
    for (const auto& w : weights) {
        out.write_raw(weight_line(w));
    }
    out.close();
}

inline std::vector<WeightRecord>
read_weights(const std::filesystem::path& path) {
    std::vector<WeightRecord> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            out.push_back({j.at("image_id").get<std::string>(), j.at("partner_id").get<std::string>(),
                           j.at("weight").get<double>(),
                           parse_provenance(j.at("provenance").get<std::string>())});
        } catch (const Json::exception& e) {
            throw Error(ErrorCode::kParseError, std::string("weight record: ") + e.what(), out.size());
        }
    }
    return out;
}

inline Json
to_json(const WeaklyAlignedPair& p) {
    return Json{{"image_id", p.image_id},     {"partner_id", p.partner_id},
                {"score", p.score},           {"provenance", provenance_name(p.provenance)},
                {"k", p.k_used},              {"m", p.m_used}};
}

inline WeaklyAlignedPair
pair_from_json(const Json& j) {
    try {
        return {j.at("image_id").get<std::string>(),
                j.at("partner_id").get<std::string>(),
                j.at("score").get<double>(),
                parse_provenance(j.at("provenance").get<std::string>()),
                j.at("k").get<std::uint32_t>(),
                j.at("m").get<std::uint32_t>()};
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kParseError, std::string("pair record: ") + e.what());
    }
}

// Candidate registry: JSON Lines {"candidate_id", "image_id", "rank"} whose
// n-th record owns row n of a parallel EMB1 text store.

inline void
write_candidates(const std::filesystem::path& registry,
                 const std::filesystem::path& embeddings,
                 std::span<const CandidateCaption> candidates) {
    std::vector<std::string> ids;
    std::vector<float> data;
    const std::uint32_t dim =
        candidates.empty() ? 0 : static_cast<std::uint32_t>(candidates.front().embedding.size());
    JsonlWriter out(registry);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const auto& cand = candidates[c];
        if (cand.embedding.size() != dim) {
            throw Error(ErrorCode::kShapeMismatch, "candidate embeddings differ in width", c);
        }
        out.write(Json{{"candidate_id", cand.candidate_id},
                       {"image_id", cand.image_id},
                       {"rank", cand.rank_in_sample}});
        ids.push_back(cand.candidate_id);
        data.insert(data.end(), cand.embedding.begin(), cand.embedding.end());
    }
    out.close();
    save_store(embeddings, EmbeddingStore(Modality::kText, dim, std::move(ids), std::move(data)));
}

inline std::vector<CandidateCaption>
read_candidates(const std::filesystem::path& registry, const std::filesystem::path& embeddings) {
    const auto records = read_jsonl(registry);
    const EmbeddingStore store = load_store(embeddings, Modality::kText);
    if (records.size() != store.size()) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "registry has " + std::to_string(records.size()) + " candidates, embeddings " +
                        std::to_string(store.size()));
    }
    std::vector<CandidateCaption> out;
    out.reserve(records.size());
    for (std::size_t c = 0; c < records.size(); ++c) {
        CandidateCaption cand;
        try {
            cand.candidate_id = records[c].at("candidate_id").get<std::string>();
            cand.image_id = records[c].at("image_id").get<std::string>();
            cand.rank_in_sample = records[c].at("rank").get<std::uint32_t>();
        } catch (const Json::exception& e) {
            throw Error(ErrorCode::kParseError, std::string("candidate record: ") + e.what(), c);
        }
        if (cand.rank_in_sample < 1) {
            throw Error(ErrorCode::kParseError, "candidate rank must be >= 1", c);
        }
        if (store.id(c) != cand.candidate_id) {
            throw Error(ErrorCode::kParseError,
                        "embedding row " + std::to_string(c) + " is '" + store.id(c) +
                            "', registry says '" + cand.candidate_id + "'",
                        c);
        }
        auto row = store.row(c);
        cand.embedding.assign(row.begin(), row.end());
        out.push_back(std::move(cand));
    }
    return out;
}

}  // namespace relalign
