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
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "relalign/error.hpp"
#include "relalign/jsonl.hpp"
#include "relalign/parallel.hpp"
#include "relalign/relrep.hpp"

namespace relalign {

struct Match {
    std::uint32_t text_ordinal = 0;
    std::string text_id;
    double score = 0.0;

    bool
    operator==(const Match&) const = default;
};

/// Ranked texts for one query: score descending, lower text ordinal on ties.
struct RetrievalResult {
    std::string image_id;
    std::size_t depth = 0;
    std::vector<Match> ranked;

    bool
    operator==(const RetrievalResult&) const = default;
};

/// Inverted index over text relative representations. Posting list `a`
/// holds (text ordinal, value) for every text whose RelRep keeps anchor `a`,
/// sorted by ordinal.
class SparseIndex {
 public:
    struct Posting {
        std::uint32_t ordinal;
        double value;
    };

    std::uint32_t
    dim() const noexcept {
        return dim_;
    }

    std::size_t
    size() const noexcept {
        return norms_.size();
    }

    std::span<const Posting>
    postings(std::uint32_t anchor) const {
        return {entries_.data() + offsets_[anchor], offsets_[anchor + 1] - offsets_[anchor]};
    }

    double
    norm(std::size_t ordinal) const {
        return norms_[ordinal];
    }

    const std::string&
    text_id(std::size_t ordinal) const {
        return ids_[ordinal];
    }

    std::size_t
    total_postings() const noexcept {
        return entries_.size();
    }

 private:
    friend SparseIndex
    build_index(std::span<const RelRep> texts);

    std::uint32_t dim_ = 0;
    // CSR layout: postings of anchor a are entries_[offsets_[a], offsets_[a + 1])
    std::vector<std::size_t> offsets_;
    std::vector<Posting> entries_;
    std::vector<double> norms_;
    std::vector<std::string> ids_;
};

/// Builds the index in one counting pass plus one fill pass.
inline SparseIndex
build_index(std::span<const RelRep> texts) {
    SparseIndex index;
    index.dim_ = texts.empty() ? 0 : texts.front().dim;
    index.offsets_.assign(static_cast<std::size_t>(index.dim_) + 1, 0);
    index.norms_.reserve(texts.size());
    index.ids_.reserve(texts.size());
    for (std::size_t t = 0; t < texts.size(); ++t) {
        const auto& r = texts[t];
        if (r.dim != index.dim_) {
            throw Error(ErrorCode::kDimMismatch,
                        "text relrep dim " + std::to_string(r.dim) + " != " +
                            std::to_string(index.dim_),
                        t);
        }
        const double n = relrep_norm(r);
        if (n == 0.0) {
            throw Error(ErrorCode::kZeroRelRep, "text '" + r.id + "'", t);
        }
        index.norms_.push_back(n);
        index.ids_.push_back(r.id);
        for (auto a : r.idx) {
            ++index.offsets_[a + 1];
        }
    }
    std::partial_sum(index.offsets_.begin(), index.offsets_.end(), index.offsets_.begin());
    index.entries_.resize(index.offsets_.back());
    std::vector<std::size_t> cursor(index.offsets_.begin(), index.offsets_.end() - 1);
    for (std::size_t t = 0; t < texts.size(); ++t) {
        const auto& r = texts[t];
        for (std::size_t j = 0; j < r.idx.size(); ++j) {
            index.entries_[cursor[r.idx[j]]++] = {static_cast<std::uint32_t>(t), r.val[j]};
        }
    }
    return index;
}

namespace detail {

inline bool
match_before(const Match& a, const Match& b) {
    return ranks_before(a.score, a.text_ordinal, b.score, b.text_ordinal);
}

// Top `depth` of (ordinal -> score) under match_before.
template <typename ScoreFn, typename IdFn>
std::vector<Match>
top_matches(std::size_t n, std::size_t depth, ScoreFn&& score_of, IdFn&& id_of) {
    depth = std::min(depth, n);
    std::vector<Match> ranked;
    if (depth == 0) {
        return ranked;
    }
    if (depth == 1) {
        std::size_t best = 0;
        double best_score = score_of(0);
        for (std::size_t t = 1; t < n; ++t) {
            const double s = score_of(t);
            if (s > best_score) {
                best = t;
                best_score = s;
            }
        }
        ranked.push_back({static_cast<std::uint32_t>(best), id_of(best), best_score});
        return ranked;
    }
    std::vector<Match> all(n);
    for (std::size_t t = 0; t < n; ++t) {
        all[t] = {static_cast<std::uint32_t>(t), {}, score_of(t)};
    }
    std::partial_sort(all.begin(), all.begin() + depth, all.end(), match_before);
    all.resize(depth);
    for (auto& m : all) {
        m.text_id = id_of(m.text_ordinal);
    }
    return all;
}

}  // namespace detail

/// Exact top-`depth` by scoring every text with relrep_cosine. This is the
/// reference the indexed path is checked against.
inline RetrievalResult
retrieve_bruteforce(const RelRep& query, std::span<const RelRep> texts, std::size_t depth) {
    for (std::size_t t = 0; t < texts.size(); ++t) {
        if (texts[t].dim != query.dim) {
            throw Error(ErrorCode::kDimMismatch, "text relrep dim differs from query", t);
        }
    }
    std::vector<double> scores(texts.size());
    for (std::size_t t = 0; t < texts.size(); ++t) {
        scores[t] = relrep_cosine(query, texts[t]);
    }
    RetrievalResult result;
    result.image_id = query.id;
    result.depth = depth;
    result.ranked = detail::top_matches(
        texts.size(), depth, [&](std::size_t t) { return scores[t]; },
        [&](std::size_t t) { return texts[t].id; });
    return result;
}

/// Reusable accumulator so batch retrieval does not reallocate per query.
class Scorer {
 public:
    explicit Scorer(const SparseIndex& index) : index_(index), acc_(index.size(), 0.0) {
    }

    RetrievalResult
    retrieve(const RelRep& query, std::size_t depth) {
        if (query.dim != index_.dim() && index_.size() > 0) {
            throw Error(ErrorCode::kDimMismatch,
                        "query dim " + std::to_string(query.dim) + " != index dim " +
                            std::to_string(index_.dim()));
        }
        const double qnorm = relrep_norm(query);
        if (qnorm == 0.0) {
            throw Error(ErrorCode::kZeroRelRep, "'" + query.id + "'");
        }
        std::fill(acc_.begin(), acc_.end(), 0.0);
        // query anchors ascend, so each text sums its shared anchors in the
        // same order as sparse_dot does
        for (std::size_t j = 0; j < query.idx.size(); ++j) {
            const double qv = query.val[j];
            for (const auto& p : index_.postings(query.idx[j])) {
                acc_[p.ordinal] += qv * p.value;
            }
        }
        RetrievalResult result;
        result.image_id = query.id;
        result.depth = depth;
        result.ranked = detail::top_matches(
            index_.size(), depth,
            [&](std::size_t t) { return finish_cosine(acc_[t], qnorm, index_.norm(t)); },
            [&](std::size_t t) { return index_.text_id(t); });
        return result;
    }

 private:
    const SparseIndex& index_;
    std::vector<double> acc_;
};

/// Exact top-`depth` through the inverted index. Same ranking, scores and
/// tie order as retrieve_bruteforce.
inline RetrievalResult
retrieve_indexed(const RelRep& query, const SparseIndex& index, std::size_t depth) {
    Scorer scorer(index);
    return scorer.retrieve(query, depth);
}

/// Top-`depth` (default 1) for every query, in input order. Output does not
/// depend on `workers`.
inline std::vector<RetrievalResult>
retrieve_all(std::span<const RelRep> queries,
             const SparseIndex& index,
             std::size_t workers = 1,
             std::size_t depth = 1) {
    std::vector<RetrievalResult> out(queries.size());
    if (queries.empty()) {
        return out;
    }
    workers = std::clamp<std::size_t>(workers, 1, queries.size());
    const std::size_t chunk = (queries.size() + workers - 1) / workers;
    parallel_for(workers, workers, [&](std::size_t w) {
        Scorer scorer(index);
        const std::size_t end = std::min(queries.size(), (w + 1) * chunk);
        for (std::size_t q = w * chunk; q < end; ++q) {
            try {
                out[q] = scorer.retrieve(queries[q], depth);
            } catch (const Error& e) {
                throw Error(e.code(), std::string("query: ") + e.what(), q);
            }
        }
    });
    return out;
}

inline Json
to_json(const RetrievalResult& r) {
    Json matches = Json::array();
    for (const auto& m : r.ranked) {
        matches.push_back(Json{{"text_id", m.text_id}, {"score", m.score}});
    }
    return Json{{"image_id", r.image_id}, {"matches", std::move(matches)}};
}

inline RetrievalResult
retrieval_from_json(const Json& j) {
    RetrievalResult r;
    try {
        r.image_id = j.at("image_id").get<std::string>();
        for (const auto& m : j.at("matches")) {
            r.ranked.push_back({0, m.at("text_id").get<std::string>(), m.at("score").get<double>()});
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kParseError, std::string("retrieval record: ") + e.what());
    }
    r.depth = r.ranked.size();
    return r;
}

inline std::vector<RetrievalResult>
read_retrieval(const std::filesystem::path& path) {
    std::vector<RetrievalResult> out;
    for (const auto& j : read_jsonl(path)) {
        out.push_back(retrieval_from_json(j));
    }
    return out;
}

inline void
write_retrieval(const std::filesystem::path& path, std::span<const RetrievalResult> results) {
    JsonlWriter out(path);
    for (const auto& r : results) {
        out.write(to_json(r));
    }
    out.close();
}

}  // namespace relalign
