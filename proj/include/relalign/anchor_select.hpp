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
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "relalign/embed_store.hpp"
#include "relalign/error.hpp"
#include "relalign/jsonl.hpp"
#include "relalign/kmeans.hpp"
#include "relalign/random.hpp"
#include "relalign/relrep.hpp"

namespace relalign {

enum class Strategy { kRandom, kDiverse, kNonDiverse };

inline std::string_view
strategy_name(Strategy s) {
    switch (s) {
        case Strategy::kRandom:
            return "random";
        case Strategy::kDiverse:
            return "diverse";
        case Strategy::kNonDiverse:
            return "non_diverse";
    }
    return "unknown";
}

inline Strategy
parse_strategy(std::string_view name) {
    if (name == "random") {
        return Strategy::kRandom;
    }
    if (name == "diverse") {
        return Strategy::kDiverse;
    }
    if (name == "non_diverse" || name == "non-diverse") {
        return Strategy::kNonDiverse;
    }
    throw Error(ErrorCode::kParseError, "unknown strategy '" + std::string(name) + "'");
}

struct SelectionConfig {
    Strategy strategy = Strategy::kRandom;
    std::size_t m = 0;
    std::uint64_t seed = 0;
    Modality cluster_modality = Modality::kImage;
    std::uint32_t kmeans_iters = 20;
    std::uint32_t kmeans_restarts = 3;
    // diverse / non_diverse compare unit-normalized embeddings when set
    bool normalize = true;
    std::size_t workers = 1;
};

using AnchorPool = std::vector<AnchorPair>;

/// Pairs (images[i], texts[i]) of two stores aligned by position.
inline AnchorPool
pool_from_aligned(const EmbeddingStore& images, const EmbeddingStore& texts) {
    if (images.size() != texts.size()) {
        throw Error(ErrorCode::kDimensionMismatch,
                    "aligned stores differ in size: " + std::to_string(images.size()) + " vs " +
                        std::to_string(texts.size()));
    }
    AnchorPool pool;
    pool.reserve(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        pool.push_back({images.id(i), texts.id(i)});
    }
    return pool;
}

namespace detail {

inline AnchorSource
source_for(const SelectionConfig& cfg, std::size_t pool_size) {
    AnchorSource src;
    src.strategy = std::string(strategy_name(cfg.strategy));
    src.seed = cfg.seed;
    src.pool_size = pool_size;
    if (cfg.strategy != Strategy::kRandom) {
        src.cluster_modality = std::string(modality_name(cfg.cluster_modality));
        src.normalized = cfg.normalize;
    }
    if (cfg.strategy == Strategy::kDiverse) {
        src.kmeans_iters = cfg.kmeans_iters;
        src.kmeans_restarts = cfg.kmeans_restarts;
    }
    if (cfg.m == 0) {
        src.warnings.push_back("empty anchor set (m=0)");
    }
    return src;
}

inline void
check_pool(const AnchorPool& pool, const SelectionConfig& cfg, Strategy expected) {
    if (cfg.strategy != expected) {
        throw Error(ErrorCode::kConfigInvalid,
                    "strategy is " + std::string(strategy_name(cfg.strategy)) + ", expected " +
                        std::string(strategy_name(expected)));
    }
    if (cfg.m > pool.size()) {
        throw Error(ErrorCode::kPoolTooSmall,
                    "m=" + std::to_string(cfg.m) + " but pool has " + std::to_string(pool.size()));
    }
}

inline PointMatrix
pool_points(const AnchorPool& pool, const EmbeddingStore& store, const SelectionConfig& cfg) {
    if (store.empty() && !pool.empty()) {
        throw Error(ErrorCode::kEmptyEmbeddings, "clustering store has no records");
    }
    if (store.modality() != cfg.cluster_modality) {
        throw Error(ErrorCode::kConfigInvalid, "clustering store modality does not match config");
    }
    PointMatrix pts{pool.size(), store.dim(), {}};
    pts.data.reserve(pool.size() * store.dim());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& id =
            cfg.cluster_modality == Modality::kImage ? pool[i].image_id : pool[i].text_id;
        auto pos = store.find(id);
        if (!pos) {
            throw Error(ErrorCode::kUnknownRecord, "pool id '" + id + "'", i);
        }
        auto r = store.row(*pos);
        const double norm = cfg.normalize ? l2_norm(r) : 1.0;
        for (float v : r) {
            pts.data.push_back(static_cast<double>(v) / norm);
        }
    }
    return pts;
}

inline AnchorSet
gather(const AnchorPool& pool, std::span<const std::size_t> picks, AnchorSource src) {
    std::vector<AnchorPair> pairs;
    pairs.reserve(picks.size());
    for (auto i : picks) {
        pairs.push_back(pool[i]);
    }
    return AnchorSet(std::move(pairs), std::move(src));
}

}  // namespace detail

/// Uniform sample of cfg.m pool members without replacement, in shuffled
/// order.
inline AnchorSet
select_random(const AnchorPool& pool, const SelectionConfig& cfg) {
    detail::check_pool(pool, cfg, Strategy::kRandom);
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(cfg.seed);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(cfg.m);
    return detail::gather(pool, order, detail::source_for(cfg, pool.size()));
}

/// One anchor per k-means cluster (k = cfg.m): the member nearest its
/// centroid, ties to the lower pool index. Output is in pool order.
inline AnchorSet
select_diverse(const AnchorPool& pool, const EmbeddingStore& embeddings, const SelectionConfig& cfg) {
    detail::check_pool(pool, cfg, Strategy::kDiverse);
    auto src = detail::source_for(cfg, pool.size());
    if (cfg.m == 0) {
        return AnchorSet({}, std::move(src));
    }
    const PointMatrix pts = detail::pool_points(pool, embeddings, cfg);
    KMeansOptions opt;
    opt.k = static_cast<std::uint32_t>(cfg.m);
    opt.iters = cfg.kmeans_iters;
    opt.restarts = cfg.kmeans_restarts;
    opt.seed = cfg.seed;
    opt.workers = cfg.workers;
    const KMeansResult km = kmeans(pts, opt);

    std::vector<std::size_t> best(cfg.m, pool.size());
    std::vector<double> best_dist(cfg.m, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < pts.n; ++i) {
        const std::size_t c = km.assignment[i];
        const double d = squared_distance(pts.row(i), km.centroids.row(c));
        if (d < best_dist[c]) {
            best_dist[c] = d;
            best[c] = i;
        }
    }
    std::sort(best.begin(), best.end());
    return detail::gather(pool, best, std::move(src));
}

/// Greedy crowding: start from the member nearest the global mean, then
/// repeatedly add the unselected member nearest the mean of those already
/// chosen. Ties go to the lower pool index. Output is in selection order.
inline AnchorSet
select_non_diverse(const AnchorPool& pool,
                   const EmbeddingStore& embeddings,
                   const SelectionConfig& cfg) {
    detail::check_pool(pool, cfg, Strategy::kNonDiverse);
    auto src = detail::source_for(cfg, pool.size());
    if (cfg.m == 0) {
        return AnchorSet({}, std::move(src));
    }
    const PointMatrix pts = detail::pool_points(pool, embeddings, cfg);
    const std::size_t d = pts.d;

    std::vector<double> target(d, 0.0);
    for (std::size_t i = 0; i < pts.n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            target[j] += pts.data[i * d + j];
        }
    }
    for (auto& v : target) {
        v /= static_cast<double>(pts.n);
    }

    std::vector<double> running(d, 0.0);
    std::vector<bool> taken(pts.n, false);
    std::vector<std::size_t> picks;
    picks.reserve(cfg.m);
    while (picks.size() < cfg.m) {
        std::size_t best = pts.n;
        double best_dist = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < pts.n; ++i) {
            if (taken[i]) {
                continue;
            }
            const double dist = squared_distance(pts.row(i), target);
            if (dist < best_dist) {
                best_dist = dist;
                best = i;
            }
        }
        taken[best] = true;
        picks.push_back(best);
        auto r = pts.row(best);
        for (std::size_t j = 0; j < d; ++j) {
            running[j] += r[j];
            target[j] = running[j] / static_cast<double>(picks.size());
        }
    }
    return detail::gather(pool, picks, std::move(src));
}

/// Dispatches on cfg.strategy. `cluster_store` is only read by the
/// diverse and non_diverse strategies.
inline AnchorSet
select_anchors(const AnchorPool& pool, const EmbeddingStore& cluster_store, const SelectionConfig& cfg) {
    switch (cfg.strategy) {
        case Strategy::kRandom:
            return select_random(pool, cfg);
        case Strategy::kDiverse:
            return select_diverse(pool, cluster_store, cfg);
        case Strategy::kNonDiverse:
            return select_non_diverse(pool, cluster_store, cfg);
    }
    throw Error(ErrorCode::kConfigInvalid, "unknown strategy");
}

// Anchor manifest: a {"header": {...}} record, then one
// {"image_id", "text_id"} record per anchor.

inline Json
to_json(const AnchorSource& src, std::size_t m) {
    return Json{{"strategy", src.strategy},
                {"m", m},
                {"seed", src.seed},
                {"cluster_modality", src.cluster_modality},
                {"pool_size", src.pool_size},
                {"kmeans_iters", src.kmeans_iters},
                {"kmeans_restarts", src.kmeans_restarts},
                {"normalized", src.normalized},
                {"warnings", src.warnings}};
}

inline void
write_anchors(const std::filesystem::path& path, const AnchorSet& anchors) {
    JsonlWriter out(path);
    out.write(Json{{"header", to_json(anchors.source(), anchors.size())}});
    for (const auto& p : anchors.pairs()) {
        out.write(Json{{"image_id", p.image_id}, {"text_id", p.text_id}});
    }
    out.close();
}

inline AnchorSet
read_anchors(const std::filesystem::path& path) {
    auto records = read_jsonl(path);
    AnchorSource src;
    std::vector<AnchorPair> pairs;
    std::size_t declared_m = 0;
    bool have_header = false;
    try {
        for (std::size_t i = 0; i < records.size(); ++i) {
            const auto& r = records[i];
            if (r.contains("header")) {
                const auto& h = r.at("header");
                src.strategy = h.at("strategy").get<std::string>();
                src.seed = h.at("seed").get<std::uint64_t>();
                src.cluster_modality = h.value("cluster_modality", std::string());
                src.pool_size = h.value("pool_size", std::size_t{0});
                src.kmeans_iters = h.value("kmeans_iters", 0u);
                src.kmeans_restarts = h.value("kmeans_restarts", 0u);
                src.normalized = h.value("normalized", false);
                src.warnings = h.value("warnings", std::vector<std::string>{});
                declared_m = h.at("m").get<std::size_t>();
                have_header = true;
                continue;
            }
            pairs.push_back({r.at("image_id").get<std::string>(), r.at("text_id").get<std::string>()});
        }
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
    }
    if (have_header && declared_m != pairs.size()) {
        throw Error(ErrorCode::kParseError,
                    path.string() + ": header m=" + std::to_string(declared_m) + " but " +
                        std::to_string(pairs.size()) + " anchors");
    }
    return AnchorSet(std::move(pairs), std::move(src));
}

}  // namespace relalign
