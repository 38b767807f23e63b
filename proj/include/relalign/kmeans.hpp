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
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "relalign/error.hpp"
#include "relalign/parallel.hpp"
#include "relalign/random.hpp"

namespace relalign {

/// Row-major n x d point matrix in double precision.
struct PointMatrix {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<double> data;

    std::span<const double>
    row(std::size_t i) const {
        return {data.data() + i * d, d};
    }
};

inline double
squared_distance(std::span<const double> a, std::span<const double> b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        sum += diff * diff;
    }
    return sum;
}

struct KMeansResult {
    PointMatrix centroids;
    std::vector<std::uint32_t> assignment;
    double sse = 0.0;
    std::uint32_t restart = 0;
};

struct KMeansOptions {
    std::uint32_t k = 1;
    std::uint32_t iters = 20;
    std::uint32_t restarts = 3;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

namespace detail {

inline PointMatrix
kmeans_pp_init(const PointMatrix& points, std::uint32_t k, Rng& rng) {
    PointMatrix centroids{k, points.d, {}};
    centroids.data.reserve(static_cast<std::size_t>(k) * points.d);
    std::vector<bool> chosen(points.n, false);

    auto take = [&](std::size_t i) {
        chosen[i] = true;
        auto r = points.row(i);
        centroids.data.insert(centroids.data.end(), r.begin(), r.end());
    };

    std::uniform_int_distribution<std::size_t> first(0, points.n - 1);
    take(first(rng));

    std::vector<double> closest(points.n, std::numeric_limits<double>::infinity());
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::uint32_t c = 1; c < k; ++c) {
        const auto last = centroids.row(c - 1);
        double total = 0.0;
        for (std::size_t i = 0; i < points.n; ++i) {
            closest[i] = std::min(closest[i], squared_distance(points.row(i), last));
            total += closest[i];
        }
        std::size_t pick = points.n;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double cum = 0.0;
            for (std::size_t i = 0; i < points.n; ++i) {
                cum += closest[i];
                if (cum > target && closest[i] > 0.0) {
                    pick = i;
                    break;
                }
            }
            // rounding at the tail of the cumulative sum
            if (pick == points.n) {
                for (std::size_t i = points.n; i-- > 0;) {
                    if (closest[i] > 0.0) {
                        pick = i;
                        break;
                    }
                }
            }
        }
        if (pick == points.n) {
            // every point coincides with a centroid; fall back to unchosen order
            for (std::size_t i = 0; i < points.n; ++i) {
                if (!chosen[i]) {
                    pick = i;
                    break;
                }
            }
        }
        take(pick);
    }
    return centroids;
}

// Nearest centroid per point (ties -> lower centroid), then refill every
// empty cluster with the point farthest from its own centroid.
inline void
assign(const PointMatrix& points, PointMatrix& centroids, std::vector<std::uint32_t>& assignment) {
    const std::size_t k = centroids.n;
    std::vector<double> dist(points.n);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < points.n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::uint32_t best_c = 0;
        for (std::size_t c = 0; c < k; ++c) {
            const double d = squared_distance(points.row(i), centroids.row(c));
            if (d < best) {
                best = d;
                best_c = static_cast<std::uint32_t>(c);
            }
        }
        assignment[i] = best_c;
        dist[i] = best;
        ++counts[best_c];
    }
    for (std::size_t c = 0; c < k; ++c) {
        if (counts[c] != 0) {
            continue;
        }
        std::size_t far = points.n;
        double far_dist = -1.0;
        for (std::size_t i = 0; i < points.n; ++i) {
            if (counts[assignment[i]] > 1 && dist[i] > far_dist) {
                far = i;
                far_dist = dist[i];
            }
        }
        --counts[assignment[far]];
        assignment[far] = static_cast<std::uint32_t>(c);
        counts[c] = 1;
        dist[far] = 0.0;
        auto r = points.row(far);
        std::copy(r.begin(), r.end(), centroids.data.begin() + c * points.d);
    }
}

inline void
update_centroids(const PointMatrix& points,
                 const std::vector<std::uint32_t>& assignment,
                 PointMatrix& centroids) {
    std::vector<double> sums(centroids.data.size(), 0.0);
    std::vector<std::size_t> counts(centroids.n, 0);
    for (std::size_t i = 0; i < points.n; ++i) {
        const std::size_t c = assignment[i];
        auto r = points.row(i);
        for (std::size_t j = 0; j < points.d; ++j) {
            sums[c * points.d + j] += r[j];
        }
        ++counts[c];
    }
    for (std::size_t c = 0; c < centroids.n; ++c) {
        if (counts[c] == 0) {
            continue;
        }
        for (std::size_t j = 0; j < points.d; ++j) {
            centroids.data[c * points.d + j] = sums[c * points.d + j] / counts[c];
        }
    }
}

inline KMeansResult
kmeans_single(const PointMatrix& points, const KMeansOptions& opt, std::uint32_t restart) {
    Rng rng(derive_seed(opt.seed, restart));
    KMeansResult result;
    result.restart = restart;
    result.centroids = kmeans_pp_init(points, opt.k, rng);
    result.assignment.assign(points.n, 0);
    for (std::uint32_t it = 0; it < opt.iters; ++it) {
        assign(points, result.centroids, result.assignment);
        update_centroids(points, result.assignment, result.centroids);
    }
    assign(points, result.centroids, result.assignment);
    for (std::size_t i = 0; i < points.n; ++i) {
        result.sse += squared_distance(points.row(i), result.centroids.row(result.assignment[i]));
    }
    return result;
}

}  // namespace detail

/// Lloyd's k-means with k-means++ seeding. Restarts are independent and may
/// run on separate workers; the winner is the lowest SSE, then the lowest
/// restart index, so the result never depends on `workers`.
inline KMeansResult
kmeans(const PointMatrix& points, const KMeansOptions& opt) {
    if (opt.k == 0 || opt.k > points.n) {
        throw Error(ErrorCode::kPoolTooSmall,
                    "k=" + std::to_string(opt.k) + " with " + std::to_string(points.n) + " points");
    }
    if (opt.iters == 0 || opt.restarts == 0) {
        throw Error(ErrorCode::kConfigInvalid, "kmeans iters and restarts must be positive");
    }
    std::vector<KMeansResult> runs(opt.restarts);
    parallel_for(opt.restarts, opt.workers, [&](std::size_t r) {
        runs[r] = detail::kmeans_single(points, opt, static_cast<std::uint32_t>(r));
    });
    std::size_t best = 0;
    for (std::size_t r = 1; r < runs.size(); ++r) {
        if (runs[r].sse < runs[best].sse) {
            best = r;
        }
    }
    return std::move(runs[best]);
}

}  // namespace relalign
