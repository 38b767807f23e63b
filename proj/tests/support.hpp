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

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "relalign/relalign.hpp"

namespace relalign::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
    explicit TempDir(const std::string& tag) {
        static std::uint64_t counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("relalign-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path&
    path() const {
        return path_;
    }

    std::filesystem::path
    operator/(const std::string& name) const {
        return path_ / name;
    }

 private:
    std::filesystem::path path_;
};

inline std::vector<std::string>
numbered_ids(const std::string& prefix, std::size_t n) {
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        ids.push_back(prefix + std::to_string(i));
    }
    return ids;
}

// Gaussian store; rows are never all-zero in practice.
inline EmbeddingStore
random_store(Modality modality, std::size_t n, std::uint32_t dim, std::mt19937_64& rng,
             const std::string& prefix = "r") {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> data(n * dim);
    for (auto& v : data) {
        v = normal(rng);
    }
    return EmbeddingStore(modality, dim, numbered_ids(prefix, n), std::move(data));
}

// Anchors (prefix + i) for i in [0, m).
inline AnchorSet
identity_anchors(std::size_t m, const std::string& image_prefix, const std::string& text_prefix) {
    std::vector<AnchorPair> pairs;
    for (std::size_t i = 0; i < m; ++i) {
        pairs.push_back({image_prefix + std::to_string(i), text_prefix + std::to_string(i)});
    }
    return AnchorSet(std::move(pairs));
}

// Dense similarity vector then full sort by (value desc, index asc); the
// first k indices, re-sorted ascending, with their values.
inline RelRep
dense_sort_oracle(const std::vector<double>& dense, std::uint32_t k) {
    std::vector<std::uint32_t> order(dense.size());
    for (std::uint32_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return dense[a] > dense[b]; });
    order.resize(k);
    std::sort(order.begin(), order.end());
    RelRep r;
    r.dim = static_cast<std::uint32_t>(dense.size());
    r.k = k;
    r.idx = order;
    for (auto i : order) {
        r.val.push_back(dense[i]);
    }
    return r;
}

// Straight textbook cosine in double precision.
inline double
direct_cosine(std::span<const float> a, std::span<const float> b) {
    double ab = 0.0;
    double aa = 0.0;
    double bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += static_cast<double>(a[i]) * b[i];
        aa += static_cast<double>(a[i]) * a[i];
        bb += static_cast<double>(b[i]) * b[i];
    }
    return ab / std::sqrt(aa * bb);
}

// Random sparse relrep over m anchors with k kept values drawn from a small
// grid so that ties are common.
inline RelRep
random_relrep(std::uint32_t m, std::uint32_t k, std::mt19937_64& rng, const std::string& id,
              bool coarse = true) {
    std::vector<double> dense(m);
    std::uniform_int_distribution<int> grid(-4, 8);
    std::uniform_real_distribution<double> fine(-1.0, 1.0);
    for (auto& v : dense) {
        v = coarse ? grid(rng) / 8.0 : fine(rng);
    }
    RelRep r = sparsify_top_k(dense, k);
    r.id = id;
    if (relrep_norm(r) == 0.0) {
        r.val[0] = 0.5;
    }
    return r;
}

}  // namespace relalign::testing
