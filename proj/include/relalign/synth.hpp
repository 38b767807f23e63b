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
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "relalign/embed_store.hpp"
#include "relalign/error.hpp"
#include "relalign/jsonl.hpp"
#include "relalign/random.hpp"

namespace relalign {

enum class MapKind { kOrthonormal, kRandomGaussian };

inline std::string_view
map_kind_name(MapKind k) {
    return k == MapKind::kOrthonormal ? "orthonormal" : "random_gaussian";
}

inline MapKind
parse_map_kind(std::string_view name) {
    if (name == "orthonormal") {
        return MapKind::kOrthonormal;
    }
    if (name == "random_gaussian") {
        return MapKind::kRandomGaussian;
    }
    throw Error(ErrorCode::kParseError, "unknown map kind '" + std::string(name) + "'");
}

/// Paired-embedding generator settings. A shared latent z is pushed through
/// two independent linear maps, one per modality, plus isotropic noise whose
/// norm is about `noise_sigma` times the signal norm.
struct SynthSpec {
    std::size_t n_pairs = 2000;
    // aligned pairs available for anchor selection; 0 means n_pairs
    std::size_t pool_pairs = 0;
    std::uint32_t latent_dim = 16;
    std::uint32_t image_dim = 64;
    std::uint32_t text_dim = 48;
    double noise_sigma = 0.0;
    MapKind map_kind = MapKind::kOrthonormal;
    // > 0 draws latents from a mixture of this many Gaussian topics
    std::uint32_t latent_clusters = 0;
    double cluster_spread = 0.5;
    // topic t is drawn with weight 1 / (t + 1)^cluster_skew; 0 is uniform
    double cluster_skew = 0.0;
    std::uint64_t seed = 0;

    std::size_t
    pool_size() const noexcept {
        return pool_pairs == 0 ? n_pairs : pool_pairs;
    }

    void
    validate() const {
        auto fail = [](const std::string& why) { throw Error(ErrorCode::kSpecInvalid, why); };
        if (latent_dim == 0 || image_dim == 0 || text_dim == 0) {
            fail("dimensions must be positive");
        }
        if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
            fail("noise_sigma must be finite and >= 0");
        }
        if (map_kind == MapKind::kOrthonormal && latent_dim > std::min(image_dim, text_dim)) {
            fail("orthonormal maps need latent_dim <= min(image_dim, text_dim)");
        }
        if (latent_clusters > 0 && !(cluster_spread > 0.0)) {
            fail("cluster_spread must be positive");
        }
        if (!(cluster_skew >= 0.0) || !std::isfinite(cluster_skew)) {
            fail("cluster_skew must be finite and >= 0");
        }
    }
};

struct SynthData {
    EmbeddingStore images;
    EmbeddingStore texts;
    EmbeddingStore aligned_images;
    EmbeddingStore aligned_texts;
    // ground_truth[i] is the ordinal in `texts` of image i's partner
    std::vector<std::uint32_t> ground_truth;
};

namespace detail {

// out_dim x in_dim, row-major
inline std::vector<double>
make_map(std::uint32_t out_dim, std::uint32_t in_dim, MapKind kind, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> m(static_cast<std::size_t>(out_dim) * in_dim);
    for (auto& v : m) {
        v = normal(rng);
    }
    if (kind == MapKind::kOrthonormal) {
        // modified Gram-Schmidt over columns
        for (std::uint32_t c = 0; c < in_dim; ++c) {
            for (std::uint32_t p = 0; p < c; ++p) {
                double proj = 0.0;
                for (std::uint32_t r = 0; r < out_dim; ++r) {
                    proj += m[r * in_dim + c] * m[r * in_dim + p];
                }
                for (std::uint32_t r = 0; r < out_dim; ++r) {
                    m[r * in_dim + c] -= proj * m[r * in_dim + p];
                }
            }
            double norm = 0.0;
            for (std::uint32_t r = 0; r < out_dim; ++r) {
                norm += m[r * in_dim + c] * m[r * in_dim + c];
            }
            norm = std::sqrt(norm);
            for (std::uint32_t r = 0; r < out_dim; ++r) {
                m[r * in_dim + c] /= norm;
            }
        }
    }
    return m;
}

inline std::vector<float>
embed(const std::vector<double>& map,
      std::uint32_t out_dim,
      const std::vector<double>& latents,
      std::uint32_t latent_dim,
      double sigma,
      Rng& noise_rng) {
    const std::size_t n = latents.size() / latent_dim;
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<float> out(n * out_dim);
    std::vector<double> v(out_dim);
    for (std::size_t i = 0; i < n; ++i) {
        const double* z = latents.data() + i * latent_dim;
        double norm2 = 0.0;
        for (std::uint32_t r = 0; r < out_dim; ++r) {
            double acc = 0.0;
            for (std::uint32_t c = 0; c < latent_dim; ++c) {
                acc += map[r * latent_dim + c] * z[c];
            }
            v[r] = acc;
            norm2 += acc * acc;
        }
        const double scale = sigma * std::sqrt(norm2 / out_dim);
        for (std::uint32_t r = 0; r < out_dim; ++r) {
            const double noisy = sigma > 0.0 ? v[r] + scale * normal(noise_rng) : v[r];
            out[i * out_dim + r] = static_cast<float>(noisy);
        }
    }
    return out;
}

inline std::vector<std::string>
make_ids(std::string_view prefix, std::size_t n) {
    std::vector<std::string> ids;
    ids.reserve(n);
    char buf[32];
    for (std::size_t i = 0; i < n; ++i) {
        std::snprintf(buf, sizeof(buf), "%06zu", i);
        ids.push_back(std::string(prefix) + buf);
    }
    return ids;
}

}  // namespace detail

/// Generates evaluation stores (pairs i <-> i), and a disjoint aligned pool
/// drawn from the same latent distribution. Deterministic in spec.seed.
inline SynthData
synth_generate(const SynthSpec& spec) {
    spec.validate();
    Rng map_rng(derive_seed(spec.seed, 0));
    const auto image_map = detail::make_map(spec.image_dim, spec.latent_dim, spec.map_kind, map_rng);
    const auto text_map = detail::make_map(spec.text_dim, spec.latent_dim, spec.map_kind, map_rng);

    const std::size_t total = spec.n_pairs + spec.pool_size();
    Rng latent_rng(derive_seed(spec.seed, 1));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> centers;
    if (spec.latent_clusters > 0) {
        centers.resize(static_cast<std::size_t>(spec.latent_clusters) * spec.latent_dim);
        for (auto& v : centers) {
            v = normal(latent_rng);
        }
    }
    std::vector<double> topic_weights(std::max<std::uint32_t>(spec.latent_clusters, 1));
    for (std::size_t t = 0; t < topic_weights.size(); ++t) {
        topic_weights[t] = std::pow(static_cast<double>(t + 1), -spec.cluster_skew);
    }
    std::discrete_distribution<std::uint32_t> topic(topic_weights.begin(), topic_weights.end());
    std::vector<double> latents(total * spec.latent_dim);
    for (std::size_t i = 0; i < total; ++i) {
        const double* center = nullptr;
        double spread = 1.0;
        if (spec.latent_clusters > 0) {
            center = centers.data() + static_cast<std::size_t>(topic(latent_rng)) * spec.latent_dim;
            spread = spec.cluster_spread;
        }
        for (std::uint32_t c = 0; c < spec.latent_dim; ++c) {
            const double base = center == nullptr ? 0.0 : center[c];
            latents[i * spec.latent_dim + c] = base + spread * normal(latent_rng);
        }
    }

    Rng image_noise(derive_seed(spec.seed, 2));
    Rng text_noise(derive_seed(spec.seed, 3));
    auto image_data =
        detail::embed(image_map, spec.image_dim, latents, spec.latent_dim, spec.noise_sigma, image_noise);
    auto text_data =
        detail::embed(text_map, spec.text_dim, latents, spec.latent_dim, spec.noise_sigma, text_noise);

    auto split = [&](const std::vector<float>& all, std::uint32_t dim, bool pool) {
        const std::size_t begin = pool ? spec.n_pairs * dim : 0;
        const std::size_t end = pool ? all.size() : spec.n_pairs * dim;
        return std::vector<float>(all.begin() + begin, all.begin() + end);
    };

    SynthData out;
    out.images = EmbeddingStore(Modality::kImage, spec.image_dim,
                                detail::make_ids("img-", spec.n_pairs), split(image_data, spec.image_dim, false));
    out.texts = EmbeddingStore(Modality::kText, spec.text_dim, detail::make_ids("txt-", spec.n_pairs),
                               split(text_data, spec.text_dim, false));
    out.aligned_images = EmbeddingStore(Modality::kImage, spec.image_dim,
                                        detail::make_ids("anc-img-", spec.pool_size()),
                                        split(image_data, spec.image_dim, true));
    out.aligned_texts = EmbeddingStore(Modality::kText, spec.text_dim,
                                       detail::make_ids("anc-txt-", spec.pool_size()),
                                       split(text_data, spec.text_dim, true));
    out.ground_truth.resize(spec.n_pairs);
    for (std::size_t i = 0; i < spec.n_pairs; ++i) {
        out.ground_truth[i] = static_cast<std::uint32_t>(i);
    }
    return out;
}

inline Json
to_json(const SynthSpec& s) {
    return Json{{"n_pairs", s.n_pairs},
                {"pool_pairs", s.pool_pairs},
                {"latent_dim", s.latent_dim},
                {"image_dim", s.image_dim},
                {"text_dim", s.text_dim},
                {"noise_sigma", s.noise_sigma},
                {"map_kind", map_kind_name(s.map_kind)},
                {"latent_clusters", s.latent_clusters},
                {"cluster_spread", s.cluster_spread},
                {"cluster_skew", s.cluster_skew},
                {"seed", s.seed}};
}

inline SynthSpec
synth_spec_from_json(const Json& j) {
    SynthSpec s;
    try {
        s.n_pairs = j.value("n_pairs", s.n_pairs);
        s.pool_pairs = j.value("pool_pairs", s.pool_pairs);
        s.latent_dim = j.value("latent_dim", s.latent_dim);
        s.image_dim = j.value("image_dim", s.image_dim);
        s.text_dim = j.value("text_dim", s.text_dim);
        s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
        s.map_kind = parse_map_kind(j.value("map_kind", std::string(map_kind_name(s.map_kind))));
        s.latent_clusters = j.value("latent_clusters", s.latent_clusters);
        s.cluster_spread = j.value("cluster_spread", s.cluster_spread);
        s.cluster_skew = j.value("cluster_skew", s.cluster_skew);
        s.seed = j.value("seed", s.seed);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kSpecInvalid, e.what());
    }
    return s;
}

}  // namespace relalign
