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


#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "relalign/retrieval.hpp"
#include "relalign/synth.hpp"
#include "support.hpp"

namespace relalign {
namespace {

using testing::random_relrep;
using testing::TempDir;

RelRep
make_rel(const std::string& id, std::uint32_t dim, std::vector<std::uint32_t> idx, std::vector<double> val) {
    RelRep r;
    r.id = id;
    r.dim = dim;
    r.k = static_cast<std::uint32_t>(idx.size());
    r.idx = std::move(idx);
    r.val = std::move(val);
    return r;
}

std::vector<RelRep>
random_corpus(std::size_t n, std::uint32_t m, std::uint32_t k, std::mt19937_64& rng, bool coarse) {
    std::vector<RelRep> out;
    for (std::size_t t = 0; t < n; ++t) {
        out.push_back(random_relrep(m, k, rng, "t" + std::to_string(t), coarse));
    }
    return out;
}

TEST(BuildIndex, SingleRelRepGivesSingletonPostings) {
    const std::vector<RelRep> texts{make_rel("a", 6, {1, 3, 4}, {0.2, 0.5, -0.1})};
    const auto index = build_index(texts);
    EXPECT_EQ(index.size(), 1u);
    EXPECT_EQ(index.dim(), 6u);
    EXPECT_EQ(index.total_postings(), 3u);
    for (std::uint32_t a : {1u, 3u, 4u}) {
        EXPECT_EQ(index.postings(a).size(), 1u);
    }
    for (std::uint32_t a : {0u, 2u, 5u}) {
        EXPECT_TRUE(index.postings(a).empty());
    }
}

TEST(BuildIndex, DisjointSupportsShareNoPosting) {
    const std::vector<RelRep> texts{make_rel("a", 4, {0, 1}, {0.3, 0.4}), make_rel("b", 4, {2, 3}, {0.1, 0.9})};
    const auto index = build_index(texts);
    for (std::uint32_t a = 0; a < 4; ++a) {
        EXPECT_LE(index.postings(a).size(), 1u);
    }
}

TEST(BuildIndex, ReproducesEveryStoredValue) {
    std::mt19937_64 rng(500);
    const auto texts = random_corpus(500, 64, 10, rng, false);
    const auto index = build_index(texts);
    std::size_t total = 0;
    for (std::size_t t = 0; t < texts.size(); ++t) {
        EXPECT_EQ(index.norm(t), relrep_norm(texts[t]));
        EXPECT_EQ(index.text_id(t), texts[t].id);
        for (std::size_t j = 0; j < texts[t].nnz(); ++j) {
            const auto posts = index.postings(texts[t].idx[j]);
            auto it = std::find_if(posts.begin(), posts.end(), [&](const auto& p) { return p.ordinal == t; });
            ASSERT_NE(it, posts.end());
            EXPECT_EQ(it->value, texts[t].val[j]);
        }
        total += texts[t].nnz();
    }
    EXPECT_EQ(index.total_postings(), total);
    for (std::uint32_t a = 0; a < 64; ++a) {
        const auto posts = index.postings(a);
        for (std::size_t p = 1; p < posts.size(); ++p) {
            EXPECT_LT(posts[p - 1].ordinal, posts[p].ordinal);
        }
    }
}

TEST(BuildIndex, Errors) {
    const std::vector<RelRep> mixed{make_rel("a", 4, {0}, {0.3}), make_rel("b", 5, {0}, {0.3})};
    try {
        build_index(mixed);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kDimMismatch);
        EXPECT_EQ(e.record(), 1u);
    }
    const std::vector<RelRep> zero{make_rel("a", 4, {0}, {0.3}), make_rel("b", 4, {1, 2}, {0.0, 0.0})};
    try {
        build_index(zero);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kZeroRelRep);
        EXPECT_EQ(e.record(), 1u);
    }
}

TEST(RetrieveBruteforce, QueryEqualToTextRanksItFirst) {
    std::mt19937_64 rng(1);
    auto texts = random_corpus(30, 20, 5, rng, false);
    RelRep query = texts[17];
    query.id = "q";
    const auto r = retrieve_bruteforce(query, texts, 1);
    ASSERT_EQ(r.ranked.size(), 1u);
    EXPECT_EQ(r.ranked[0].text_id, "t17");
    EXPECT_NEAR(r.ranked[0].score, 1.0, 1e-12);
    EXPECT_EQ(r.image_id, "q");
}

TEST(RetrieveBruteforce, FullDepthIsSortedDescending) {
    std::mt19937_64 rng(2);
    const auto texts = random_corpus(40, 12, 4, rng, true);
    const auto query = random_relrep(12, 4, rng, "q", true);
    const auto r = retrieve_bruteforce(query, texts, 40);
    ASSERT_EQ(r.ranked.size(), 40u);
    for (std::size_t i = 1; i < r.ranked.size(); ++i) {
        const auto& a = r.ranked[i - 1];
        const auto& b = r.ranked[i];
        EXPECT_TRUE(a.score > b.score || (a.score == b.score && a.text_ordinal < b.text_ordinal));
    }
    EXPECT_EQ(retrieve_bruteforce(query, texts, 100).ranked.size(), 40u);
}

TEST(RetrieveBruteforce, DimMismatch) {
    const std::vector<RelRep> texts{make_rel("a", 4, {0}, {0.3})};
    EXPECT_THROW(retrieve_bruteforce(make_rel("q", 5, {0}, {1.0}), texts, 1), Error);
}

TEST(RetrieveBruteforce, SharedLatentNoiselessPairsFindEachOther) {
    // 3 query pairs plus an 8-pair aligned pool, pushed through orthonormal
    // maps of different widths
    std::mt19937_64 rng(3);
    std::normal_distribution<double> normal;
    const int latent = 4;
    auto orthonormal = [&](int rows) {
        Eigen::MatrixXd g(rows, latent);
        for (Eigen::Index i = 0; i < g.size(); ++i) {
            g.data()[i] = normal(rng);
        }
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
        return Eigen::MatrixXd(qr.householderQ() * Eigen::MatrixXd::Identity(rows, latent));
    };
    const Eigen::MatrixXd a = orthonormal(6);
    const Eigen::MatrixXd b = orthonormal(5);
    Eigen::MatrixXd z(latent, 11);
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        z.data()[i] = normal(rng);
    }
    auto store = [&](const Eigen::MatrixXd& map, Modality mod, const std::string& prefix) {
        const Eigen::MatrixXd x = map * z;
        std::vector<float> data;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            for (Eigen::Index r = 0; r < x.rows(); ++r) {
                data.push_back(static_cast<float>(x(r, c)));
            }
        }
        return EmbeddingStore(mod, static_cast<std::uint32_t>(x.rows()), testing::numbered_ids(prefix, 11), data);
    };
    const auto images = store(a, Modality::kImage, "i");
    const auto texts = store(b, Modality::kText, "t");
    std::vector<AnchorPair> pairs;
    for (int i = 3; i < 11; ++i) {
        pairs.push_back({"i" + std::to_string(i), "t" + std::to_string(i)});
    }
    const AnchorSet anchors(pairs);
    std::vector<RelRep> text_rels;
    for (int t = 0; t < 3; ++t) {
        text_rels.push_back(relrep_text("t" + std::to_string(t), texts, anchors, 8));
    }
    for (int i = 0; i < 3; ++i) {
        const auto q = relrep_image("i" + std::to_string(i), images, anchors, 8);
        for (std::size_t j = 0; j < q.nnz(); ++j) {
            EXPECT_NEAR(q.val[j], text_rels[i].val[j], 1e-5);
        }
        const auto r = retrieve_bruteforce(q, text_rels, 3);
        EXPECT_EQ(r.ranked[0].text_ordinal, static_cast<std::uint32_t>(i));
    }
}

TEST(RetrieveIndexed, EqualsBruteforceIncludingTies) {
    std::mt19937_64 rng(4);
    for (int trial = 0; trial < 30; ++trial) {
        const std::uint32_t m = std::uniform_int_distribution<std::uint32_t>(4, 40)(rng);
        const std::uint32_t k = std::uniform_int_distribution<std::uint32_t>(1, m)(rng);
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 80)(rng);
        const bool coarse = trial % 2 == 0;
        const auto texts = random_corpus(n, m, k, rng, coarse);
        const auto index = build_index(texts);
        for (int q = 0; q < 5; ++q) {
            const auto query = random_relrep(m, k, rng, "q", coarse);
            for (std::size_t depth : {std::size_t{1}, std::size_t{3}, n}) {
                const auto want = retrieve_bruteforce(query, texts, depth);
                const auto got = retrieve_indexed(query, index, depth);
                ASSERT_EQ(got.ranked.size(), want.ranked.size());
                for (std::size_t i = 0; i < want.ranked.size(); ++i) {
                    EXPECT_EQ(got.ranked[i].text_ordinal, want.ranked[i].text_ordinal);
                    EXPECT_EQ(got.ranked[i].text_id, want.ranked[i].text_id);
                    EXPECT_EQ(got.ranked[i].score, want.ranked[i].score);
                }
            }
        }
    }
}

TEST(RetrieveIndexed, DisjointQueryScoresZeroInOrdinalOrder) {
    const std::vector<RelRep> texts{make_rel("a", 6, {0, 1}, {0.5, 0.5}), make_rel("b", 6, {1, 2}, {0.2, 0.9}),
                                    make_rel("c", 6, {0}, {0.7})};
    const auto index = build_index(texts);
    const auto r = retrieve_indexed(make_rel("q", 6, {4, 5}, {0.3, 0.3}), index, 3);
    ASSERT_EQ(r.ranked.size(), 3u);
    for (std::uint32_t i = 0; i < 3; ++i) {
        EXPECT_EQ(r.ranked[i].text_ordinal, i);
        EXPECT_EQ(r.ranked[i].score, 0.0);
    }
}

TEST(RetrieveIndexed, SingleTextCorpus) {
    const std::vector<RelRep> texts{make_rel("only", 3, {1}, {0.4})};
    const auto index = build_index(texts);
    for (std::size_t depth : {1u, 2u, 10u}) {
        const auto r = retrieve_indexed(make_rel("q", 3, {0, 1}, {0.1, 0.2}), index, depth);
        ASSERT_EQ(r.ranked.size(), 1u);
        EXPECT_EQ(r.ranked[0].text_id, "only");
    }
}

TEST(RetrieveIndexed, Errors) {
    const std::vector<RelRep> texts{make_rel("a", 3, {1}, {0.4})};
    const auto index = build_index(texts);
    EXPECT_THROW(retrieve_indexed(make_rel("q", 4, {0}, {1.0}), index, 1), Error);
    EXPECT_THROW(retrieve_indexed(make_rel("q", 3, {0}, {0.0}), index, 1), Error);
}

TEST(RetrieveAll, PerfectMatchingAndEmptyInput) {
    std::mt19937_64 rng(5);
    const auto texts = random_corpus(50, 30, 6, rng, false);
    const auto index = build_index(texts);
    std::vector<RelRep> images = texts;
    const auto out = retrieve_all(images, index);
    ASSERT_EQ(out.size(), 50u);
    for (std::size_t i = 0; i < out.size(); ++i) {
        EXPECT_EQ(out[i].ranked[0].text_ordinal, i);
    }
    EXPECT_TRUE(retrieve_all(std::vector<RelRep>{}, index).empty());
}

TEST(RetrieveAll, WorkerCountDoesNotChangeOutput) {
    std::mt19937_64 rng(6);
    const auto texts = random_corpus(200, 40, 8, rng, true);
    std::vector<RelRep> queries;
    for (int q = 0; q < 77; ++q) {
        queries.push_back(random_relrep(40, 8, rng, "q" + std::to_string(q), true));
    }
    const auto index = build_index(texts);
    const auto one = retrieve_all(queries, index, 1, 5);
    for (std::size_t workers : {2u, 3u, 8u, 200u}) {
        const auto many = retrieve_all(queries, index, workers, 5);
        ASSERT_EQ(many.size(), one.size());
        for (std::size_t q = 0; q < one.size(); ++q) {
            ASSERT_EQ(many[q].ranked.size(), one[q].ranked.size());
            for (std::size_t i = 0; i < one[q].ranked.size(); ++i) {
                EXPECT_EQ(many[q].ranked[i].text_ordinal, one[q].ranked[i].text_ordinal);
                EXPECT_EQ(many[q].ranked[i].score, one[q].ranked[i].score);
            }
        }
    }
}

TEST(RetrieveAll, ErrorNamesTheQuery) {
    const std::vector<RelRep> texts{make_rel("a", 3, {1}, {0.4})};
    const auto index = build_index(texts);
    const std::vector<RelRep> queries{make_rel("q0", 3, {1}, {0.4}), make_rel("q1", 3, {1}, {0.0})};
    try {
        retrieve_all(queries, index);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kZeroRelRep);
        EXPECT_EQ(e.record(), 1u);
    }
}

TEST(RetrieveAll, NoiselessSyntheticBenchmarkIsPerfect) {
    SynthSpec spec;
    spec.n_pairs = 2000;
    spec.seed = 3;
    const auto data = synth_generate(spec);
    SelectionConfig sel;
    sel.m = 256;
    const auto anchors = select_random(pool_from_aligned(data.aligned_images, data.aligned_texts), sel);
    const auto image_rels =
        relrep_all(data.images, AnchorBasis::resolve(anchors, data.aligned_images), 50);
    const auto text_rels = relrep_all(data.texts, AnchorBasis::resolve(anchors, data.aligned_texts), 50);
    const auto out = retrieve_all(image_rels, build_index(text_rels));
    for (std::size_t i = 0; i < out.size(); ++i) {
        ASSERT_EQ(out[i].ranked[0].text_ordinal, data.ground_truth[i]) << "image " << i;
    }
}

TEST(RetrievalJson, RoundTrip) {
    TempDir dir("retr");
    std::mt19937_64 rng(7);
    const auto texts = random_corpus(20, 10, 3, rng, false);
    std::vector<RelRep> queries(texts.begin(), texts.begin() + 5);
    const auto results = retrieve_all(queries, build_index(texts), 1, 4);
    write_retrieval(dir / "r.jsonl", results);
    const auto back = read_retrieval(dir / "r.jsonl");
    ASSERT_EQ(back.size(), results.size());
    for (std::size_t q = 0; q < back.size(); ++q) {
        EXPECT_EQ(back[q].image_id, results[q].image_id);
        ASSERT_EQ(back[q].ranked.size(), 4u);
        for (std::size_t i = 0; i < 4; ++i) {
            EXPECT_EQ(back[q].ranked[i].text_id, results[q].ranked[i].text_id);
            EXPECT_EQ(back[q].ranked[i].score, results[q].ranked[i].score);
        }
    }
}

}  // namespace
}  // namespace relalign
