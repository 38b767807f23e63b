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


#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "relalign/caption.hpp"
#include "support.hpp"

namespace relalign {
namespace {

using testing::TempDir;

// Anchor text basis of width d_t built from explicit rows.
AnchorBasis
text_basis(const std::vector<std::vector<float>>& rows) {
    std::vector<float> data;
    std::vector<std::string> ids;
    std::vector<AnchorPair> pairs;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        data.insert(data.end(), rows[i].begin(), rows[i].end());
        ids.push_back("t" + std::to_string(i));
        pairs.push_back({"i" + std::to_string(i), "t" + std::to_string(i)});
    }
    const EmbeddingStore store(Modality::kText, static_cast<std::uint32_t>(rows.front().size()), ids, data);
    return AnchorBasis::resolve(AnchorSet(pairs), store);
}

AnchorBasis
random_text_basis(std::size_t m, std::uint32_t d_t, std::mt19937_64& rng) {
    std::normal_distribution<float> normal;
    std::vector<std::vector<float>> rows(m, std::vector<float>(d_t));
    for (auto& r : rows) {
        for (auto& v : r) {
            v = normal(rng);
        }
    }
    return text_basis(rows);
}

RelRep
make_rel(std::uint32_t dim, std::vector<std::uint32_t> idx, std::vector<double> val) {
    RelRep r;
    r.id = "x";
    r.dim = dim;
    r.k = static_cast<std::uint32_t>(idx.size());
    r.idx = std::move(idx);
    r.val = std::move(val);
    return r;
}

CandidateCaption
at_angle(const std::string& id, double cosine, std::uint32_t rank, const std::string& image = "img") {
    return {id, image, {static_cast<float>(cosine), static_cast<float>(std::sqrt(1.0 - cosine * cosine))}, rank};
}

TEST(QualityScore, SelfAndDisjoint) {
    const auto a = make_rel(5, {0, 2}, {0.4, 0.3});
    const auto b = make_rel(5, {1, 4}, {0.4, 0.3});
    EXPECT_NEAR(quality_score(a, a), 1.0, 1e-12);
    EXPECT_EQ(quality_score(a, b), 0.0);
}

TEST(QualityScore, SameKernelAsRelRepCosine) {
    std::mt19937_64 rng(13);
    for (int t = 0; t < 1000; ++t) {
        const auto a = testing::random_relrep(32, 8, rng, "a", t % 2 == 0);
        const auto b = testing::random_relrep(32, 8, rng, "b", t % 2 == 0);
        EXPECT_EQ(quality_score(a, b), relrep_cosine(a, b));
    }
}

class AdjudicateTest : public ::testing::Test {
 protected:
    // image relrep (1, 0) over two orthogonal anchor texts: a candidate at
    // angle theta scores cos(theta)
    AnchorBasis basis = text_basis({{1, 0}, {0, 1}});
    RelRep image_rel = make_rel(2, {0, 1}, {1.0, 0.0});

    WeaklyAlignedPair
    retrieved(double score) const {
        return {"img", "txt-1", score, Provenance::kRetrieved, 2, 2};
    }
};

TEST_F(AdjudicateTest, BetterCandidateReplaces) {
    const std::vector<CandidateCaption> cands{at_angle("c1", 0.5, 1), at_angle("c2", 0.7, 2)};
    const auto out = adjudicate(retrieved(0.6), image_rel, cands, basis);
    EXPECT_EQ(out.provenance, Provenance::kGenerated);
    EXPECT_EQ(out.partner_id, "c2");
    EXPECT_NEAR(out.score, 0.7, 1e-6);
    EXPECT_EQ(out.image_id, "img");
    EXPECT_EQ(out.k_used, 2u);
    EXPECT_EQ(out.m_used, 2u);
}

TEST_F(AdjudicateTest, WorseCandidateKeepsRetrieved) {
    const std::vector<CandidateCaption> cands{at_angle("c1", 0.7, 1)};
    EXPECT_EQ(adjudicate(retrieved(0.8), image_rel, cands, basis), retrieved(0.8));
}

TEST_F(AdjudicateTest, EmptyCandidatesKeepRetrieved) {
    EXPECT_EQ(adjudicate(retrieved(0.3), image_rel, {}, basis), retrieved(0.3));
}

TEST_F(AdjudicateTest, ExactTieKeepsRetrieved) {
    const std::vector<CandidateCaption> cands{{"c1", "img", {1.0f, 0.0f}, 1}};
    EXPECT_EQ(adjudicate(retrieved(1.0), image_rel, cands, basis), retrieved(1.0));
}

TEST_F(AdjudicateTest, TiedCandidatesPreferLowerRank) {
    const std::vector<CandidateCaption> cands{{"c3", "img", {2.0f, 0.0f}, 3}, {"c1", "img", {1.0f, 0.0f}, 1},
                                              {"c2", "img", {5.0f, 0.0f}, 2}};
    const auto out = adjudicate(retrieved(0.2), image_rel, cands, basis);
    EXPECT_EQ(out.partner_id, "c1");
}

TEST_F(AdjudicateTest, Errors) {
    try {
        const std::vector<CandidateCaption> cands{at_angle("c1", 0.5, 1), at_angle("c2", 0.5, 1, "other")};
        adjudicate(retrieved(0.6), image_rel, cands, basis);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kCandidateImageMismatch);
        EXPECT_EQ(e.record(), 1u);
    }
    try {
        const std::vector<CandidateCaption> cands{{"c1", "img", {1.0f, 0.0f, 0.0f}, 1}};
        adjudicate(retrieved(0.6), image_rel, cands, basis);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
        EXPECT_EQ(e.record(), 0u);
    }
    const std::vector<CandidateCaption> zero{{"c1", "img", {0.0f, 0.0f}, 1}};
    EXPECT_THROW(adjudicate(retrieved(0.6), image_rel, zero, basis), Error);
}

TEST_F(AdjudicateTest, NeverLowersScoreAndIsIdempotent) {
    std::mt19937_64 rng(77);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 0; t < 2000; ++t) {
        std::vector<CandidateCaption> cands;
        const int n = std::uniform_int_distribution<int>(0, 5)(rng);
        for (int c = 0; c < n; ++c) {
            cands.push_back({"c" + std::to_string(c), "img",
                             {static_cast<float>(u(rng)), static_cast<float>(u(rng))},
                             static_cast<std::uint32_t>(1 + c % 3)});
        }
        const auto r = retrieved(u(rng));
        const auto out = adjudicate(r, image_rel, cands, basis);
        EXPECT_GE(out.score, r.score);
        EXPECT_EQ(adjudicate(r, image_rel, cands, basis), out);
    }
}

TEST(BuildPrefix, SecondTermIsolated) {
    std::mt19937_64 rng(1);
    const auto basis = random_text_basis(6, 4, rng);
    PrefixWeights w{4, 4, std::vector<double>(4, 0.0), std::vector<double>(16, 0.0)};
    for (int i = 0; i < 4; ++i) {
        w.w_e[i * 4 + i] = 1.0;
    }
    const auto rel = make_rel(6, {0, 2, 5}, {0.1, 0.9, 0.4});
    const auto p = build_prefix(rel, basis, w);
    ASSERT_EQ(p.size(), 3u);
    EXPECT_EQ(p.anchor_indices, (std::vector<std::uint32_t>{2, 5, 0}));
    for (std::size_t r = 0; r < p.size(); ++r) {
        const auto e = basis.row(p.anchor_indices[r]);
        for (std::size_t c = 0; c < 4; ++c) {
            EXPECT_EQ(p.row(r)[c], static_cast<double>(e[c]));
        }
    }
}

TEST(BuildPrefix, FirstTermIsolated) {
    std::mt19937_64 rng(2);
    const auto basis = random_text_basis(5, 3, rng);
    auto w = random_prefix_weights(3, 7, 9);
    std::fill(w.w_e.begin(), w.w_e.end(), 0.0);
    const auto rel = make_rel(5, {1, 3}, {-0.2, 0.6});
    const auto p = build_prefix(rel, basis, w);
    EXPECT_EQ(p.anchor_indices, (std::vector<std::uint32_t>{3, 1}));
    for (std::size_t r = 0; r < p.size(); ++r) {
        const double s = r == 0 ? 0.6 : -0.2;
        for (std::size_t c = 0; c < 7; ++c) {
            EXPECT_EQ(p.row(r)[c], s * w.w_r[c]);
        }
    }
}

// Full M x d product through Eigen, then the kept rows in ranked order.
Eigen::MatrixXd
dense_prefix_oracle(const RelRep& rel, const AnchorBasis& basis, const PrefixWeights& w) {
    Eigen::VectorXd r = Eigen::VectorXd::Zero(rel.dim);
    for (std::size_t j = 0; j < rel.nnz(); ++j) {
        r[rel.idx[j]] = rel.val[j];
    }
    Eigen::MatrixXd e(basis.size(), basis.dim());
    for (std::size_t a = 0; a < basis.size(); ++a) {
        for (std::size_t c = 0; c < basis.dim(); ++c) {
            e(a, c) = basis.row(a)[c];
        }
    }
    const Eigen::RowVectorXd wr = Eigen::Map<const Eigen::RowVectorXd>(w.w_r.data(), w.d);
    const Eigen::MatrixXd we =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(w.w_e.data(),
                                                                                                 w.d_t, w.d);
    const Eigen::MatrixXd full = r * wr + e * we;
    std::vector<std::size_t> order(rel.nnz());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return rel.val[a] > rel.val[b]; });
    Eigen::MatrixXd out(order.size(), w.d);
    for (std::size_t i = 0; i < order.size(); ++i) {
        out.row(i) = full.row(rel.idx[order[i]]);
    }
    return out;
}

TEST(BuildPrefix, SmallShapeMatchesDenseOracle) {
    std::mt19937_64 rng(3);
    const auto basis = random_text_basis(2, 2, rng);
    const auto w = random_prefix_weights(2, 3, 4, 1.0);
    const auto rel = make_rel(2, {0, 1}, {0.3, 0.8});
    const auto p = build_prefix(rel, basis, w);
    const auto want = dense_prefix_oracle(rel, basis, w);
    for (Eigen::Index r = 0; r < want.rows(); ++r) {
        for (Eigen::Index c = 0; c < want.cols(); ++c) {
            EXPECT_NEAR(p.row(r)[c], want(r, c), 1e-6);
        }
    }
}

TEST(BuildPrefix, TiedValuesOrderByAnchorIndex) {
    std::mt19937_64 rng(4);
    const auto basis = random_text_basis(6, 2, rng);
    const auto w = random_prefix_weights(2, 2, 1);
    const auto p = build_prefix(make_rel(6, {0, 1, 3, 4}, {0.5, 0.7, 0.5, 0.7}), basis, w);
    EXPECT_EQ(p.anchor_indices, (std::vector<std::uint32_t>{1, 4, 0, 3}));
}

TEST(BuildPrefix, SuperpositionOfFirstTerm) {
    std::mt19937_64 rng(5);
    const auto basis = random_text_basis(8, 5, rng);
    const auto w = random_prefix_weights(5, 6, 2, 0.5);
    const auto r1 = make_rel(8, {1, 4, 6}, {0.9, 0.3, 0.5});
    const auto r2 = make_rel(8, {1, 4, 6}, {-0.2, 0.35, 0.1});
    const auto sum = make_rel(8, {1, 4, 6}, {0.7, 0.65, 0.6});
    const auto p1 = build_prefix(r1, basis, w);
    const auto p2 = build_prefix(r2, basis, w);
    const auto ps = build_prefix(sum, basis, w);
    auto row_for = [](const PrefixMatrix& p, std::uint32_t a) {
        for (std::size_t r = 0; r < p.size(); ++r) {
            if (p.anchor_indices[r] == a) {
                return p.row(r);
            }
        }
        return std::span<const double>{};
    };
    for (std::uint32_t a : {1u, 4u, 6u}) {
        const auto e = basis.row(a);
        for (std::size_t c = 0; c < 6; ++c) {
            double ew = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                ew += e[j] * w.w_e[j * 6 + c];
            }
            EXPECT_NEAR(row_for(ps, a)[c], row_for(p1, a)[c] + row_for(p2, a)[c] - ew, 1e-6);
        }
    }
}

TEST(BuildPrefix, ShapeErrors) {
    std::mt19937_64 rng(6);
    const auto basis = random_text_basis(4, 3, rng);
    const auto rel = make_rel(4, {0}, {1.0});
    EXPECT_THROW(build_prefix(rel, basis, random_prefix_weights(2, 3, 1)), Error);
    EXPECT_THROW(build_prefix(make_rel(5, {0}, {1.0}), basis, random_prefix_weights(3, 3, 1)), Error);
    auto w = random_prefix_weights(3, 3, 1);
    w.w_r.pop_back();
    EXPECT_THROW(build_prefix(rel, basis, w), Error);
}

TEST(PrefixWeightsJson, RoundTrip) {
    const auto w = random_prefix_weights(3, 4, 8);
    const auto back = prefix_weights_from_json(to_json(w));
    EXPECT_EQ(back.d, w.d);
    EXPECT_EQ(back.d_t, w.d_t);
    EXPECT_EQ(back.w_r, w.w_r);
    EXPECT_EQ(back.w_e, w.w_e);
}

TEST(ExportWeights, WeightIsScoreInInputOrder) {
    const std::vector<WeaklyAlignedPair> pairs{{"a", "x", 1.0, Provenance::kRetrieved, 50, 100},
                                               {"b", "c7", 0.25, Provenance::kGenerated, 50, 100},
                                               {"c", "z", -0.125, Provenance::kRetrieved, 50, 100}};
    const auto w = export_weights(pairs);
    ASSERT_EQ(w.size(), 3u);
    EXPECT_EQ(w[0].weight, 1.0);
    EXPECT_EQ(w[1].image_id, "b");
    EXPECT_EQ(w[1].provenance, Provenance::kGenerated);
    EXPECT_EQ(weight_line(w[0]), R"({"image_id":"a","partner_id":"x","weight":1,"provenance":"retrieved"})");
}

TEST(ExportWeights, FileRoundTripWithinTwelveDigits) {
    TempDir dir("weights");
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<WeaklyAlignedPair> pairs;
    for (int i = 0; i < 500; ++i) {
        pairs.push_back({"i" + std::to_string(i), "t" + std::to_string(i), u(rng),
                         i % 3 == 0 ? Provenance::kGenerated : Provenance::kRetrieved, 50, 512});
    }
    write_weights(dir / "w.jsonl", export_weights(pairs));
    const auto back = read_weights(dir / "w.jsonl");
    ASSERT_EQ(back.size(), pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        EXPECT_NEAR(back[i].weight, pairs[i].score, 1e-9);
        EXPECT_EQ(back[i].partner_id, pairs[i].partner_id);
        EXPECT_EQ(back[i].provenance, pairs[i].provenance);
    }
}

TEST(PairJson, RoundTrip) {
    const WeaklyAlignedPair p{"a", "b", 0.123456789, Provenance::kGenerated, 50, 8192};
    EXPECT_EQ(pair_from_json(to_json(p)), p);
}

TEST(Candidates, RegistryRoundTripAndMismatch) {
    TempDir dir("cands");
    const std::vector<CandidateCaption> cands{{"c0", "img-1", {0.5f, 0.25f}, 1}, {"c1", "img-1", {1.0f, -2.0f}, 2},
                                              {"c2", "img-9", {3.0f, 1.0f}, 1}};
    write_candidates(dir / "reg.jsonl", dir / "emb.emb", cands);
    const auto back = read_candidates(dir / "reg.jsonl", dir / "emb.emb");
    ASSERT_EQ(back.size(), 3u);
    for (std::size_t c = 0; c < 3; ++c) {
        EXPECT_EQ(back[c].candidate_id, cands[c].candidate_id);
        EXPECT_EQ(back[c].image_id, cands[c].image_id);
        EXPECT_EQ(back[c].rank_in_sample, cands[c].rank_in_sample);
        EXPECT_EQ(back[c].embedding, cands[c].embedding);
    }
    const std::vector<CandidateCaption> other{{"zz", "img-1", {0.5f, 0.25f}, 1}};
    write_candidates(dir / "reg2.jsonl", dir / "emb2.emb", other);
    EXPECT_THROW(read_candidates(dir / "reg.jsonl", dir / "emb2.emb"), Error);
}

}  // namespace
}  // namespace relalign
