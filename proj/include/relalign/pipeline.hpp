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
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "relalign/anchor_select.hpp"
#include "relalign/caption.hpp"
#include "relalign/embed_store.hpp"
#include "relalign/error.hpp"
#include "relalign/jsonl.hpp"
#include "relalign/relrep.hpp"
#include "relalign/retrieval.hpp"
#include "relalign/synth.hpp"

namespace relalign {

struct PipelineConfig {
    std::filesystem::path image_store;
    std::filesystem::path text_store;
    std::filesystem::path aligned_images;
    std::filesystem::path aligned_texts;
    std::filesystem::path ground_truth;          // optional
    std::filesystem::path candidate_registry;    // optional, with candidate_embeddings
    std::filesystem::path candidate_embeddings;
    std::filesystem::path out_dir = "out";
    SelectionConfig selection{Strategy::kRandom, 8192};
    std::uint32_t k = 50;
    // score with k = m (no sparsification); for ablations
    bool dense_scoring = false;
    bool normalize = true;
    bool write_relreps = false;
    std::size_t workers = 1;

    std::uint32_t
    effective_k() const {
        return dense_scoring ? static_cast<std::uint32_t>(selection.m) : k;
    }

    void
    validate() const {
        auto fail = [](const std::string& why) { throw Error(ErrorCode::kConfigInvalid, why); };
        if (image_store.empty() || text_store.empty() || aligned_images.empty() ||
            aligned_texts.empty()) {
            fail("image_store, text_store, aligned_images and aligned_texts are required");
        }
        if (selection.m == 0) {
            fail("m must be positive");
        }
        if (k == 0 || k > selection.m) {
            fail("k=" + std::to_string(k) + " must lie in [1, m=" + std::to_string(selection.m) + "]");
        }
        if (candidate_registry.empty() != candidate_embeddings.empty()) {
            fail("candidate_registry and candidate_embeddings go together");
        }
        for (const auto* p : {&image_store, &text_store, &aligned_images, &aligned_texts}) {
            if (!std::filesystem::exists(*p)) {
                fail("missing input '" + p->string() + "'");
            }
        }
    }
};

inline SelectionConfig
selection_from_json(const Json& j, SelectionConfig cfg = {}) {
    cfg.strategy = parse_strategy(j.value("strategy", std::string(strategy_name(cfg.strategy))));
    cfg.m = j.value("m", cfg.m);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.cluster_modality =
        parse_modality(j.value("cluster_modality", std::string(modality_name(cfg.cluster_modality))));
    cfg.kmeans_iters = j.value("kmeans_iters", cfg.kmeans_iters);
    cfg.kmeans_restarts = j.value("kmeans_restarts", cfg.kmeans_restarts);
    cfg.normalize = j.value("normalize", cfg.normalize);
    return cfg;
}

inline Json
to_json(const SelectionConfig& c) {
    return Json{{"strategy", strategy_name(c.strategy)},
                {"m", c.m},
                {"seed", c.seed},
                {"cluster_modality", modality_name(c.cluster_modality)},
                {"kmeans_iters", c.kmeans_iters},
                {"kmeans_restarts", c.kmeans_restarts},
                {"normalize", c.normalize}};
}

/// Reads a pipeline config. Relative paths resolve against `base_dir`.
inline PipelineConfig
pipeline_config_from_json(const Json& j, const std::filesystem::path& base_dir = {}) {
    PipelineConfig cfg;
    auto path_of = [&](const char* key) -> std::filesystem::path {
        if (!j.contains(key)) {
            return {};
        }
        std::filesystem::path p = j.at(key).get<std::string>();
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    try {
        cfg.image_store = path_of("image_store");
        cfg.text_store = path_of("text_store");
        cfg.aligned_images = path_of("aligned_images");
        cfg.aligned_texts = path_of("aligned_texts");
        cfg.ground_truth = path_of("ground_truth");
        cfg.candidate_registry = path_of("candidate_registry");
        cfg.candidate_embeddings = path_of("candidate_embeddings");
        if (j.contains("out_dir")) {
            cfg.out_dir = path_of("out_dir");
        }
        cfg.selection = selection_from_json(j.value("selection", Json::object()), cfg.selection);
        if (j.contains("m")) {
            cfg.selection.m = j.at("m").get<std::size_t>();
        }
        if (j.contains("seed")) {
            cfg.selection.seed = j.at("seed").get<std::uint64_t>();
        }
        cfg.k = j.value("k", cfg.k);
        cfg.dense_scoring = j.value("dense_scoring", cfg.dense_scoring);
        cfg.normalize = j.value("normalize", cfg.normalize);
        cfg.write_relreps = j.value("write_relreps", cfg.write_relreps);
        cfg.workers = j.value("workers", cfg.workers);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kConfigInvalid, e.what());
    }
    return cfg;
}

struct ScoreSummary {
    double min = 0.0;
    double median = 0.0;
    double mean = 0.0;
    double max = 0.0;
};

inline ScoreSummary
summarize(std::vector<double> scores) {
    ScoreSummary s;
    if (scores.empty()) {
        return s;
    }
    std::sort(scores.begin(), scores.end());
    const std::size_t n = scores.size();
    s.min = scores.front();
    s.max = scores.back();
    s.median = n % 2 == 1 ? scores[n / 2] : 0.5 * (scores[n / 2 - 1] + scores[n / 2]);
    double sum = 0.0;
    for (double v : scores) {
        sum += v;
    }
    s.mean = sum / static_cast<double>(n);
    return s;
}

struct StageTiming {
    std::string stage;
    double seconds = 0.0;
};

struct RunReport {
    std::size_t images = 0;
    std::size_t texts = 0;
    std::size_t anchors = 0;
    std::uint32_t k = 0;
    ScoreSummary scores;
    std::size_t retrieved = 0;
    std::size_t generated = 0;
    std::optional<double> recall_at_1;
    std::vector<StageTiming> timings;
    double total_seconds = 0.0;
};

inline Json
to_json(const RunReport& r) {
    Json timings = Json::array();
    for (const auto& t : r.timings) {
        timings.push_back(Json{{"stage", t.stage}, {"seconds", t.seconds}});
    }
    Json j{{"images", r.images},
           {"texts", r.texts},
           {"anchors", r.anchors},
           {"k", r.k},
           {"scores",
            {{"min", r.scores.min},
             {"median", r.scores.median},
             {"mean", r.scores.mean},
             {"max", r.scores.max}}},
           {"provenance", {{"retrieved", r.retrieved}, {"generated", r.generated}}},
           {"timings", std::move(timings)},
           {"total_seconds", r.total_seconds}};
    j["recall_at_1"] = r.recall_at_1 ? Json(*r.recall_at_1) : Json(nullptr);
    return j;
}

/// Ground-truth pairing file: JSON Lines {"image_id", "text_id"}.
inline std::unordered_map<std::string, std::string>
read_ground_truth(const std::filesystem::path& path) {
    std::unordered_map<std::string, std::string> gt;
    for (const auto& j : read_jsonl(path)) {
        try {
            gt.emplace(j.at("image_id").get<std::string>(), j.at("text_id").get<std::string>());
        } catch (const Json::exception& e) {
            throw Error(ErrorCode::kParseError, std::string("ground truth: ") + e.what());
        }
    }
    return gt;
}

inline void
write_ground_truth(const std::filesystem::path& path,
                   const EmbeddingStore& images,
                   const EmbeddingStore& texts,
                   std::span<const std::uint32_t> pairing) {
    JsonlWriter out(path);
    for (std::size_t i = 0; i < pairing.size(); ++i) {
        out.write(Json{{"image_id", images.id(i)}, {"text_id", texts.id(pairing[i])}});
    }
    out.close();
}

namespace detail {

class StageClock {
 public:
    explicit StageClock(RunReport& report) : report_(report), start_(Clock::now()), last_(start_) {
    }

    template <typename Fn>
    auto
    run(const std::string& stage, Fn&& fn) {
        try {
            if constexpr (std::is_void_v<decltype(fn())>) {
                fn();
                lap(stage);
            } else {
                auto out = fn();
                lap(stage);
                return out;
            }
        } catch (const StageError&) {
            throw;
        } catch (const std::exception& e) {
            throw StageError(stage, e);
        }
    }

    void
    finish() {
        report_.total_seconds = seconds(start_, Clock::now());
    }

 private:
    using Clock = std::chrono::steady_clock;

    static double
    seconds(Clock::time_point a, Clock::time_point b) {
        return std::chrono::duration<double>(b - a).count();
    }

    void
    lap(const std::string& stage) {
        const auto now = Clock::now();
        report_.timings.push_back({stage, seconds(last_, now)});
        last_ = now;
    }

    RunReport& report_;
    Clock::time_point start_;
    Clock::time_point last_;
};

}  // namespace detail

/// select -> relrep -> index -> retrieve (top-1) -> adjudicate -> export.
///
/// Writes anchors.jsonl, retrieval.jsonl, pairs.jsonl and weights.jsonl
/// (plus image_relreps.jsonl / text_relreps.jsonl when asked) into
/// cfg.out_dir, and report.json last. Everything except report.json is a
/// pure function of the config and inputs.
inline RunReport
run_pipeline(const PipelineConfig& cfg) {
    RunReport report;
    detail::StageClock clock(report);
    clock.run("config", [&] {
        cfg.validate();
        std::filesystem::create_directories(cfg.out_dir);
    });

    struct Inputs {
        EmbeddingStore images, texts, aligned_images, aligned_texts;
        std::vector<CandidateCaption> candidates;
    };
    Inputs in = clock.run("load", [&] {
        Inputs x;
        x.images = load_store(cfg.image_store, Modality::kImage);
        x.texts = load_store(cfg.text_store, Modality::kText);
        x.aligned_images = load_store(cfg.aligned_images, Modality::kImage, x.images.dim());
        x.aligned_texts = load_store(cfg.aligned_texts, Modality::kText, x.texts.dim());
        if (!cfg.candidate_registry.empty()) {
            x.candidates = read_candidates(cfg.candidate_registry, cfg.candidate_embeddings);
        }
        if (cfg.normalize) {
            x.images = unit_normalize(x.images);
            x.texts = unit_normalize(x.texts);
            x.aligned_images = unit_normalize(x.aligned_images);
            x.aligned_texts = unit_normalize(x.aligned_texts);
        }
        return x;
    });
    report.images = in.images.size();
    report.texts = in.texts.size();

    AnchorSet anchors = clock.run("select", [&] {
        SelectionConfig sel = cfg.selection;
        sel.workers = cfg.workers;
        const auto pool = pool_from_aligned(in.aligned_images, in.aligned_texts);
        const auto& cluster_store =
            sel.cluster_modality == Modality::kImage ? in.aligned_images : in.aligned_texts;
        auto a = select_anchors(pool, cluster_store, sel);
        write_anchors(cfg.out_dir / "anchors.jsonl", a);
        return a;
    });
    report.anchors = anchors.size();
    const std::uint32_t k = cfg.effective_k();
    report.k = k;

    auto [image_rels, text_rels, text_basis] = clock.run("relrep", [&] {
        const auto image_basis = AnchorBasis::resolve(anchors, in.aligned_images);
        auto tb = AnchorBasis::resolve(anchors, in.aligned_texts);
        auto ir = relrep_all(in.images, image_basis, k, cfg.workers);
        auto tr = relrep_all(in.texts, tb, k, cfg.workers);
        if (cfg.write_relreps) {
            write_relreps(cfg.out_dir / "image_relreps.jsonl", ir);
            write_relreps(cfg.out_dir / "text_relreps.jsonl", tr);
        }
        return std::make_tuple(std::move(ir), std::move(tr), std::move(tb));
    });

    const SparseIndex index = clock.run("index", [&] { return build_index(text_rels); });

    auto results = clock.run("retrieve", [&] {
        auto r = retrieve_all(image_rels, index, cfg.workers);
        write_retrieval(cfg.out_dir / "retrieval.jsonl", r);
        return r;
    });

    std::vector<WeaklyAlignedPair> pairs = clock.run("adjudicate", [&] {
        std::unordered_map<std::string, std::vector<CandidateCaption>> by_image;
        for (std::size_t c = 0; c < in.candidates.size(); ++c) {
            const auto& cand = in.candidates[c];
            if (!in.images.find(cand.image_id)) {
                throw Error(ErrorCode::kCandidateImageMismatch,
                            "candidate '" + cand.candidate_id + "' targets unknown image '" +
                                cand.image_id + "'",
                            c);
            }
            by_image[cand.image_id].push_back(cand);
        }
        std::vector<WeaklyAlignedPair> out(results.size());
        parallel_for(results.size(), cfg.workers, [&](std::size_t i) {
            const auto& top = results[i].ranked.front();
            WeaklyAlignedPair retrieved{results[i].image_id, top.text_id,     top.score,
                                        Provenance::kRetrieved, k, image_rels[i].dim};
            auto it = by_image.find(results[i].image_id);
            if (it == by_image.end()) {
                out[i] = std::move(retrieved);
            } else {
                out[i] = adjudicate(retrieved, image_rels[i], it->second, text_basis);
            }
        });
        return out;
    });

    clock.run("export", [&] {
        JsonlWriter pair_out(cfg.out_dir / "pairs.jsonl");
        for (const auto& p : pairs) {
            pair_out.write(to_json(p));
        }
        pair_out.close();
        const auto weights = export_weights(pairs);
        write_weights(cfg.out_dir / "weights.jsonl", weights);

        std::vector<double> scores;
        scores.reserve(pairs.size());
        for (const auto& p : pairs) {
            scores.push_back(p.score);
            (p.provenance == Provenance::kRetrieved ? report.retrieved : report.generated) += 1;
        }
        report.scores = summarize(std::move(scores));

        if (!cfg.ground_truth.empty()) {
            const auto gt = read_ground_truth(cfg.ground_truth);
            std::size_t hits = 0;
            for (const auto& r : results) {
                auto it = gt.find(r.image_id);
                if (it != gt.end() && !r.ranked.empty() && r.ranked.front().text_id == it->second) {
                    ++hits;
                }
            }
            report.recall_at_1 =
                results.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(results.size());
        }
    });
    clock.finish();
    write_json(cfg.out_dir / "report.json", to_json(report));
    return report;
}

// ---------------------------------------------------------------------------
// Anchor benchmark on synthetic paired embeddings.

struct BenchConfig {
    SynthSpec synth;
    std::vector<std::size_t> m_values{32, 128, 512, 2048};
    std::vector<Strategy> strategies{Strategy::kRandom};
    std::vector<std::uint64_t> seeds{0, 1, 2};
    std::uint32_t k = 50;
    std::uint32_t kmeans_iters = 20;
    std::uint32_t kmeans_restarts = 3;
    std::size_t workers = 1;
};

struct BenchCell {
    Strategy strategy = Strategy::kRandom;
    std::size_t m = 0;
    std::uint64_t seed = 0;
    std::uint32_t k = 0;
    double recall_at_1 = 0.0;
    // mean quality score of the retrieved top-1 pairs
    double mean_top1_score = 0.0;
    // mean quality score of the ground-truth pairs
    double mean_truth_score = 0.0;
    // all images retrieved their own partner
    bool all_correct = false;
};

struct TrendPoint {
    std::size_t m = 0;
    double mean_recall_at_1 = 0.0;
    double mean_truth_score = 0.0;
};

struct TrendReport {
    std::vector<BenchCell> cells;
    std::map<std::string, std::vector<TrendPoint>> series;

    /// Mean recall@1 over seeds for (strategy, m).
    double
    mean_recall(Strategy s, std::size_t m) const {
        for (const auto& p : series.at(std::string(strategy_name(s)))) {
            if (p.m == m) {
                return p.mean_recall_at_1;
            }
        }
        throw Error(ErrorCode::kConfigInvalid, "no bench cell for m=" + std::to_string(m));
    }
};

/// Scores one anchor set against synthetic data with ground truth.
inline BenchCell
evaluate_anchors(const SynthData& data, const AnchorSet& anchors, std::uint32_t k, std::size_t workers = 1) {
    const auto image_basis = AnchorBasis::resolve(anchors, data.aligned_images);
    const auto text_basis = AnchorBasis::resolve(anchors, data.aligned_texts);
    const auto image_rels = relrep_all(data.images, image_basis, k, workers);
    const auto text_rels = relrep_all(data.texts, text_basis, k, workers);
    const auto index = build_index(text_rels);
    const auto results = retrieve_all(image_rels, index, workers);

    BenchCell cell;
    cell.k = k;
    std::size_t hits = 0;
    double top1 = 0.0;
    double truth = 0.0;
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& top = results[i].ranked.front();
        hits += top.text_ordinal == data.ground_truth[i] ? 1 : 0;
        top1 += top.score;
        truth += quality_score(image_rels[i], text_rels[data.ground_truth[i]]);
    }
    const double n = results.empty() ? 1.0 : static_cast<double>(results.size());
    cell.recall_at_1 = static_cast<double>(hits) / n;
    cell.mean_top1_score = top1 / n;
    cell.mean_truth_score = truth / n;
    cell.all_correct = hits == results.size();
    return cell;
}

/// Sweeps (strategy, m, seed). The synthetic data is generated once from
/// cfg.synth; the seed list drives anchor selection. Cells may run on
/// separate workers and are reported in (strategy, m, seed) input order.
inline TrendReport
bench_anchors(const BenchConfig& cfg) {
    cfg.synth.validate();
    for (auto m : cfg.m_values) {
        if (m == 0 || m > cfg.synth.pool_size()) {
            throw Error(ErrorCode::kSpecInvalid,
                        "m=" + std::to_string(m) + " outside [1, pool size " +
                            std::to_string(cfg.synth.pool_size()) + "]");
        }
    }
    if (cfg.k == 0) {
        throw Error(ErrorCode::kSpecInvalid, "k must be positive");
    }
    const SynthData data = synth_generate(cfg.synth);
    const auto pool = pool_from_aligned(data.aligned_images, data.aligned_texts);

    struct Key {
        Strategy strategy;
        std::size_t m;
        std::uint64_t seed;
    };
    std::vector<Key> keys;
    for (auto s : cfg.strategies) {
        for (auto m : cfg.m_values) {
            for (auto seed : cfg.seeds) {
                keys.push_back({s, m, seed});
            }
        }
    }

    TrendReport report;
    report.cells.resize(keys.size());
    parallel_for(keys.size(), cfg.workers, [&](std::size_t c) {
        SelectionConfig sel;
        sel.strategy = keys[c].strategy;
        sel.m = keys[c].m;
        sel.seed = keys[c].seed;
        sel.kmeans_iters = cfg.kmeans_iters;
        sel.kmeans_restarts = cfg.kmeans_restarts;
        const auto anchors = select_anchors(pool, data.aligned_images, sel);
        const auto k = std::min<std::uint32_t>(cfg.k, static_cast<std::uint32_t>(keys[c].m));
        BenchCell cell = evaluate_anchors(data, anchors, k);
        cell.strategy = keys[c].strategy;
        cell.m = keys[c].m;
        cell.seed = keys[c].seed;
        report.cells[c] = cell;
    });

    for (auto s : cfg.strategies) {
        auto& series = report.series[std::string(strategy_name(s))];
        for (auto m : cfg.m_values) {
            TrendPoint p{m, 0.0, 0.0};
            std::size_t n = 0;
            for (const auto& cell : report.cells) {
                if (cell.strategy == s && cell.m == m) {
                    p.mean_recall_at_1 += cell.recall_at_1;
                    p.mean_truth_score += cell.mean_truth_score;
                    ++n;
                }
            }
            if (n > 0) {
                p.mean_recall_at_1 /= static_cast<double>(n);
                p.mean_truth_score /= static_cast<double>(n);
            }
            series.push_back(p);
        }
    }
    return report;
}

inline BenchConfig
bench_config_from_json(const Json& j) {
    BenchConfig cfg;
    try {
        cfg.synth = synth_spec_from_json(j.value("synth", Json::object()));
        cfg.m_values = j.value("m_values", cfg.m_values);
        if (j.contains("strategies")) {
            cfg.strategies.clear();
            for (const auto& s : j.at("strategies")) {
                cfg.strategies.push_back(parse_strategy(s.get<std::string>()));
            }
        }
        cfg.seeds = j.value("seeds", cfg.seeds);
        cfg.k = j.value("k", cfg.k);
        cfg.kmeans_iters = j.value("kmeans_iters", cfg.kmeans_iters);
        cfg.kmeans_restarts = j.value("kmeans_restarts", cfg.kmeans_restarts);
        cfg.workers = j.value("workers", cfg.workers);
    } catch (const Json::exception& e) {
        throw Error(ErrorCode::kConfigInvalid, e.what());
    }
    return cfg;
}

inline Json
to_json(const TrendReport& r) {
    Json cells = Json::array();
    for (const auto& c : r.cells) {
        cells.push_back(Json{{"strategy", strategy_name(c.strategy)},
                             {"m", c.m},
                             {"seed", c.seed},
                             {"k", c.k},
                             {"recall_at_1", c.recall_at_1},
                             {"mean_top1_score", c.mean_top1_score},
                             {"mean_truth_score", c.mean_truth_score}});
    }
    Json series = Json::object();
    for (const auto& [name, points] : r.series) {
        Json s = Json::array();
        for (const auto& p : points) {
            s.push_back(Json{{"m", p.m},
                             {"mean_recall_at_1", p.mean_recall_at_1},
                             {"mean_truth_score", p.mean_truth_score}});
        }
        series[name] = std::move(s);
    }
    return Json{{"cells", std::move(cells)}, {"series", std::move(series)}};
}

/// Plain-text table: one row per (strategy, m), mean over seeds.
inline std::string
format_trend_table(const TrendReport& r) {
    std::string out = "strategy      m       recall@1  truth_score\n";
    char line[128];
    for (const auto& [name, points] : r.series) {
        for (const auto& p : points) {
            std::snprintf(line, sizeof(line), "%-12s  %-6zu  %.4f    %.4f\n", name.c_str(), p.m,
                          p.mean_recall_at_1, p.mean_truth_score);
            out += line;
        }
    }
    return out;
}

}  // namespace relalign
