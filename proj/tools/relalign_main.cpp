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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "relalign/relalign.hpp"

namespace fs = std::filesystem;
using namespace relalign;

namespace {

struct CommonOptions {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::uint32_t> k;
    std::optional<std::size_t> m;
    std::optional<std::string> out;
    std::optional<std::size_t> workers;
};

void
add_common(CLI::App* cmd, CommonOptions& opt) {
    cmd->add_option("--config", opt.config, "JSON config file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", opt.seed, "override the seed");
    cmd->add_option("--k", opt.k, "override the sparsification k");
    cmd->add_option("--m", opt.m, "override the anchor count m");
    cmd->add_option("--out", opt.out, "output directory");
    cmd->add_option("--workers", opt.workers, "worker threads");
}

fs::path
config_dir(const CommonOptions& opt) {
    return fs::absolute(opt.config).parent_path();
}

fs::path
out_dir(const CommonOptions& opt, const Json& cfg, const char* fallback) {
    if (opt.out) {
        return *opt.out;
    }
    if (cfg.contains("out_dir")) {
        fs::path p = cfg.at("out_dir").get<std::string>();
        return p.is_relative() ? config_dir(opt) / p : p;
    }
    return fallback;
}

fs::path
input_path(const CommonOptions& opt, const Json& cfg, const char* key) {
    if (!cfg.contains(key)) {
        throw Error(ErrorCode::kConfigInvalid, std::string("config needs \"") + key + "\"");
    }
    fs::path p = cfg.at(key).get<std::string>();
    return p.is_relative() ? config_dir(opt) / p : p;
}

// Loads the aligned pool and either reads "anchors" or selects them.
AnchorSet
anchors_for(const CommonOptions& opt,
            const Json& cfg,
            const EmbeddingStore& aligned_images,
            const EmbeddingStore& aligned_texts) {
    if (cfg.contains("anchors")) {
        return read_anchors(input_path(opt, cfg, "anchors"));
    }
    SelectionConfig sel = selection_from_json(cfg.value("selection", Json::object()));
    if (cfg.contains("m")) {
        sel.m = cfg.at("m").get<std::size_t>();
    }
    if (opt.m) {
        sel.m = *opt.m;
    }
    if (opt.seed) {
        sel.seed = *opt.seed;
    }
    sel.workers = opt.workers.value_or(1);
    const auto pool = pool_from_aligned(aligned_images, aligned_texts);
    return select_anchors(
        pool, sel.cluster_modality == Modality::kImage ? aligned_images : aligned_texts, sel);
}

int
cmd_synth_gen(const CommonOptions& opt) {
    const Json cfg = read_json(opt.config);
    SynthSpec spec = synth_spec_from_json(cfg.value("synth", cfg));
    if (opt.seed) {
        spec.seed = *opt.seed;
    }
    const fs::path out = out_dir(opt, cfg, "synth");
    fs::create_directories(out);
    const SynthData data = synth_generate(spec);
    save_store(out / "images.emb", data.images);
    save_store(out / "texts.emb", data.texts);
    save_store(out / "aligned_images.emb", data.aligned_images);
    save_store(out / "aligned_texts.emb", data.aligned_texts);
    write_ground_truth(out / "ground_truth.jsonl", data.images, data.texts, data.ground_truth);
    write_json(out / "synth.json", to_json(spec));

    // ready-to-run pipeline config next to the data
    Json pipeline{{"image_store", "images.emb"},
                  {"text_store", "texts.emb"},
                  {"aligned_images", "aligned_images.emb"},
                  {"aligned_texts", "aligned_texts.emb"},
                  {"ground_truth", "ground_truth.jsonl"},
                  {"out_dir", "run"},
                  {"k", std::min<std::size_t>(50, spec.pool_size())},
                  {"selection",
                   {{"strategy", "random"}, {"m", std::min<std::size_t>(1024, spec.pool_size())}, {"seed", 0}}}};
    write_json(out / "pipeline.json", pipeline);
    std::cout << "wrote " << data.images.size() << " pairs and a pool of " << data.aligned_images.size()
              << " to " << out.string() << "\n";
    return 0;
}

int
cmd_anchors_select(const CommonOptions& opt) {
    const Json cfg = read_json(opt.config);
    const auto aligned_images = load_store(input_path(opt, cfg, "aligned_images"), Modality::kImage);
    const auto aligned_texts = load_store(input_path(opt, cfg, "aligned_texts"), Modality::kText);
    const AnchorSet anchors = anchors_for(opt, cfg, aligned_images, aligned_texts);
    const fs::path out = out_dir(opt, cfg, ".");
    fs::create_directories(out);
    write_anchors(out / "anchors.jsonl", anchors);
    for (const auto& w : anchors.source().warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    std::cout << "selected " << anchors.size() << " anchors (" << anchors.source().strategy << ")\n";
    return 0;
}

int
cmd_relrep_compute(const CommonOptions& opt) {
    const Json cfg = read_json(opt.config);
    const bool normalize = cfg.value("normalize", true);
    auto prep = [&](EmbeddingStore s) { return normalize ? unit_normalize(s) : s; };
    const auto aligned_images = prep(load_store(input_path(opt, cfg, "aligned_images"), Modality::kImage));
    const auto aligned_texts = prep(load_store(input_path(opt, cfg, "aligned_texts"), Modality::kText));
    const AnchorSet anchors = anchors_for(opt, cfg, aligned_images, aligned_texts);
    std::uint32_t k = opt.k.value_or(cfg.value("k", 50u));
    k = std::min<std::uint32_t>(k, static_cast<std::uint32_t>(anchors.size()));
    const std::size_t workers = opt.workers.value_or(cfg.value("workers", std::size_t{1}));

    const fs::path out = out_dir(opt, cfg, ".");
    fs::create_directories(out);
    std::size_t written = 0;
    if (cfg.contains("image_store")) {
        const auto images = prep(load_store(input_path(opt, cfg, "image_store"), Modality::kImage));
        const auto rels = relrep_all(images, AnchorBasis::resolve(anchors, aligned_images), k, workers);
        write_relreps(out / "image_relreps.jsonl", rels);
        written += rels.size();
    }
    if (cfg.contains("text_store")) {
        const auto texts = prep(load_store(input_path(opt, cfg, "text_store"), Modality::kText));
        const auto rels = relrep_all(texts, AnchorBasis::resolve(anchors, aligned_texts), k, workers);
        write_relreps(out / "text_relreps.jsonl", rels);
        written += rels.size();
    }
    if (!cfg.contains("anchors")) {
        write_anchors(out / "anchors.jsonl", anchors);
    }
    std::cout << "wrote " << written << " relative representations (m=" << anchors.size()
              << ", k=" << k << ")\n";
    return 0;
}

int
cmd_retrieve_run(const CommonOptions& opt) {
    const Json cfg = read_json(opt.config);
    const auto images = read_relreps(input_path(opt, cfg, "image_relreps"));
    const auto texts = read_relreps(input_path(opt, cfg, "text_relreps"));
    const std::size_t depth = cfg.value("depth", std::size_t{1});
    const std::size_t workers = opt.workers.value_or(cfg.value("workers", std::size_t{1}));
    const auto index = build_index(texts);
    const auto results = retrieve_all(images, index, workers, depth);
    const fs::path out = out_dir(opt, cfg, ".");
    fs::create_directories(out);
    write_retrieval(out / "retrieval.jsonl", results);
    std::cout << "retrieved top-" << depth << " for " << results.size() << " images\n";
    return 0;
}

int
cmd_pipeline_run(const CommonOptions& opt) {
    const Json raw = read_json(opt.config);
    PipelineConfig cfg = pipeline_config_from_json(raw, config_dir(opt));
    if (opt.seed) {
        cfg.selection.seed = *opt.seed;
    }
    if (opt.k) {
        cfg.k = *opt.k;
    }
    if (opt.m) {
        cfg.selection.m = *opt.m;
    }
    if (opt.out) {
        cfg.out_dir = *opt.out;
    }
    if (opt.workers) {
        cfg.workers = *opt.workers;
    }
    const RunReport report = run_pipeline(cfg);
    std::cout << to_json(report).dump(2) << "\n";
    return 0;
}

int
cmd_bench_anchors(const CommonOptions& opt) {
    const Json raw = read_json(opt.config);
    BenchConfig cfg = bench_config_from_json(raw);
    if (opt.seed) {
        cfg.synth.seed = *opt.seed;
    }
    if (opt.k) {
        cfg.k = *opt.k;
    }
    if (opt.m) {
        cfg.m_values = {*opt.m};
    }
    if (opt.workers) {
        cfg.workers = *opt.workers;
    }
    const TrendReport report = bench_anchors(cfg);
    const fs::path out = out_dir(opt, raw, "bench");
    fs::create_directories(out);
    write_json(out / "trend.json", to_json(report));
    const std::string table = format_trend_table(report);
    std::ofstream(out / "trend.txt") << table;
    std::cout << table;
    return 0;
}

}  // namespace

int
main(int argc, char** argv) {
    CLI::App app{"relalign: cross-modal alignment through relative representations"};
    app.require_subcommand(1);

    struct Leaf {
        const char* group;
        const char* name;
        const char* help;
        int (*run)(const CommonOptions&);
    };
    const Leaf leaves[] = {
        {"synth", "gen", "generate a synthetic paired-embedding dataset", cmd_synth_gen},
        {"anchors", "select", "select an anchor set from an aligned pool", cmd_anchors_select},
        {"relrep", "compute", "compute sparse relative representations", cmd_relrep_compute},
        {"retrieve", "run", "retrieve texts for images by relrep cosine", cmd_retrieve_run},
        {"pipeline", "run", "run select, relrep, retrieve, adjudicate and export", cmd_pipeline_run},
        {"bench", "anchors", "sweep anchor strategies and counts on synthetic data", cmd_bench_anchors},
    };

    const std::map<std::string, std::string> group_help{
        {"synth", "synthetic paired embeddings"},
        {"anchors", "anchor selection"},
        {"relrep", "relative representations"},
        {"retrieve", "cross-modal retrieval"},
        {"pipeline", "end-to-end weakly-aligned pair construction"},
        {"bench", "anchor benchmarks"},
    };

    CommonOptions opt;
    std::map<std::string, CLI::App*> groups;
    std::vector<std::pair<CLI::App*, const Leaf*>> commands;
    for (const auto& leaf : leaves) {
        auto*& group = groups[leaf.group];
        if (group == nullptr) {
            group = app.add_subcommand(leaf.group, group_help.at(leaf.group));
            group->require_subcommand(1);
        }
        auto* cmd = group->add_subcommand(leaf.name, leaf.help);
        add_common(cmd, opt);
        commands.emplace_back(cmd, &leaf);
    }

    CLI11_PARSE(app, argc, argv);

    for (const auto& [cmd, leaf] : commands) {
        if (!cmd->parsed()) {
            continue;
        }
        const std::string stage = std::string(leaf->group) + " " + leaf->name;
        try {
            return leaf->run(opt);
        } catch (const StageError& e) {
            std::cerr << "relalign: " << stage << ": " << e.what() << "\n";
            return 2;
        } catch (const std::exception& e) {
            std::cerr << "relalign: " << stage << ": " << e.what() << "\n";
            return 2;
        }
    }
    return 1;
}
