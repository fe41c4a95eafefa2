#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cae/corpus.hpp"
#include "cae/editor.hpp"
#include "cae/model.hpp"
#include "cae/trace.hpp"

namespace cae::pipeline {

struct Paths {
    std::string benchmark = "bench";
    std::string checkpoint = "model.ckpt";
    std::string edited = "edited.ckpt";
    std::string results_log = "results.jsonl";
    std::string out_dir = "out";
};

struct TraceSettings {
    trace::TraceConfig config;
    std::size_t n_prompts = 10;  // prompts traced when choosing edit layers
    std::size_t span = 3;        // edit-layer window length
};

// Everything a run needs. Sub-seeds of every stage derive from `seed`.
struct RunConfig {
    std::uint64_t seed = 0;
    Paths paths;
    corpus::BenchmarkConfig benchmark;
    model::ModelConfig model;
    model::TrainConfig train;
    TraceSettings trace;
    editor::EditConfig edit;
    bool auto_layers = true;  // pick the edit range from causal traces
    std::vector<std::size_t> eval_entities;  // empty = every entity

    // Overrides the fields present in `j`; unknown keys raise ConfigError.
    void merge_json(const nlohmann::json& j);
    nlohmann::ordered_json to_json() const;
    // Pushes the master seed into every stage config.
    void propagate_seeds();
    void validate() const;
};

RunConfig default_run_config();
RunConfig load_run_config(const std::filesystem::path& path);  // defaults merged with file

// "a..b" or "a-b" -> inclusive block range
std::pair<std::size_t, std::size_t> parse_layer_range(const std::string& s);

corpus::Benchmark make_benchmark(const RunConfig& cfg);

// Probes the trainer watches: every forget fill-blank and question probe.
std::vector<model::Probe> training_probes(const corpus::Benchmark& bench);

model::TrainResult train_model(const corpus::Benchmark& bench, const RunConfig& cfg);

// Fill-blank prompts taken round-robin over entities.
std::vector<corpus::Prompt> trace_prompts(const corpus::Benchmark& bench, std::size_t n);

std::vector<trace::TraceGrid> trace_grids(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                          const RunConfig& cfg, trace::SeveredKind kind = trace::SeveredKind::none);

std::pair<std::size_t, std::size_t> choose_edit_layers(const model::TransformerWeights& w,
                                                       const corpus::Benchmark& bench, const RunConfig& cfg);

// Edit config with the layer range filled in (traced when auto_layers).
editor::EditConfig resolve_edit_config(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                       const RunConfig& cfg);

std::vector<std::size_t> resolve_entities(const corpus::Benchmark& bench, const std::vector<std::size_t>& requested);

}  // namespace cae::pipeline
