#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "cae/corpus.hpp"
#include "cae/editor.hpp"
#include "cae/eval.hpp"

namespace cae::ordering {

struct OrderRun {
    std::vector<std::size_t> order;  // positions into the canonical kept list
    std::vector<double> final_nll;   // per kept prompt, canonical indexing
    double mean_final_nll = 0.0;
    eval::EvalReport report;         // post-edit scores for the entity
};

// Plans the edit once, then optimizes and applies it under `n_orders` prompt
// orders: the canonical order first, then seeded shuffles.
std::vector<OrderRun> order_shuffle_run(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                        std::size_t entity, const editor::EditConfig& cfg, std::size_t n_orders,
                                        std::uint64_t seed);

}  // namespace cae::ordering
