#include "cae/ordering.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "cae/error.hpp"
#include "cae/seed.hpp"

namespace cae::ordering {

std::vector<OrderRun> order_shuffle_run(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                        std::size_t entity, const editor::EditConfig& cfg, std::size_t n_orders,
                                        std::uint64_t seed) {
    if (n_orders == 0) throw InvalidInput("order_shuffle_run: n_orders must be positive");
    if (entity >= bench.entities.size()) throw InvalidInput("order_shuffle_run: entity id out of range");
    const std::size_t ex[] = {entity};
    const auto retain = corpus::retain_sequences(bench, ex);
    const auto plan = editor::plan_edit(w, bench.prompts[entity], retain, cfg);
    const std::size_t u = plan.kept.size();

    std::mt19937_64 rng(derive_seed(seed, "order"));
    std::vector<OrderRun> runs;
    for (std::size_t o = 0; o < n_orders; ++o) {
        OrderRun run;
        run.order.resize(u);
        std::iota(run.order.begin(), run.order.end(), 0);
        if (o > 0) std::shuffle(run.order.begin(), run.order.end(), rng);
        std::vector<corpus::Prompt> kept;
        for (std::size_t i : run.order) kept.push_back(plan.kept[i]);

        auto res = editor::execute_edit(w, kept, plan.covariances, cfg, bench.null_token());
        run.final_nll.assign(u, 0.0);
        for (std::size_t p = 0; p < u; ++p) run.final_nll[run.order[p]] = res.residuals.diagnostics[p].final_nll;
        run.mean_final_nll = std::accumulate(run.final_nll.begin(), run.final_nll.end(), 0.0) / static_cast<double>(u);
        run.report = eval::evaluate(res.weights, bench, entity, "order_" + std::to_string(o), &res.residuals);
        runs.push_back(std::move(run));
    }
    return runs;
}

}  // namespace cae::ordering
