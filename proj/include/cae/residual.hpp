#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "cae/corpus.hpp"
#include "cae/keys.hpp"
#include "cae/model.hpp"

namespace cae::residual {

using model::Token;
using model::TransformerWeights;

struct OptimizerConfig {
    std::size_t steps = 40;
    double lr = 0.1;  // per-coordinate step in units of the anchor's RMS entry
    double lambda_cons = 0.05;
    double clamp_ratio = 1.0;
    Token null_token = 1;
    std::uint64_t seed = 0;
    double stop_loss = 0.05;  // stop once the objective drops below this

    void validate() const;
};

struct PromptDiagnostics {
    std::vector<double> loss_curve;  // objective before each update
    double initial_nll = 0.0;
    double final_nll = 0.0;
    double final_consistency = 0.0;
    std::size_t steps_run = 0;
    bool nll_not_improved = false;  // final NLL above the starting NLL
};

// One residual per kept prompt, injected after block `target_layer` (the last
// edit layer) at each prompt's policy token.
struct ResidualSet {
    std::size_t target_layer = 0;
    keys::TokenPolicy policy = keys::TokenPolicy::last_subject_token;
    std::vector<std::size_t> tokens;  // injection position per prompt
    std::vector<Vec> anchors;         // unmodified hidden states h
    std::vector<Vec> deltas;
    std::vector<PromptDiagnostics> diagnostics;
    double mean_cosine = 0.0;  // over pairs of h + delta; 1 for a single prompt

    std::size_t size() const { return deltas.size(); }
    std::size_t boundary() const { return target_layer + 1; }
    std::vector<Vec> z() const;  // h + delta per prompt
};

// lambda * ||current - mean(previous)||^2, zero when `previous` is empty.
double consistency_loss(const Vec& current, std::span<const Vec> previous, double lambda);

// Prompts are processed in the given order; each residual is optimized against
// the null-token NLL plus the consistency term toward the mean of the already
// settled h + delta vectors, which stay frozen.
ResidualSet optimize_residuals(const TransformerWeights& w, std::span<const corpus::Prompt> prompts,
                               std::size_t target_layer, keys::TokenPolicy policy, const OptimizerConfig& cfg);

double mean_pairwise_cosine(std::span<const Vec> vectors);

// CSV: prompt,kind,dim_0..dim_{d-1} with kind in {anchor, delta, z}.
void write_z_csv(std::ostream& out, const ResidualSet& rs);

}  // namespace cae::residual
