#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cae/corpus.hpp"
#include "cae/eval.hpp"
#include "cae/keys.hpp"
#include "cae/model.hpp"
#include "cae/residual.hpp"

namespace cae::editor {

using model::TokenSeq;
using model::TransformerWeights;

enum class SelectionMode { svd, random, all };

std::string to_string(SelectionMode m);
SelectionMode parse_selection_mode(const std::string& s);

struct EditConfig {
    std::size_t layer_start = 1;
    std::size_t layer_end = 3;  // last edit layer; residuals live at its output
    keys::TokenPolicy token_policy = keys::TokenPolicy::last_subject_token;
    double tau_rank = 0.95;
    double tau_energy = 0.95;
    double lambda_cons = 0.05;
    double beta = 100.0;
    SelectionMode selection_mode = SelectionMode::svd;
    bool consistency_on = true;
    std::uint64_t seed = 0;
    // Divide the original residual per layer instead of recomputing it
    // against the current weights.
    bool fixed_division = false;
    keys::RetainPositions retain_positions = keys::RetainPositions::every_prefix;
    // steps, lr, clamp_ratio and stop_loss are read from here; lambda and the
    // null token are filled in by the editor.
    residual::OptimizerConfig optimizer;

    void validate(std::size_t n_layers) const;
};

// delta / (last_layer - layer + 1).
Vec distribute_residual(const Vec& delta, std::size_t layer, std::size_t last_layer);
// Solves Delta (C + K_f K_f^T) = R K_f^T; Delta has the shape of w_out.
Mat compute_delta(const Mat& w_out, const keys::Covariance& c, const keys::KeyMatrix& k_f, const Mat& r);

struct LayerReport {
    std::size_t layer = 0;
    double delta_norm = 0.0;  // Frobenius
    std::size_t kept = 0;
    double residual_before = 0.0;  // mean column norm of the full residual before this layer's edit
    double residual_after = 0.0;
};

struct EditReport {
    std::vector<LayerReport> layers;
    std::size_t total_prompts = 0;
    std::size_t kept_prompts = 0;
    double wall_seconds = 0.0;  // not part of written reports
    EditConfig config;
};

// Everything decided before residual optimization: covariances, candidate
// keys at the last edit layer and the selection over them.
struct EditPlan {
    std::vector<keys::Covariance> covariances;  // one per layer in range
    keys::KeyMatrix keys;
    keys::Selection selection;
    std::vector<corpus::Prompt> kept;  // in selection order
};

EditPlan plan_edit(const TransformerWeights& w, std::span<const corpus::Prompt> prompts,
                   std::span<const TokenSeq> retain, const EditConfig& cfg);

struct EditResult {
    TransformerWeights weights;
    EditReport report;
    residual::ResidualSet residuals;
    keys::Selection selection;
};

// Optimizes residuals over `kept` (in the given order) and writes them into
// W_out of every layer in range.
EditResult execute_edit(const TransformerWeights& w, std::span<const corpus::Prompt> kept,
                        std::span<const keys::Covariance> covariances, const EditConfig& cfg, model::Token null_token);

EditResult apply_unlearning(const TransformerWeights& w, std::span<const corpus::Prompt> prompts,
                            std::span<const TokenSeq> retain, const EditConfig& cfg, model::Token null_token);

// Unlearns one benchmark entity against the sequences that do not mention it.
EditResult unlearn_entity(const TransformerWeights& w, const corpus::Benchmark& bench, std::size_t entity,
                          const EditConfig& cfg);

struct SequentialStep {
    std::size_t entity = 0;
    std::vector<eval::EvalReport> reports;  // one per entity unlearned so far, in order
    EditReport edit;
};

struct SequentialResult {
    TransformerWeights weights;
    std::vector<SequentialStep> steps;
};

SequentialResult sequential_unlearn(const TransformerWeights& w, const corpus::Benchmark& bench,
                                    std::span<const std::size_t> entities, const EditConfig& cfg);

void write_edit_report(std::ostream& out, const EditReport& r);

}  // namespace cae::editor
