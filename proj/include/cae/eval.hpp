#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cae/corpus.hpp"
#include "cae/model.hpp"
#include "cae/residual.hpp"

namespace cae::eval {

using model::Probe;
using model::TokenSeq;
using model::TransformerWeights;

// Accuracies are percentages in [0, 100].
struct EvalReport {
    std::string method;
    std::size_t entity_id = 0;
    double forget_fb = 0.0, forget_qa = 0.0, forget_all = 0.0;
    double neighbor_fb = 0.0, neighbor_qa = 0.0, neighbor_all = 0.0;
    double utility_ppl = 0.0;
    double mia_gap = 0.0;
    double mean_fn = 0.0;
    std::optional<double> z_cosine;
    nlohmann::ordered_json config = nlohmann::ordered_json::object();

    bool operator==(const EvalReport&) const = default;
};

// Share of probes whose greedy next token is the gold token, times 100.
double probe_accuracy(const TransformerWeights& w, std::span<const Probe> probes);

// ((100 - forget_all) + neighbor_all) / 2.
double mean_fn(double forget_all, double neighbor_all);

// Mean next-token NLL over every predicted token of every text.
double mean_token_nll(const TransformerWeights& w, std::span<const TokenSeq> texts);

// mean NLL(forget_member) - mean NLL(retain_member).
double mia_gap(const TransformerWeights& w, std::span<const TokenSeq> forget_member,
               std::span<const TokenSeq> retain_member);

double utility_perplexity(const TransformerWeights& w, std::span<const TokenSeq> texts);

struct ZDiagnostics {
    double mean_cosine = 0.0;
    std::vector<Vec> pca_coords;  // 2-d per z vector
};

ZDiagnostics z_diagnostics(const residual::ResidualSet& rs);

// Mean of the fill-blank and question accuracies (only those suites present).
double combine(double fb, std::size_t n_fb, double qa, std::size_t n_qa);

EvalReport evaluate(const TransformerWeights& w, const corpus::Benchmark& bench, std::size_t entity,
                    const std::string& method, const residual::ResidualSet* residuals = nullptr);

// Reports sorted by mean_fn, highest first; ties keep input order.
std::vector<EvalReport> compare(std::vector<EvalReport> reports);
std::string compare_csv(std::span<const EvalReport> sorted);
std::string compare_text(std::span<const EvalReport> sorted);

// Weighted 0.4 forget / 0.2 neighbor / 0.3 utility / 0.1 membership score on
// a 0-100 scale, normalized against a reference (usually pre-edit) report:
// forget term 100 - forget_all, neighbor term neighbor_all, utility term
// 100 * min(1, ref_ppl / ppl), membership term 100 * (1 - exp(-max(0, gap - ref_gap))).
double local_weighted_score(const EvalReport& r, const EvalReport& reference);

nlohmann::ordered_json to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

void write_report(const EvalReport& r, const std::filesystem::path& path);
EvalReport read_report(const std::filesystem::path& path);

// Appends {"timestamp": ..., "report": {...}} as one line.
void append_results_log(const std::filesystem::path& log, const EvalReport& r);
std::vector<EvalReport> read_results_log(const std::filesystem::path& log);

}  // namespace cae::eval
