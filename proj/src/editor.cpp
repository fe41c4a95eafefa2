#include "cae/editor.hpp"

#include <chrono>
#include <ostream>

#include "cae/error.hpp"
#include "cae/seed.hpp"

namespace cae::editor {

std::string to_string(SelectionMode m) {
    switch (m) {
        case SelectionMode::svd: return "svd";
        case SelectionMode::random: return "random";
        default: return "all";
    }
}

SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "svd") return SelectionMode::svd;
    if (s == "random") return SelectionMode::random;
    if (s == "all") return SelectionMode::all;
    throw ConfigError("selection: expected svd, random or all, got '" + s + "'");
}

void EditConfig::validate(std::size_t n_layers) const {
    if (layer_start > layer_end) throw ConfigError("layers: start must not exceed end");
    if (layer_end >= n_layers)
        throw ConfigError("layers: end " + std::to_string(layer_end) + " outside model with " +
                          std::to_string(n_layers) + " layers");
    if (!(tau_rank > 0.0 && tau_rank <= 1.0)) throw ConfigError("tau_rank must lie in (0, 1]");
    if (!(tau_energy > 0.0 && tau_energy <= 1.0)) throw ConfigError("tau_energy must lie in (0, 1]");
    if (!(lambda_cons >= 0.0)) throw ConfigError("lambda_cons must be >= 0");
    if (!(beta > 0.0)) throw ConfigError("beta must be positive");
    residual::OptimizerConfig o = optimizer;
    o.lambda_cons = lambda_cons;
    o.validate();
}

Vec distribute_residual(const Vec& delta, std::size_t layer, std::size_t last_layer) {
    if (layer > last_layer) throw InvalidInput("distribute_residual: layer beyond the last edit layer");
    return delta / static_cast<double>(last_layer - layer + 1);
}

Mat compute_delta(const Mat& w_out, const keys::Covariance& c, const keys::KeyMatrix& k_f, const Mat& r) {
    const Mat& k = k_f.keys;
    if (c.c.rows() != c.c.cols() || c.c.rows() != k.rows())
        throw InvalidInput("compute_delta: covariance and key dimensions differ");
    if (w_out.rows() != r.rows() || w_out.cols() != k.rows())
        throw InvalidInput("compute_delta: weight shape does not match residuals and keys");
    if (r.cols() != k.cols()) throw InvalidInput("compute_delta: residual and key counts differ");
    if (c.layer != k_f.layer) throw InvalidInput("compute_delta: covariance and keys come from different layers");
    Mat a = c.c;
    a.noalias() += k * k.transpose();
    // A is symmetric, so Delta A = R K^T is A Delta^T = K R^T
    const Mat rhs = k * r.transpose();
    return numerics::solve_spd(a, rhs).transpose();
}

EditPlan plan_edit(const TransformerWeights& w, std::span<const corpus::Prompt> prompts,
                   std::span<const TokenSeq> retain, const EditConfig& cfg) {
    cfg.validate(w.config.n_layers);
    if (prompts.empty()) throw InvalidInput("plan_edit: no prompts for the entity");
    EditPlan plan;
    in_stage("covariance", [&] {
        for (std::size_t l = cfg.layer_start; l <= cfg.layer_end; ++l)
            plan.covariances.push_back(keys::estimate_covariance(w, retain, l, cfg.beta, cfg.retain_positions));
    });
    in_stage("keys", [&] { plan.keys = keys::extract_keys(w, prompts, cfg.layer_end, cfg.token_policy); });
    in_stage("selection", [&] {
        switch (cfg.selection_mode) {
            case SelectionMode::svd: plan.selection = keys::svd_select(plan.keys, cfg.tau_rank, cfg.tau_energy); break;
            case SelectionMode::random: {
                // matched budget: as many prompts as the svd rule would keep
                const auto count = keys::svd_select(plan.keys, cfg.tau_rank, cfg.tau_energy).kept_indices.size();
                plan.selection = keys::random_select(plan.keys, count, derive_seed(cfg.seed, "selection"));
                break;
            }
            case SelectionMode::all: plan.selection = keys::select_all(plan.keys); break;
        }
    });
    for (std::size_t idx : plan.selection.kept_indices) plan.kept.push_back(prompts[idx]);
    return plan;
}

namespace {

double mean_col_norm(const Mat& r) {
    double acc = 0.0;
    for (Eigen::Index j = 0; j < r.cols(); ++j) acc += r.col(j).norm();
    return r.cols() ? acc / static_cast<double>(r.cols()) : 0.0;
}

// Columns z_j - h_j for the current weights.
Mat current_residuals(const TransformerWeights& w, std::span<const corpus::Prompt> kept,
                      const residual::ResidualSet& rs) {
    const auto z = rs.z();
    Mat r(static_cast<Eigen::Index>(w.config.d_model), static_cast<Eigen::Index>(kept.size()));
    for (std::size_t j = 0; j < kept.size(); ++j) {
        const auto tr = model::forward(w, kept[j].tokens);
        r.col(static_cast<Eigen::Index>(j)) =
            z[j] - tr.hidden[rs.boundary()].row(static_cast<Eigen::Index>(rs.tokens[j])).transpose();
    }
    return r;
}

}  // namespace

EditResult execute_edit(const TransformerWeights& w, std::span<const corpus::Prompt> kept,
                        std::span<const keys::Covariance> covariances, const EditConfig& cfg, model::Token null_token) {
    cfg.validate(w.config.n_layers);
    if (kept.empty()) throw InvalidInput("execute_edit: no kept prompts");
    if (covariances.size() != cfg.layer_end - cfg.layer_start + 1)
        throw InvalidInput("execute_edit: need one covariance per edit layer");
    const auto t0 = std::chrono::steady_clock::now();

    residual::OptimizerConfig opt = cfg.optimizer;
    opt.lambda_cons = cfg.consistency_on ? cfg.lambda_cons : 0.0;
    opt.null_token = null_token;
    opt.seed = derive_seed(cfg.seed, "residual");

    EditResult res{w, {}, {}, {}};
    res.residuals = in_stage("residuals", [&] {
        return residual::optimize_residuals(w, kept, cfg.layer_end, cfg.token_policy, opt);
    });

    in_stage("edit", [&] {
        const auto d = static_cast<Eigen::Index>(w.config.d_model);
        for (std::size_t l = cfg.layer_start; l <= cfg.layer_end; ++l) {
            Mat full = current_residuals(res.weights, kept, res.residuals);
            Mat r(d, static_cast<Eigen::Index>(kept.size()));
            for (std::size_t j = 0; j < kept.size(); ++j) {
                const Vec src = cfg.fixed_division ? res.residuals.deltas[j] : Vec(full.col(static_cast<Eigen::Index>(j)));
                r.col(static_cast<Eigen::Index>(j)) = distribute_residual(src, l, cfg.layer_end);
            }
            const auto k = keys::extract_keys(res.weights, kept, l, cfg.token_policy);
            Mat& w_out = res.weights.layers[l].w_out;
            const Mat delta = compute_delta(w_out, covariances[l - cfg.layer_start], k, r);
            if (!numerics::all_finite(delta)) throw NumericError("non-finite weight update at layer " + std::to_string(l));
            w_out += delta;

            LayerReport lr;
            lr.layer = l;
            lr.delta_norm = delta.norm();
            lr.kept = kept.size();
            lr.residual_before = mean_col_norm(full);
            lr.residual_after = mean_col_norm(current_residuals(res.weights, kept, res.residuals));
            res.report.layers.push_back(lr);
        }
    });
    res.report.kept_prompts = kept.size();
    res.report.config = cfg;
    res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

EditResult apply_unlearning(const TransformerWeights& w, std::span<const corpus::Prompt> prompts,
                            std::span<const TokenSeq> retain, const EditConfig& cfg, model::Token null_token) {
    const auto t0 = std::chrono::steady_clock::now();
    EditPlan plan = plan_edit(w, prompts, retain, cfg);
    EditResult res = execute_edit(w, plan.kept, plan.covariances, cfg, null_token);
    res.selection = std::move(plan.selection);
    res.report.total_prompts = prompts.size();
    res.report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

EditResult unlearn_entity(const TransformerWeights& w, const corpus::Benchmark& bench, std::size_t entity,
                          const EditConfig& cfg) {
    if (entity >= bench.entities.size()) throw InvalidInput("unlearn: entity id " + std::to_string(entity) + " out of range");
    const std::size_t ex[] = {entity};
    const auto retain = corpus::retain_sequences(bench, ex);
    return apply_unlearning(w, bench.prompts[entity], retain, cfg, bench.null_token());
}

SequentialResult sequential_unlearn(const TransformerWeights& w, const corpus::Benchmark& bench,
                                    std::span<const std::size_t> entities, const EditConfig& cfg) {
    if (entities.empty()) throw InvalidInput("sequential_unlearn: no entities");
    SequentialResult out{w, {}};
    for (std::size_t i = 0; i < entities.size(); ++i) {
        EditResult r = in_stage("entity " + std::to_string(i), [&] {
            return unlearn_entity(out.weights, bench, entities[i], cfg);
        });
        out.weights = std::move(r.weights);
        SequentialStep step;
        step.entity = entities[i];
        step.edit = std::move(r.report);
        for (std::size_t k = 0; k <= i; ++k)
            step.reports.push_back(eval::evaluate(out.weights, bench, entities[k], "sequential"));
        out.steps.push_back(std::move(step));
    }
    return out;
}

void write_edit_report(std::ostream& out, const EditReport& r) {
    const EditConfig& c = r.config;
    out << "layers " << c.layer_start << ".." << c.layer_end << "\n";
    out << "token_policy " << keys::to_string(c.token_policy) << "\n";
    out << "selection " << to_string(c.selection_mode) << "\n";
    out << "consistency " << (c.consistency_on ? "on" : "off") << "\n";
    out << "lambda_cons " << c.lambda_cons << "\n";
    out << "tau_rank " << c.tau_rank << "\n";
    out << "tau_energy " << c.tau_energy << "\n";
    out << "beta " << c.beta << "\n";
    out << "fixed_division " << (c.fixed_division ? "true" : "false") << "\n";
    out << "seed " << c.seed << "\n";
    out << "prompts " << r.total_prompts << "\n";
    out << "kept " << r.kept_prompts << "\n";
    out << "layer delta_fro kept residual_before residual_after\n";
    for (const auto& l : r.layers)
        out << l.layer << ' ' << l.delta_norm << ' ' << l.kept << ' ' << l.residual_before << ' ' << l.residual_after
            << "\n";
}

}  // namespace cae::editor
