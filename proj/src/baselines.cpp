#include "cae/baselines.hpp"

#include <cstdio>

#include "cae/error.hpp"

namespace cae::baselines {

const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names = {"cae", "no_consistency", "random_selection", "all_keys", "last_token"};
    return names;
}

MethodPreset preset(const std::string& name) {
    using editor::SelectionMode;
    using keys::TokenPolicy;
    if (name == "cae") return {name, SelectionMode::svd, true, TokenPolicy::last_subject_token};
    if (name == "no_consistency") return {name, SelectionMode::all, false, TokenPolicy::last_subject_token};
    if (name == "random_selection") return {name, SelectionMode::random, true, TokenPolicy::last_subject_token};
    if (name == "all_keys") return {name, SelectionMode::all, true, TokenPolicy::last_subject_token};
    if (name == "last_token") return {name, SelectionMode::svd, true, TokenPolicy::last_token};
    std::string valid;
    for (const auto& n : preset_names()) valid += (valid.empty() ? "" : ", ") + n;
    throw InvalidInput("unknown preset '" + name + "'; valid presets: " + valid);
}

editor::EditConfig apply_preset(editor::EditConfig base, const MethodPreset& p) {
    base.selection_mode = p.selection_mode;
    base.consistency_on = p.consistency_on;
    base.token_policy = p.token_policy;
    return base;
}

eval::EvalReport average_reports(std::span<const eval::EvalReport> reports, const std::string& method) {
    if (reports.empty()) throw InvalidInput("average_reports: no reports");
    eval::EvalReport avg;
    avg.method = method;
    avg.entity_id = reports.front().entity_id;
    avg.config = reports.front().config;
    bool all_z = true;
    double z = 0.0;
    for (const auto& r : reports) {
        avg.forget_fb += r.forget_fb;
        avg.forget_qa += r.forget_qa;
        avg.forget_all += r.forget_all;
        avg.neighbor_fb += r.neighbor_fb;
        avg.neighbor_qa += r.neighbor_qa;
        avg.neighbor_all += r.neighbor_all;
        avg.utility_ppl += r.utility_ppl;
        avg.mia_gap += r.mia_gap;
        if (r.z_cosine)
            z += *r.z_cosine;
        else
            all_z = false;
    }
    const double n = static_cast<double>(reports.size());
    for (double* f : {&avg.forget_fb, &avg.forget_qa, &avg.forget_all, &avg.neighbor_fb, &avg.neighbor_qa,
                      &avg.neighbor_all, &avg.utility_ppl, &avg.mia_gap})
        *f /= n;
    avg.mean_fn = eval::mean_fn(avg.forget_all, avg.neighbor_all);
    if (all_z) avg.z_cosine = z / n;
    return avg;
}

namespace {

eval::EvalReport run_config_over(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                 std::span<const std::size_t> entities, const editor::EditConfig& cfg,
                                 const std::string& method) {
    if (entities.empty()) throw InvalidInput("no entities to evaluate");
    std::vector<eval::EvalReport> per_entity;
    for (std::size_t e : entities) {
        auto res = in_stage(method + " entity " + std::to_string(e),
                            [&] { return editor::unlearn_entity(w, bench, e, cfg); });
        per_entity.push_back(eval::evaluate(res.weights, bench, e, method, &res.residuals));
    }
    auto avg = average_reports(per_entity, method);
    avg.config = {{"selection", editor::to_string(cfg.selection_mode)},
                  {"consistency", cfg.consistency_on},
                  {"token_policy", keys::to_string(cfg.token_policy)},
                  {"lambda_cons", cfg.lambda_cons},
                  {"layers", {cfg.layer_start, cfg.layer_end}},
                  {"entities", std::vector<std::size_t>(entities.begin(), entities.end())}};
    return avg;
}

}  // namespace

std::vector<eval::EvalReport> run_presets(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                          std::span<const std::size_t> entities, const editor::EditConfig& base,
                                          std::span<const std::string> names) {
    std::vector<eval::EvalReport> out;
    for (const auto& name : names) out.push_back(run_config_over(w, bench, entities, apply_preset(base, preset(name)), name));
    return out;
}

std::vector<eval::EvalReport> lambda_sweep(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                           std::span<const std::size_t> entities, const editor::EditConfig& base,
                                           std::span<const double> values) {
    if (values.empty()) throw InvalidInput("lambda_sweep: no values");
    std::vector<eval::EvalReport> out;
    for (double lambda : values) {
        editor::EditConfig cfg = base;
        cfg.lambda_cons = lambda;
        char tag[48];
        std::snprintf(tag, sizeof tag, "lambda=%g", lambda);
        out.push_back(run_config_over(w, bench, entities, cfg, tag));
    }
    return out;
}

}  // namespace cae::baselines
