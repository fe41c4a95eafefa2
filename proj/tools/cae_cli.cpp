#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cae/baselines.hpp"
#include "cae/corpus.hpp"
#include "cae/editor.hpp"
#include "cae/error.hpp"
#include "cae/eval.hpp"
#include "cae/pipeline.hpp"
#include "cae/trace.hpp"

namespace fs = std::filesystem;
using namespace cae;
using json = nlohmann::json;

namespace {

// Options shared by every subcommand. Flags that are set become a JSON
// overlay merged after the config file, so flag > file > default.
struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> bench, checkpoint, out;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON run config")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "master seed");
}

pipeline::RunConfig load(const Common& c, const json& overlay) {
    pipeline::RunConfig cfg = c.config.empty() ? pipeline::default_run_config() : pipeline::load_run_config(c.config);
    json j = overlay;
    if (c.seed) j["seed"] = *c.seed;
    if (c.bench) j["paths"]["benchmark"] = *c.bench;
    if (c.checkpoint) j["paths"]["checkpoint"] = *c.checkpoint;
    if (!j.empty()) cfg.merge_json(j);
    cfg.propagate_seeds();
    cfg.validate();
    return cfg;
}

void require_dir(const std::string& p, const char* what) {
    if (!fs::is_directory(p)) throw IoError(std::string(what) + " directory " + p + " does not exist");
}

void require_file(const std::string& p, const char* what) {
    if (!fs::is_regular_file(p)) throw IoError(std::string(what) + " " + p + " does not exist");
}

void ensure_parent(const fs::path& p) {
    if (!p.has_parent_path()) return;
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create " + p.parent_path().string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path& p) {
    ensure_parent(p);
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot open " + p.string() + " for writing");
    return out;
}

std::vector<std::size_t> parse_ids(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoul(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::logic_error&) {
            throw ConfigError("expected a comma separated list of entity ids, got '" + s + "'");
        }
    }
    if (out.empty()) throw ConfigError("empty entity list");
    return out;
}

// Mean pairwise cosine of the "z" rows of a z-dump CSV.
double z_cosine_from_csv(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    std::vector<Vec> zs;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string idx, kind, cell;
        std::getline(ss, idx, ',');
        std::getline(ss, kind, ',');
        if (kind != "z") continue;
        std::vector<double> vals;
        while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
        zs.push_back(Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size())));
    }
    if (zs.empty()) throw IoError(p.string() + ": no z rows");
    return residual::mean_pairwise_cosine(zs);
}

int cmd_gen_corpus(const Common& c, std::optional<std::size_t> entities) {
    json overlay;
    if (entities) overlay["benchmark"]["entities"] = *entities;
    const auto cfg = load(c, overlay);
    const std::string out = c.out.value_or(cfg.paths.benchmark);
    const auto bench = in_stage("gen-corpus", [&] { return pipeline::make_benchmark(cfg); });
    corpus::write_benchmark(bench, out);
    std::cout << "wrote " << bench.entities.size() << " entities, " << bench.corpus.size() << " training lines to "
              << out << "\n";
    return 0;
}

int cmd_train(const Common& c, std::optional<std::size_t> max_steps) {
    json overlay;
    if (max_steps) overlay["train"]["max_steps"] = *max_steps;
    const auto cfg = load(c, overlay);
    require_dir(cfg.paths.benchmark, "benchmark");
    const std::string out = c.out.value_or(cfg.paths.checkpoint);
    const auto bench = corpus::read_benchmark(cfg.paths.benchmark);
    const auto res = in_stage("train", [&] { return pipeline::train_model(bench, cfg); });
    model::save_checkpoint(res.weights, out);

    nlohmann::ordered_json r;
    r["steps"] = res.report.steps;
    r["final_loss"] = res.report.final_loss;
    r["probe_accuracy"] = res.report.probe_accuracy;
    r["reached_target"] = res.report.reached_target;
    r["loss_curve"] = res.report.loss_curve;
    r["config"] = cfg.to_json();
    open_out(out + ".report.json") << r.dump(2) << '\n';
    std::cout << "trained " << res.report.steps << " steps, probe accuracy " << res.report.probe_accuracy << ", saved "
              << out << "\n";
    if (!res.report.reached_target) std::cerr << "warning: probe accuracy target not reached\n";
    return 0;
}

int cmd_trace(const Common& c, const std::string& sever, std::optional<std::size_t> prompts) {
    json overlay;
    if (prompts) overlay["trace"]["prompts"] = *prompts;
    const auto cfg = load(c, overlay);
    std::vector<trace::SeveredKind> kinds = {trace::SeveredKind::none};
    if (sever == "mlp" || sever == "all") kinds.push_back(trace::SeveredKind::mlp);
    if (sever == "attention" || sever == "all") kinds.push_back(trace::SeveredKind::attention);
    if (sever != "none" && sever != "mlp" && sever != "attention" && sever != "all")
        throw ConfigError("--sever: expected none, mlp, attention or all");
    require_dir(cfg.paths.benchmark, "benchmark");
    require_file(cfg.paths.checkpoint, "checkpoint");
    const fs::path out = c.out.value_or(cfg.paths.out_dir);

    const auto bench = corpus::read_benchmark(cfg.paths.benchmark);
    const auto w = model::load_checkpoint(cfg.paths.checkpoint);
    const auto ps = pipeline::trace_prompts(bench, cfg.trace.n_prompts);
    std::vector<std::vector<trace::TraceGrid>> grids;
    for (auto k : kinds) grids.push_back(in_stage("trace", [&] { return pipeline::trace_grids(w, bench, cfg, k); }));
    const auto layers = trace::pick_edit_layers(grids.front(), cfg.trace.span);

    auto csv = open_out(out / "trace.csv");
    bool header = true;
    for (const auto& gs : grids)
        for (std::size_t i = 0; i < gs.size(); ++i) {
            trace::write_trace_csv(csv, gs[i], ps[i].tokens, bench.vocab, header);
            header = false;
        }
    // mean effect at the last subject token per boundary, one column per kind
    auto sum = open_out(out / "trace_summary.csv");
    sum << "layer";
    for (auto k : kinds) sum << ',' << trace::to_string(k);
    sum << '\n';
    for (std::size_t b = 0; b <= w.config.n_layers; ++b) {
        sum << b;
        for (const auto& gs : grids) {
            double acc = 0.0;
            for (const auto& g : gs) acc += g.effect(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(g.last_subject_token));
            sum << ',' << acc / static_cast<double>(gs.size());
        }
        sum << '\n';
    }
    std::cout << "traced " << ps.size() << " prompts; edit layers " << layers.first << ".." << layers.second << "\n";
    return 0;
}

struct UnlearnArgs {
    std::optional<std::size_t> entity;
    std::string sequential;
    std::string preset;
    bool no_consistency = false;
    std::optional<std::string> selection, token_policy, layers;
    std::optional<double> lambda_cons, tau_rank, tau_energy, beta;
    std::string dump_z, dump_selection, report;
};

int cmd_unlearn(const Common& c, const UnlearnArgs& a) {
    json overlay;
    if (!a.preset.empty()) {
        const auto p = baselines::preset(a.preset);
        overlay["edit"]["selection"] = editor::to_string(p.selection_mode);
        overlay["edit"]["consistency"] = p.consistency_on;
        overlay["edit"]["token_policy"] = keys::to_string(p.token_policy);
    }
    if (a.no_consistency) overlay["edit"]["consistency"] = false;
    if (a.selection) overlay["edit"]["selection"] = *a.selection;
    if (a.token_policy) overlay["edit"]["token_policy"] = *a.token_policy;
    if (a.layers) overlay["edit"]["layers"] = *a.layers;
    if (a.lambda_cons) overlay["edit"]["lambda_cons"] = *a.lambda_cons;
    if (a.tau_rank) overlay["edit"]["tau_rank"] = *a.tau_rank;
    if (a.tau_energy) overlay["edit"]["tau_energy"] = *a.tau_energy;
    if (a.beta) overlay["edit"]["beta"] = *a.beta;
    const auto cfg = load(c, overlay);
    if (a.entity && !a.sequential.empty()) throw ConfigError("--entity and --sequential are exclusive");
    if (!a.sequential.empty() && (!a.dump_z.empty() || !a.dump_selection.empty()))
        throw ConfigError("--dump-z and --dump-selection need a single --entity");
    require_dir(cfg.paths.benchmark, "benchmark");
    require_file(cfg.paths.checkpoint, "checkpoint");
    const std::string out = c.out.value_or(cfg.paths.edited);
    const fs::path report = a.report.empty() ? fs::path(out + ".edit.txt") : fs::path(a.report);

    const auto bench = corpus::read_benchmark(cfg.paths.benchmark);
    const auto w = model::load_checkpoint(cfg.paths.checkpoint);
    const auto ecfg = pipeline::resolve_edit_config(w, bench, cfg);

    if (!a.sequential.empty()) {
        const auto ids = pipeline::resolve_entities(bench, parse_ids(a.sequential));
        const auto res = editor::sequential_unlearn(w, bench, ids, ecfg);
        model::save_checkpoint(res.weights, out);
        auto rep = open_out(report);
        for (const auto& step : res.steps) {
            rep << "# entity " << step.entity << "\n";
            editor::write_edit_report(rep, step.edit);
            rep << "forget_all so far:";
            for (const auto& r : step.reports) rep << ' ' << r.entity_id << '=' << r.forget_all;
            rep << "\n";
        }
        std::cout << "unlearned " << ids.size() << " entities in sequence, saved " << out << "\n";
        return 0;
    }

    const std::size_t entity = a.entity.value_or(0);
    if (entity >= bench.entities.size()) throw ConfigError("--entity " + std::to_string(entity) + " out of range");
    const auto res = editor::unlearn_entity(w, bench, entity, ecfg);
    model::save_checkpoint(res.weights, out);
    {
        auto rep = open_out(report);
        rep << "entity " << entity << "\n";
        editor::write_edit_report(rep, res.report);
        rep << "z_cosine " << res.residuals.mean_cosine << "\n";
    }
    if (!a.dump_z.empty()) {
        auto zf = open_out(a.dump_z);
        residual::write_z_csv(zf, res.residuals);
    }
    if (!a.dump_selection.empty()) {
        const auto km = keys::extract_keys(w, bench.prompts[entity], ecfg.layer_end, ecfg.token_policy);
        auto sf = open_out(a.dump_selection);
        keys::write_selection(sf, res.selection, km);
    }
    std::cout << "unlearned entity " << entity << " (" << res.report.kept_prompts << "/" << res.report.total_prompts
              << " prompts, layers " << ecfg.layer_start << ".." << ecfg.layer_end << "), saved " << out << "\n";
    return 0;
}

int cmd_eval(const Common& c, std::optional<std::size_t> entity, const std::string& method, const std::string& z_csv,
             const std::string& log, const std::string& report_out) {
    const auto cfg = load(c, json::object());
    require_dir(cfg.paths.benchmark, "benchmark");
    require_file(cfg.paths.checkpoint, "checkpoint");
    if (!z_csv.empty()) require_file(z_csv, "z dump");
    const auto bench = corpus::read_benchmark(cfg.paths.benchmark);
    const auto w = model::load_checkpoint(cfg.paths.checkpoint);
    const auto ids = entity ? pipeline::resolve_entities(bench, {*entity}) : pipeline::resolve_entities(bench, cfg.eval_entities);
    if (!report_out.empty() && ids.size() != 1) throw ConfigError("--report needs a single entity");
    const std::string log_path = log.empty() ? cfg.paths.results_log : log;

    std::vector<eval::EvalReport> reports;
    for (std::size_t e : ids) {
        auto r = in_stage("eval", [&] { return eval::evaluate(w, bench, e, method); });
        if (!z_csv.empty()) r.z_cosine = z_cosine_from_csv(z_csv);
        reports.push_back(std::move(r));
    }
    ensure_parent(log_path);
    for (const auto& r : reports) {
        eval::append_results_log(log_path, r);
        std::printf("%s entity %zu: forget %.1f neighbor %.1f ppl %.3f mia %.3f mean_fn %.2f\n", r.method.c_str(),
                    r.entity_id, r.forget_all, r.neighbor_all, r.utility_ppl, r.mia_gap, r.mean_fn);
    }
    if (!report_out.empty()) {
        ensure_parent(report_out);
        eval::write_report(reports.front(), report_out);
    }
    return 0;
}

int cmd_compare(const Common& c, const std::string& presets, const std::string& log, const std::string& csv) {
    const auto cfg = load(c, json::object());
    const std::string log_path = log.empty() ? cfg.paths.results_log : log;
    if (!presets.empty()) {
        std::vector<std::string> names;
        if (presets == "all") {
            names = baselines::preset_names();
        } else {
            std::stringstream ss(presets);
            for (std::string n; std::getline(ss, n, ',');) names.push_back(baselines::preset(n).name);
        }
        require_dir(cfg.paths.benchmark, "benchmark");
        require_file(cfg.paths.checkpoint, "checkpoint");
        const auto bench = corpus::read_benchmark(cfg.paths.benchmark);
        const auto w = model::load_checkpoint(cfg.paths.checkpoint);
        const auto ecfg = pipeline::resolve_edit_config(w, bench, cfg);
        const auto ids = pipeline::resolve_entities(bench, cfg.eval_entities);
        const auto reports = baselines::run_presets(w, bench, ids, ecfg, names);
        ensure_parent(log_path);
        for (const auto& r : reports) eval::append_results_log(log_path, r);
    }
    if (!fs::exists(log_path)) throw IoError("results log " + log_path + " does not exist");
    const auto sorted = eval::compare(eval::read_results_log(log_path));
    std::cout << eval::compare_text(sorted);
    if (!csv.empty()) open_out(csv) << eval::compare_csv(sorted);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Entity unlearning on a toy transformer"};
    app.require_subcommand(1);

    Common gen_c, train_c, trace_c, unl_c, eval_c, cmp_c;

    auto* gen = app.add_subcommand("gen-corpus", "generate the synthetic benchmark");
    add_common(gen, gen_c);
    std::optional<std::size_t> entities;
    gen->add_option("--entities", entities, "number of entities");
    gen->add_option("--out", gen_c.out, "benchmark directory");

    auto* train = app.add_subcommand("train", "train the model on the benchmark corpus");
    add_common(train, train_c);
    std::optional<std::size_t> max_steps;
    train->add_option("--bench", train_c.bench, "benchmark directory");
    train->add_option("--out", train_c.out, "checkpoint to write");
    train->add_option("--max-steps", max_steps);

    auto* tr = app.add_subcommand("trace", "causal traces and severing grids as CSV");
    add_common(tr, trace_c);
    std::string sever = "all";
    std::optional<std::size_t> n_prompts;
    tr->add_option("--bench", trace_c.bench);
    tr->add_option("--checkpoint", trace_c.checkpoint);
    tr->add_option("--out", trace_c.out, "output directory");
    tr->add_option("--sever", sever, "none, mlp, attention or all");
    tr->add_option("--prompts", n_prompts, "prompts to trace");

    auto* unl = app.add_subcommand("unlearn", "erase an entity and write the edited checkpoint");
    add_common(unl, unl_c);
    UnlearnArgs ua;
    unl->add_option("--bench", unl_c.bench);
    unl->add_option("--checkpoint", unl_c.checkpoint);
    unl->add_option("--out", unl_c.out, "edited checkpoint to write");
    unl->add_option("--entity", ua.entity);
    unl->add_option("--sequential", ua.sequential, "comma separated entity ids, edited in order");
    unl->add_option("--preset", ua.preset, "cae, no_consistency, random_selection, all_keys or last_token");
    unl->add_flag("--no-consistency", ua.no_consistency);
    unl->add_option("--selection", ua.selection, "svd, random or all");
    unl->add_option("--token-policy", ua.token_policy, "lst or lt");
    unl->add_option("--layers", ua.layers, "a..b or auto");
    unl->add_option("--lambda-cons", ua.lambda_cons);
    unl->add_option("--tau-rank", ua.tau_rank);
    unl->add_option("--tau-energy", ua.tau_energy);
    unl->add_option("--beta", ua.beta);
    unl->add_option("--report", ua.report, "edit report path (default <out>.edit.txt)");
    unl->add_option("--dump-z", ua.dump_z, "write anchors, deltas and z vectors as CSV");
    unl->add_option("--dump-selection", ua.dump_selection, "write the selected prompts");

    auto* ev = app.add_subcommand("eval", "score a checkpoint and append to the results log");
    add_common(ev, eval_c);
    std::optional<std::size_t> ev_entity;
    std::string method = "model", z_csv, ev_log, ev_report;
    ev->add_option("--bench", eval_c.bench);
    ev->add_option("--checkpoint", eval_c.checkpoint);
    ev->add_option("--entity", ev_entity, "entity to score (default: eval.entities or all)");
    ev->add_option("--method", method, "label stored in the report");
    ev->add_option("--z", z_csv, "z dump from unlearn, for the consistency diagnostic");
    ev->add_option("--log", ev_log, "results log (JSON lines)");
    ev->add_option("--report", ev_report, "also write the report as JSON");

    auto* cmp = app.add_subcommand("compare", "rank methods in the results log");
    add_common(cmp, cmp_c);
    std::string presets, cmp_log, cmp_csv;
    cmp->add_option("--bench", cmp_c.bench);
    cmp->add_option("--checkpoint", cmp_c.checkpoint);
    cmp->add_option("--presets", presets, "run presets first: all or a comma separated list");
    cmp->add_option("--log", cmp_log, "results log (JSON lines)");
    cmp->add_option("--csv", cmp_csv, "also write the table as CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (*gen) return cmd_gen_corpus(gen_c, entities);
        if (*train) return cmd_train(train_c, max_steps);
        if (*tr) return cmd_trace(trace_c, sever, n_prompts);
        if (*unl) return cmd_unlearn(unl_c, ua);
        if (*ev) return cmd_eval(eval_c, ev_entity, method, z_csv, ev_log, ev_report);
        if (*cmp) return cmd_compare(cmp_c, presets, cmp_log, cmp_csv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
