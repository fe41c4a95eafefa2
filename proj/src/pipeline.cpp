#include "cae/pipeline.hpp"

#include <fstream>
#include <set>

#include "cae/error.hpp"
#include "cae/seed.hpp"

namespace cae::pipeline {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

namespace {

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError(section + ": expected an object");
    std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items())
        if (!ok.count(key)) throw ConfigError(section + (section.empty() ? "" : ".") + key + ": unknown config key");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(section + "." + key + ": wrong type");
    }
}

}  // namespace

std::pair<std::size_t, std::size_t> parse_layer_range(const std::string& s) {
    std::size_t sep = s.find("..");
    std::size_t skip = 2;
    if (sep == std::string::npos) {
        sep = s.find('-');
        skip = 1;
    }
    try {
        if (sep == std::string::npos) {
            const auto l = static_cast<std::size_t>(std::stoul(s));
            return {l, l};
        }
        std::size_t used = 0;
        const auto a = static_cast<std::size_t>(std::stoul(s.substr(0, sep), &used));
        if (used != sep) throw std::invalid_argument(s);
        const auto b = static_cast<std::size_t>(std::stoul(s.substr(sep + skip)));
        if (a > b) throw ConfigError("layers: start exceeds end in '" + s + "'");
        return {a, b};
    } catch (const std::logic_error&) {
        throw ConfigError("layers: expected a..b, got '" + s + "'");
    }
}

void RunConfig::merge_json(const json& j) {
    check_keys(j, "", {"seed", "paths", "benchmark", "model", "train", "trace", "edit", "eval"});
    read(j, "seed", seed, "seed");
    if (j.contains("paths")) {
        const auto& p = j["paths"];
        check_keys(p, "paths", {"benchmark", "checkpoint", "edited", "results_log", "out_dir"});
        read(p, "benchmark", paths.benchmark, "paths");
        read(p, "checkpoint", paths.checkpoint, "paths");
        read(p, "edited", paths.edited, "paths");
        read(p, "results_log", paths.results_log, "paths");
        read(p, "out_dir", paths.out_dir, "paths");
    }
    if (j.contains("benchmark")) {
        const auto& b = j["benchmark"];
        const std::string s = "benchmark";
        check_keys(b, s, {"entities", "variants", "strangers", "stranger_variants", "utility_train", "utility_heldout",
                          "member_passages", "first_name_pool", "surname_pool", "profile_copies",
                          "vocab_size"});
        read(b, "entities", benchmark.n_entities, s);
        read(b, "variants", benchmark.variants, s);
        read(b, "strangers", benchmark.n_strangers, s);
        read(b, "stranger_variants", benchmark.stranger_variants, s);
        read(b, "utility_train", benchmark.utility_train, s);
        read(b, "utility_heldout", benchmark.utility_heldout, s);
        read(b, "member_passages", benchmark.member_passages, s);
        read(b, "first_name_pool", benchmark.first_name_pool, s);
        read(b, "surname_pool", benchmark.surname_pool, s);
        read(b, "profile_copies", benchmark.profile_copies, s);
        read(b, "vocab_size", benchmark.vocab_size, s);
    }
    if (j.contains("model")) {
        const auto& m = j["model"];
        const std::string s = "model";
        check_keys(m, s, {"n_layers", "d_model", "d_mlp", "n_heads", "vocab_size", "max_seq"});
        read(m, "n_layers", model.n_layers, s);
        read(m, "d_model", model.d_model, s);
        read(m, "d_mlp", model.d_mlp, s);
        read(m, "n_heads", model.n_heads, s);
        read(m, "vocab_size", model.vocab_size, s);
        read(m, "max_seq", model.max_seq, s);
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        const std::string s = "train";
        check_keys(t, s, {"max_steps", "batch_size", "lr", "grad_clip", "warmup_steps", "eval_every", "target_accuracy",
                          "consolidate_steps"});
        read(t, "max_steps", train.max_steps, s);
        read(t, "batch_size", train.batch_size, s);
        read(t, "lr", train.lr, s);
        read(t, "grad_clip", train.grad_clip, s);
        read(t, "warmup_steps", train.warmup_steps, s);
        read(t, "eval_every", train.eval_every, s);
        read(t, "target_accuracy", train.target_accuracy, s);
        read(t, "consolidate_steps", train.consolidate_steps, s);
    }
    if (j.contains("trace")) {
        const auto& t = j["trace"];
        const std::string s = "trace";
        check_keys(t, s, {"noise_scale", "n_samples", "sever_window", "prompts", "span"});
        read(t, "noise_scale", trace.config.noise_scale, s);
        read(t, "n_samples", trace.config.n_samples, s);
        read(t, "sever_window", trace.config.sever_window, s);
        read(t, "prompts", trace.n_prompts, s);
        read(t, "span", trace.span, s);
    }
    if (j.contains("edit")) {
        const auto& e = j["edit"];
        const std::string s = "edit";
        check_keys(e, s, {"layers", "token_policy", "tau_rank", "tau_energy", "lambda_cons", "beta", "selection",
                          "consistency", "fixed_division", "retain_positions", "optimizer"});
        if (e.contains("layers")) {
            const auto& l = e["layers"];
            if (l.is_string() && l.get<std::string>() == "auto") {
                auto_layers = true;
            } else if (l.is_string()) {
                std::tie(edit.layer_start, edit.layer_end) = parse_layer_range(l.get<std::string>());
                auto_layers = false;
            } else if (l.is_array() && l.size() == 2 && l[0].is_number_unsigned() && l[1].is_number_unsigned()) {
                edit.layer_start = l[0];
                edit.layer_end = l[1];
                auto_layers = false;
            } else {
                throw ConfigError("edit.layers: expected \"auto\", \"a..b\" or [a, b]");
            }
        }
        if (e.contains("token_policy")) {
            std::string p;
            read(e, "token_policy", p, s);
            edit.token_policy = keys::parse_token_policy(p);
        }
        read(e, "tau_rank", edit.tau_rank, s);
        read(e, "tau_energy", edit.tau_energy, s);
        read(e, "lambda_cons", edit.lambda_cons, s);
        read(e, "beta", edit.beta, s);
        if (e.contains("selection")) {
            std::string m;
            read(e, "selection", m, s);
            edit.selection_mode = editor::parse_selection_mode(m);
        }
        read(e, "consistency", edit.consistency_on, s);
        read(e, "fixed_division", edit.fixed_division, s);
        if (e.contains("retain_positions")) {
            std::string p;
            read(e, "retain_positions", p, s);
            if (p == "every_prefix")
                edit.retain_positions = keys::RetainPositions::every_prefix;
            else if (p == "final_token")
                edit.retain_positions = keys::RetainPositions::final_token;
            else
                throw ConfigError("edit.retain_positions: expected every_prefix or final_token");
        }
        if (e.contains("optimizer")) {
            const auto& o = e["optimizer"];
            const std::string so = "edit.optimizer";
            check_keys(o, so, {"steps", "lr", "clamp_ratio", "stop_loss"});
            read(o, "steps", edit.optimizer.steps, so);
            read(o, "lr", edit.optimizer.lr, so);
            read(o, "clamp_ratio", edit.optimizer.clamp_ratio, so);
            read(o, "stop_loss", edit.optimizer.stop_loss, so);
        }
    }
    if (j.contains("eval")) {
        const auto& e = j["eval"];
        check_keys(e, "eval", {"entities"});
        read(e, "entities", eval_entities, "eval");
    }
}

ojson RunConfig::to_json() const {
    ojson j;
    j["seed"] = seed;
    j["paths"] = {{"benchmark", paths.benchmark},
                  {"checkpoint", paths.checkpoint},
                  {"edited", paths.edited},
                  {"results_log", paths.results_log},
                  {"out_dir", paths.out_dir}};
    j["benchmark"] = {{"entities", benchmark.n_entities},
                      {"variants", benchmark.variants},
                      {"strangers", benchmark.n_strangers},
                      {"stranger_variants", benchmark.stranger_variants},
                      {"utility_train", benchmark.utility_train},
                      {"utility_heldout", benchmark.utility_heldout},
                      {"member_passages", benchmark.member_passages},
                      {"first_name_pool", benchmark.first_name_pool},
                      {"surname_pool", benchmark.surname_pool},
                      {"profile_copies", benchmark.profile_copies},
                      {"vocab_size", benchmark.vocab_size}};
    j["model"] = {{"n_layers", model.n_layers}, {"d_model", model.d_model},       {"d_mlp", model.d_mlp},
                  {"n_heads", model.n_heads},   {"vocab_size", model.vocab_size}, {"max_seq", model.max_seq}};
    j["train"] = {{"max_steps", train.max_steps},
                  {"batch_size", train.batch_size},
                  {"lr", train.lr},
                  {"grad_clip", train.grad_clip},
                  {"warmup_steps", train.warmup_steps},
                  {"eval_every", train.eval_every},
                  {"target_accuracy", train.target_accuracy},
                  {"consolidate_steps", train.consolidate_steps}};
    j["trace"] = {{"noise_scale", trace.config.noise_scale},
                  {"n_samples", trace.config.n_samples},
                  {"sever_window", trace.config.sever_window},
                  {"prompts", trace.n_prompts},
                  {"span", trace.span}};
    ojson e;
    if (auto_layers)
        e["layers"] = "auto";
    else
        e["layers"] = {edit.layer_start, edit.layer_end};
    e["token_policy"] = keys::to_string(edit.token_policy);
    e["tau_rank"] = edit.tau_rank;
    e["tau_energy"] = edit.tau_energy;
    e["lambda_cons"] = edit.lambda_cons;
    e["beta"] = edit.beta;
    e["selection"] = editor::to_string(edit.selection_mode);
    e["consistency"] = edit.consistency_on;
    e["fixed_division"] = edit.fixed_division;
    e["retain_positions"] = edit.retain_positions == keys::RetainPositions::every_prefix ? "every_prefix" : "final_token";
    e["optimizer"] = {{"steps", edit.optimizer.steps},
                      {"lr", edit.optimizer.lr},
                      {"clamp_ratio", edit.optimizer.clamp_ratio},
                      {"stop_loss", edit.optimizer.stop_loss}};
    j["edit"] = e;
    j["eval"] = {{"entities", eval_entities}};
    return j;
}

void RunConfig::propagate_seeds() {
    benchmark.seed = seed;
    model.seed = derive_seed(seed, "init");
    train.seed = derive_seed(seed, "train");
    trace.config.seed = derive_seed(seed, "trace");
    edit.seed = derive_seed(seed, "edit");
}

void RunConfig::validate() const {
    benchmark.validate();
    model.validate();
    if (train.batch_size == 0) throw ConfigError("train.batch_size must be positive");
    if (train.eval_every == 0) throw ConfigError("train.eval_every must be positive");
    if (trace.config.n_samples == 0) throw ConfigError("trace.n_samples must be positive");
    if (trace.n_prompts == 0) throw ConfigError("trace.prompts must be positive");
    if (trace.span == 0 || trace.span > model.n_layers) throw ConfigError("trace.span must lie in [1, n_layers]");
    if (!auto_layers) edit.validate(model.n_layers);
}

RunConfig default_run_config() {
    RunConfig c;
    c.benchmark.n_entities = 4;
    c.train.max_steps = 4000;
    c.train.consolidate_steps = 400;
    c.propagate_seeds();
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    RunConfig c = default_run_config();
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    c.merge_json(j);
    c.propagate_seeds();
    return c;
}

corpus::Benchmark make_benchmark(const RunConfig& cfg) {
    corpus::BenchmarkConfig bc = cfg.benchmark;
    bc.vocab_size = std::min(bc.vocab_size, cfg.model.vocab_size);
    return corpus::generate_benchmark(bc);
}

std::vector<model::Probe> training_probes(const corpus::Benchmark& bench) {
    std::vector<model::Probe> out;
    for (const auto& s : bench.suites) {
        out.insert(out.end(), s.forget_fb.begin(), s.forget_fb.end());
        out.insert(out.end(), s.forget_qa.begin(), s.forget_qa.end());
    }
    return out;
}

model::TrainResult train_model(const corpus::Benchmark& bench, const RunConfig& cfg) {
    if (bench.vocab.size() > cfg.model.vocab_size)
        throw ConfigError("model.vocab_size " + std::to_string(cfg.model.vocab_size) + " is smaller than the " +
                          std::to_string(bench.vocab.size()) + "-word benchmark vocabulary");
    const auto probes = training_probes(bench);
    return model::train(model::init_model(cfg.model), bench.corpus, cfg.train, probes);
}

std::vector<corpus::Prompt> trace_prompts(const corpus::Benchmark& bench, std::size_t n) {
    std::vector<std::vector<const corpus::Prompt*>> per_entity(bench.prompts.size());
    for (std::size_t e = 0; e < bench.prompts.size(); ++e)
        for (const auto& p : bench.prompts[e])
            if (p.form == corpus::PromptForm::fill_blank) per_entity[e].push_back(&p);
    std::vector<corpus::Prompt> out;
    for (std::size_t i = 0; out.size() < n; ++i) {
        bool any = false;
        for (const auto& list : per_entity) {
            if (i < list.size() && out.size() < n) {
                out.push_back(*list[i]);
                any = true;
            }
        }
        if (!any) break;
    }
    return out;
}

std::vector<trace::TraceGrid> trace_grids(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                          const RunConfig& cfg, trace::SeveredKind kind) {
    std::vector<trace::TraceGrid> grids;
    for (const auto& p : trace_prompts(bench, cfg.trace.n_prompts)) {
        if (kind == trace::SeveredKind::none)
            grids.push_back(trace::causal_trace(w, p, p.gold, cfg.trace.config));
        else
            grids.push_back(trace::sever_trace(w, p, p.gold, kind, cfg.trace.config));
    }
    return grids;
}

std::pair<std::size_t, std::size_t> choose_edit_layers(const model::TransformerWeights& w,
                                                       const corpus::Benchmark& bench, const RunConfig& cfg) {
    const auto grids = trace_grids(w, bench, cfg);
    return trace::pick_edit_layers(grids, cfg.trace.span);
}

editor::EditConfig resolve_edit_config(const model::TransformerWeights& w, const corpus::Benchmark& bench,
                                       const RunConfig& cfg) {
    editor::EditConfig e = cfg.edit;
    if (cfg.auto_layers) std::tie(e.layer_start, e.layer_end) = in_stage("trace", [&] { return choose_edit_layers(w, bench, cfg); });
    e.validate(w.config.n_layers);
    return e;
}

std::vector<std::size_t> resolve_entities(const corpus::Benchmark& bench, const std::vector<std::size_t>& requested) {
    std::vector<std::size_t> out = requested;
    if (out.empty())
        for (std::size_t e = 0; e < bench.entities.size(); ++e) out.push_back(e);
    for (std::size_t e : out)
        if (e >= bench.entities.size()) throw ConfigError("entity id " + std::to_string(e) + " out of range");
    return out;
}

}  // namespace cae::pipeline
