#include "cae/trace.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "cae/error.hpp"
#include "cae/seed.hpp"

namespace cae::trace {

using model::ForwardTrace;
using model::Patch;
using model::PatchKind;

std::string to_string(SeveredKind k) {
    switch (k) {
        case SeveredKind::mlp: return "mlp";
        case SeveredKind::attention: return "attention";
        default: return "none";
    }
}

Vec embedding_std(const TransformerWeights& w) {
    const Mat& e = w.tok_emb;
    Vec mean = e.colwise().mean().transpose();
    Vec var = Vec::Zero(e.cols());
    for (Eigen::Index i = 0; i < e.rows(); ++i) var += (e.row(i).transpose() - mean).array().square().matrix();
    return (var / static_cast<double>(e.rows())).array().sqrt().matrix();
}

namespace {

void check_inputs(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, const TraceConfig& cfg) {
    if (cfg.n_samples == 0) throw ConfigError("trace.n_samples must be positive");
    if (!(cfg.noise_scale >= 0.0) || !std::isfinite(cfg.noise_scale))
        throw ConfigError("trace.noise_scale must be finite and non-negative");
    if (gold < 0 || static_cast<std::size_t>(gold) >= w.config.vocab_size)
        throw InvalidToken("trace: gold token outside vocabulary");
    const auto& sp = prompt.subject_span;
    if (sp.start >= sp.end || sp.end > prompt.tokens.size()) throw SpanNotFound("trace: prompt lacks a subject span");
}

// One list of additive embedding patches per noise sample.
std::vector<std::vector<Patch>> noise_patches(const TransformerWeights& w, const corpus::Prompt& prompt,
                                              const TraceConfig& cfg) {
    const Vec sd = embedding_std(w) * cfg.noise_scale;
    std::vector<std::vector<Patch>> out(cfg.n_samples);
    for (std::size_t s = 0; s < cfg.n_samples; ++s) {
        std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(s)));
        std::normal_distribution<double> normal(0.0, 1.0);
        for (std::size_t t = prompt.subject_span.start; t < prompt.subject_span.end; ++t) {
            Vec v(sd.size());
            for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = normal(rng) * sd(i);
            out[s].push_back({PatchKind::add_hidden, 0, t, std::move(v)});
        }
    }
    return out;
}

double final_prob(const ForwardTrace& tr, Token gold) {
    return model::token_prob(tr.logits, static_cast<std::size_t>(tr.logits.rows() - 1), gold);
}

TraceGrid run_grid(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, const TraceConfig& cfg,
                   SeveredKind kind, std::size_t window) {
    check_inputs(w, prompt, gold, cfg);
    const std::size_t L = w.config.n_layers;
    const std::size_t seq = prompt.tokens.size();
    const ForwardTrace clean = model::forward(w, prompt.tokens);
    const auto noise = noise_patches(w, prompt, cfg);
    const double n = static_cast<double>(cfg.n_samples);

    std::vector<ForwardTrace> corrupted;
    std::vector<double> p_corrupt;
    for (const auto& np : noise) {
        corrupted.push_back(model::forward_patched(w, prompt.tokens, np));
        p_corrupt.push_back(final_prob(corrupted.back(), gold));
    }

    TraceGrid g;
    g.effect = Mat::Zero(static_cast<Eigen::Index>(L + 1), static_cast<Eigen::Index>(seq));
    g.clean_prob = final_prob(clean, gold);
    for (double p : p_corrupt) g.corrupted_prob += p / n;
    g.noise_scale = cfg.noise_scale;
    g.n_noise_samples = cfg.n_samples;
    g.low_contrast = g.corrupted_prob >= g.clean_prob;
    g.severed_kind = kind;
    g.last_subject_token = prompt.last_subject_token();

    const PatchKind freeze = kind == SeveredKind::mlp ? PatchKind::set_mlp : PatchKind::set_attn;
    for (std::size_t b = 0; b <= L; ++b) {
        // states before the subject are untouched by the noise, so restoring them is a no-op
        for (std::size_t t = prompt.subject_span.start; t < seq; ++t) {
            double acc = 0.0;
            for (std::size_t s = 0; s < cfg.n_samples; ++s) {
                std::vector<Patch> patches = noise[s];
                patches.push_back({PatchKind::set_hidden, b, t, clean.hidden[b].row(static_cast<Eigen::Index>(t)).transpose()});
                if (kind != SeveredKind::none) {
                    const auto& src = kind == SeveredKind::mlp ? corrupted[s].mlp_out : corrupted[s].attn_out;
                    for (std::size_t blk = b; blk < std::min(L, b + window); ++blk)
                        patches.push_back({freeze, blk, t, src[blk].row(static_cast<Eigen::Index>(t)).transpose()});
                }
                acc += final_prob(model::forward_patched(w, prompt.tokens, patches), gold) - p_corrupt[s];
            }
            g.effect(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(t)) = acc / n;
        }
    }
    if (!numerics::all_finite(g.effect)) throw NumericError("trace: non-finite effect");
    return g;
}

}  // namespace

TraceGrid causal_trace(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, const TraceConfig& cfg) {
    return run_grid(w, prompt, gold, cfg, SeveredKind::none, 0);
}

SeverGrid sever_trace(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, SeveredKind kind,
                      const TraceConfig& cfg) {
    if (kind == SeveredKind::none) throw InvalidInput("sever_trace: severed kind must be mlp or attention");
    return run_grid(w, prompt, gold, cfg, kind, cfg.sever_window);
}

double restored_prob(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, const TraceConfig& cfg,
                     std::span<const model::InjectionSite> restore) {
    check_inputs(w, prompt, gold, cfg);
    const ForwardTrace clean = model::forward(w, prompt.tokens);
    double acc = 0.0;
    for (auto patches : noise_patches(w, prompt, cfg)) {
        for (const auto& site : restore) {
            if (site.layer > w.config.n_layers || site.token >= prompt.tokens.size())
                throw InvalidInput("restored_prob: restore site out of range");
            patches.push_back({PatchKind::set_hidden, site.layer, site.token,
                               clean.hidden[site.layer].row(static_cast<Eigen::Index>(site.token)).transpose()});
        }
        acc += final_prob(model::forward_patched(w, prompt.tokens, patches), gold);
    }
    return acc / static_cast<double>(cfg.n_samples);
}

std::pair<std::size_t, std::size_t> pick_edit_layers(std::span<const TraceGrid> grids, std::size_t span) {
    if (grids.empty()) throw InvalidInput("pick_edit_layers: no grids");
    const std::size_t L = static_cast<std::size_t>(grids.front().effect.rows()) - 1;
    if (span == 0 || span > L)
        throw InvalidInput("pick_edit_layers: span " + std::to_string(span) + " outside [1, " + std::to_string(L) + "]");
    Vec score = Vec::Zero(static_cast<Eigen::Index>(L));
    for (const auto& g : grids) {
        if (static_cast<std::size_t>(g.effect.rows()) != L + 1) throw InvalidInput("pick_edit_layers: grid depth mismatch");
        const auto col = static_cast<Eigen::Index>(g.last_subject_token);
        if (col >= g.effect.cols()) throw InvalidInput("pick_edit_layers: last subject token outside grid");
        for (std::size_t l = 0; l < L; ++l) score(static_cast<Eigen::Index>(l)) += g.effect(static_cast<Eigen::Index>(l + 1), col);
    }
    score /= static_cast<double>(grids.size());
    std::size_t best = 0;
    double best_sum = -INFINITY;
    for (std::size_t start = 0; start + span <= L; ++start) {
        const double s = score.segment(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(span)).sum();
        if (s > best_sum) {
            best_sum = s;
            best = start;
        }
    }
    return {best, best + span - 1};
}

void write_trace_csv(std::ostream& out, const TraceGrid& grid, std::span<const Token> tokens,
                     const corpus::Vocabulary& vocab, bool header) {
    if (static_cast<std::size_t>(grid.effect.cols()) != tokens.size())
        throw InvalidInput("write_trace_csv: token count does not match grid");
    if (header) out << "layer,token_index,token_text,effect,severed_kind\n";
    const std::string kind = to_string(grid.severed_kind);
    char buf[32];
    for (Eigen::Index b = 0; b < grid.effect.rows(); ++b)
        for (Eigen::Index t = 0; t < grid.effect.cols(); ++t) {
            std::snprintf(buf, sizeof buf, "%.10g", grid.effect(b, t));
            std::string text = vocab.word(tokens[static_cast<std::size_t>(t)]);
            if (text.find_first_of(",\"") != std::string::npos) {
                std::string q = "\"";
                for (char c : text) q += c == '"' ? std::string("\"\"") : std::string(1, c);
                text = q + "\"";
            }
            out << b << ',' << t << ',' << text << ',' << buf << ',' << kind
                << '\n';
        }
}

}  // namespace cae::trace
