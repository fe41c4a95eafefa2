#include "cae/keys.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <random>

#include "cae/error.hpp"

namespace cae::keys {

std::string to_string(TokenPolicy p) { return p == TokenPolicy::last_subject_token ? "lst" : "lt"; }

TokenPolicy parse_token_policy(const std::string& s) {
    if (s == "lst" || s == "last_subject_token") return TokenPolicy::last_subject_token;
    if (s == "lt" || s == "last_token") return TokenPolicy::last_token;
    throw ConfigError("token_policy: expected lst or lt, got '" + s + "'");
}

std::size_t policy_token(const corpus::Prompt& p, TokenPolicy policy) {
    if (p.tokens.empty()) throw InvalidInput("empty prompt");
    if (policy == TokenPolicy::last_token) return p.tokens.size() - 1;
    const auto& sp = p.subject_span;
    if (sp.start >= sp.end || sp.end > p.tokens.size()) throw SpanNotFound("prompt lacks a valid subject span");
    return p.last_subject_token();
}

KeyMatrix extract_keys(const TransformerWeights& w, std::span<const corpus::Prompt> prompts, std::size_t layer,
                       TokenPolicy policy) {
    if (prompts.empty()) throw InvalidInput("extract_keys: no prompts");
    if (layer >= w.config.n_layers) throw InvalidInput("extract_keys: layer out of range");
    KeyMatrix km;
    km.layer = layer;
    km.policy = policy;
    km.keys.resize(static_cast<Eigen::Index>(w.config.d_mlp), static_cast<Eigen::Index>(prompts.size()));
    for (std::size_t j = 0; j < prompts.size(); ++j) {
        const std::size_t t = policy_token(prompts[j], policy);
        const auto tr = model::forward(w, prompts[j].tokens);
        km.keys.col(static_cast<Eigen::Index>(j)) = tr.mlp_act[layer].row(static_cast<Eigen::Index>(t)).transpose();
        km.prompt_ids.push_back(j);
    }
    if (!numerics::all_finite(km.keys)) throw NumericError("extract_keys: non-finite key");
    return km;
}

Covariance estimate_covariance(const TransformerWeights& w, std::span<const TokenSeq> retain, std::size_t layer,
                               double scale, RetainPositions positions) {
    if (retain.empty()) throw InvalidInput("estimate_covariance: no retain samples");
    if (layer >= w.config.n_layers) throw InvalidInput("estimate_covariance: layer out of range");
    if (!(scale > 0.0)) throw ConfigError("beta must be positive");
    const auto f = static_cast<Eigen::Index>(w.config.d_mlp);
    Covariance cov;
    cov.layer = layer;
    cov.scale = scale;
    cov.c = Mat::Zero(f, f);
    for (const auto& seq : retain) {
        const auto tr = model::forward(w, seq);
        const Mat& act = tr.mlp_act[layer];
        if (positions == RetainPositions::final_token) {
            const auto k = act.row(act.rows() - 1);
            cov.c.noalias() += k.transpose() * k;
            ++cov.n_samples;
        } else {
            cov.c.noalias() += act.transpose() * act;
            cov.n_samples += static_cast<std::size_t>(act.rows());
        }
    }
    cov.c *= scale / static_cast<double>(cov.n_samples);
    cov.c = 0.5 * (cov.c + cov.c.transpose()).eval();
    cov.few_samples = cov.n_samples < w.config.d_mlp / 4;
    return cov;
}

namespace {

void check_thresholds(double tau_rank, double tau_energy) {
    if (!(tau_rank > 0.0 && tau_rank <= 1.0)) throw ConfigError("tau_rank must lie in (0, 1]");
    if (!(tau_energy > 0.0 && tau_energy <= 1.0)) throw ConfigError("tau_energy must lie in (0, 1]");
}

}  // namespace

Selection svd_select(const KeyMatrix& km, double tau_rank, double tau_energy) {
    check_thresholds(tau_rank, tau_energy);
    const std::size_t u = km.size();
    if (u == 0 || km.keys.rows() == 0) throw InvalidInput("svd_select: empty key matrix");

    const auto dec = numerics::svd(km.keys);
    const Eigen::Index k = dec.s.size();
    const double total_s = dec.s.squaredNorm();
    Eigen::Index r = k;
    double cum = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
        cum += dec.s(i) * dec.s(i);
        if (cum >= tau_rank * total_s) {
            r = i + 1;
            break;
        }
    }

    const Mat proj = dec.u.leftCols(r).transpose() * km.keys;  // r x u
    std::vector<double> score(u);
    for (std::size_t j = 0; j < u; ++j) score[j] = proj.col(static_cast<Eigen::Index>(j)).norm();
    std::vector<std::size_t> order(u);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });

    double total = 0.0;
    for (std::size_t j : order) total += score[j] * score[j];
    std::size_t keep = u;
    double kept_energy = total;
    if (tau_energy < 1.0) {
        double acc = 0.0;
        for (std::size_t m = 0; m < u; ++m) {
            acc += score[order[m]] * score[order[m]];
            if (acc >= tau_energy * total) {
                keep = m + 1;
                kept_energy = acc;
                break;
            }
        }
    }

    Selection sel;
    sel.rank_used = static_cast<std::size_t>(r);
    sel.energy_captured = total > 0.0 ? kept_energy / total : 1.0;
    for (std::size_t m = 0; m < keep; ++m) {
        sel.kept_indices.push_back(order[m]);
        sel.scores.push_back(score[order[m]]);
    }
    return sel;
}

Selection random_select(const KeyMatrix& km, std::size_t count, std::uint64_t seed) {
    const std::size_t u = km.size();
    if (u == 0) throw InvalidInput("random_select: empty key matrix");
    if (count == 0 || count > u) throw InvalidInput("random_select: count must be in [1, " + std::to_string(u) + "]");
    std::vector<std::size_t> idx(u);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    Selection sel;
    sel.kept_indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count));
    sel.energy_captured = static_cast<double>(count) / static_cast<double>(u);
    return sel;
}

Selection select_all(const KeyMatrix& km) {
    if (km.size() == 0) throw InvalidInput("select_all: empty key matrix");
    Selection sel;
    sel.kept_indices.resize(km.size());
    std::iota(sel.kept_indices.begin(), sel.kept_indices.end(), 0);
    return sel;
}

void write_selection(std::ostream& out, const Selection& s, const KeyMatrix& km) {
    out << "layer " << km.layer << "\n";
    out << "token_policy " << to_string(km.policy) << "\n";
    out << "total_keys " << km.size() << "\n";
    out << "rank_used " << s.rank_used << "\n";
    out << "energy_captured " << s.energy_captured << "\n";
    out << "kept " << s.kept_indices.size() << "\n";
    out << "prompt_id score\n";
    for (std::size_t i = 0; i < s.kept_indices.size(); ++i) {
        out << km.prompt_ids.at(s.kept_indices[i]);
        if (i < s.scores.size()) out << ' ' << s.scores[i];
        out << "\n";
    }
}

}  // namespace cae::keys
