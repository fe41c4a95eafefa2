#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cae/error.hpp"
#include "cae/model.hpp"

namespace cae::model {

double probe_fraction_correct(const TransformerWeights& w, std::span<const Probe> probes) {
    if (probes.empty()) return 0.0;
    std::size_t hits = 0;
    for (const Probe& p : probes) {
        TokenSeq ans = greedy_answer(w, p.prompt, 1);
        if (ans.front() == p.gold) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(probes.size());
}

TrainResult train(TransformerWeights weights, const std::vector<TokenSeq>& corpus, const TrainConfig& cfg,
                  std::span<const Probe> probes) {
    if (corpus.empty()) throw InvalidInput("train: corpus is empty");
    if (cfg.batch_size == 0 || cfg.eval_every == 0) throw ConfigError("train: batch_size and eval_every must be positive");

    TransformerWeights grads = zeros_like(weights.config);
    TransformerWeights m1 = zeros_like(weights.config);
    TransformerWeights m2 = zeros_like(weights.config);
    auto wv = flat_views(weights);
    auto gv = flat_views(grads);
    auto mv = flat_views(m1);
    auto vv = flat_views(m2);

    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t cursor = 0;

    TrainReport report;
    double window_loss = 0.0;
    double window_tokens = 0.0;
    std::size_t stop_at = cfg.max_steps;
    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        for (auto& g : gv) g.setZero();

        std::vector<std::size_t> batch;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor == order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch.push_back(order[cursor++]);
        }
        double n_tokens = 0.0;
        for (std::size_t i : batch) n_tokens += static_cast<double>(std::max<std::size_t>(corpus[i].size(), 1) - 1);
        if (n_tokens == 0.0) continue;
        for (std::size_t i : batch) window_loss += accumulate_sequence_grad(weights, corpus[i], 1.0 / n_tokens, grads);
        window_tokens += n_tokens;

        double norm_sq = 0.0;
        for (auto& g : gv) norm_sq += g.squaredNorm();
        const double norm = std::sqrt(norm_sq);
        if (!std::isfinite(norm)) throw NumericError("train: non-finite gradient at step " + std::to_string(step));
        const double clip = (cfg.grad_clip > 0.0 && norm > cfg.grad_clip) ? cfg.grad_clip / norm : 1.0;

        const double warm = cfg.warmup_steps ? std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps)) : 1.0;
        const double lr = cfg.lr * warm;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t t = 0; t < wv.size(); ++t) {
            auto g = gv[t].array() * clip;
            mv[t].array() = cfg.beta1 * mv[t].array() + (1.0 - cfg.beta1) * g;
            vv[t].array() = cfg.beta2 * vv[t].array() + (1.0 - cfg.beta2) * g.square();
            wv[t].array() -= lr * (mv[t].array() / bc1) / ((vv[t].array() / bc2).sqrt() + cfg.eps);
        }
        report.steps = step;

        if (step % cfg.eval_every == 0 || step == stop_at) {
            const double mean_loss = window_loss / std::max(window_tokens, 1.0);
            report.loss_curve.push_back(mean_loss);
            report.final_loss = mean_loss;
            window_loss = 0.0;
            window_tokens = 0.0;
            report.probe_accuracy = probes.empty() ? 0.0 : probe_fraction_correct(weights, probes);
            if (!report.reached_target && !probes.empty() && report.probe_accuracy >= cfg.target_accuracy) {
                report.reached_target = true;
                stop_at = std::min(cfg.max_steps, step + cfg.consolidate_steps);
            }
        }
        if (step >= stop_at) break;
    }
    return {std::move(weights), std::move(report)};
}

}  // namespace cae::model
