#include "cae/residual.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

#include "cae/error.hpp"

namespace cae::residual {

void OptimizerConfig::validate() const {
    if (steps < 1) throw ConfigError("optimizer.steps must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("optimizer.lr must be positive");
    if (!(lambda_cons >= 0.0)) throw ConfigError("lambda_cons must be >= 0");
    if (!(clamp_ratio > 0.0 && clamp_ratio <= 1.0)) throw ConfigError("optimizer.clamp_ratio must lie in (0, 1]");
    if (!(stop_loss >= 0.0)) throw ConfigError("optimizer.stop_loss must be >= 0");
}

std::vector<Vec> ResidualSet::z() const {
    std::vector<Vec> out;
    for (std::size_t j = 0; j < deltas.size(); ++j) out.push_back(anchors[j] + deltas[j]);
    return out;
}

double consistency_loss(const Vec& current, std::span<const Vec> previous, double lambda) {
    if (previous.empty()) return 0.0;
    Vec mean = Vec::Zero(current.size());
    for (const Vec& p : previous) {
        if (p.size() != current.size()) throw InvalidInput("consistency_loss: dimension mismatch");
        mean += p;
    }
    mean /= static_cast<double>(previous.size());
    return lambda * (current - mean).squaredNorm();
}

double mean_pairwise_cosine(std::span<const Vec> v) {
    if (v.size() < 2) return 1.0;
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = i + 1; j < v.size(); ++j) {
            const double denom = v[i].norm() * v[j].norm();
            acc += denom > 0.0 ? v[i].dot(v[j]) / denom : 0.0;
            ++pairs;
        }
    return acc / static_cast<double>(pairs);
}

ResidualSet optimize_residuals(const TransformerWeights& w, std::span<const corpus::Prompt> prompts,
                               std::size_t target_layer, keys::TokenPolicy policy, const OptimizerConfig& cfg) {
    cfg.validate();
    if (prompts.empty()) throw InvalidInput("optimize_residuals: no prompts");
    if (target_layer >= w.config.n_layers) throw InvalidInput("optimize_residuals: target layer out of range");
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    const auto d = static_cast<Eigen::Index>(w.config.d_model);

    ResidualSet rs;
    rs.target_layer = target_layer;
    rs.policy = policy;
    Vec settled_sum = Vec::Zero(d);

    for (std::size_t j = 0; j < prompts.size(); ++j) {
        const auto& tokens = prompts[j].tokens;
        const std::size_t t = keys::policy_token(prompts[j], policy);
        const model::InjectionSite site{target_layer + 1, t};
        const Vec h = model::forward(w, tokens).hidden[site.layer].row(static_cast<Eigen::Index>(t)).transpose();
        const double h_norm = h.norm();
        const double lr = cfg.lr * h_norm / std::sqrt(static_cast<double>(d));
        const double max_norm = cfg.clamp_ratio * h_norm;

        model::LossSpec spec;
        spec.target = cfg.null_token;
        if (cfg.lambda_cons > 0.0 && j > 0) {
            spec.lambda = cfg.lambda_cons;
            spec.target_mean = settled_sum / static_cast<double>(j);
        }

        PromptDiagnostics diag;
        Vec delta = Vec::Zero(d), m = Vec::Zero(d), v = Vec::Zero(d);
        for (std::size_t step = 1; step <= cfg.steps; ++step) {
            const auto g = model::grad_wrt_delta(w, tokens, site, delta, spec);
            if (!std::isfinite(g.loss))
                throw NumericError("optimize_residuals: non-finite loss on prompt " + std::to_string(j) + " at step " +
                                   std::to_string(step));
            if (step == 1) diag.initial_nll = g.nll;
            diag.loss_curve.push_back(g.loss);
            if (g.loss < cfg.stop_loss) break;
            m = kBeta1 * m + (1.0 - kBeta1) * g.grad;
            v = kBeta2 * v + (1.0 - kBeta2) * g.grad.cwiseAbs2();
            const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
            delta -= lr * ((m / bc1).array() / ((v / bc2).array().sqrt() + kEps)).matrix();
            const double n = delta.norm();
            if (n > max_norm) delta *= max_norm / n;
            diag.steps_run = step;
        }
        const auto fin = model::grad_wrt_delta(w, tokens, site, delta, spec);
        if (!std::isfinite(fin.loss)) throw NumericError("optimize_residuals: non-finite final loss");
        diag.final_nll = fin.nll;
        diag.final_consistency = fin.consistency;
        diag.nll_not_improved = fin.nll > diag.initial_nll;

        settled_sum += h + delta;
        rs.tokens.push_back(t);
        rs.anchors.push_back(h);
        rs.deltas.push_back(std::move(delta));
        rs.diagnostics.push_back(std::move(diag));
    }
    const auto z = rs.z();
    rs.mean_cosine = mean_pairwise_cosine(z);
    return rs;
}

void write_z_csv(std::ostream& out, const ResidualSet& rs) {
    if (rs.size() == 0) return;
    out << "prompt,kind";
    for (Eigen::Index i = 0; i < rs.deltas.front().size(); ++i) out << ",dim_" << i;
    out << '\n';
    const auto z = rs.z();
    char buf[32];
    auto row = [&](std::size_t j, const char* kind, const Vec& v) {
        out << j << ',' << kind;
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g", v(i));
            out << ',' << buf;
        }
        out << '\n';
    };
    for (std::size_t j = 0; j < rs.size(); ++j) {
        row(j, "anchor", rs.anchors[j]);
        row(j, "delta", rs.deltas[j]);
        row(j, "z", z[j]);
    }
}

}  // namespace cae::residual
