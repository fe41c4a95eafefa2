#include "cae/model.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "cae/error.hpp"
#include "model_internal.hpp"

namespace cae::model {

void ModelConfig::validate() const {
    if (n_layers < 2) throw ConfigError("model.n_layers must be >= 2");
    if (d_model == 0) throw ConfigError("model.d_model must be positive");
    if (n_heads == 0 || d_model % n_heads != 0) throw ConfigError("model.n_heads must divide model.d_model");
    if (d_mlp < d_model) throw ConfigError("model.d_mlp must be >= model.d_model");
    if (vocab_size < 2) throw ConfigError("model.vocab_size must be >= 2");
    if (max_seq < 1) throw ConfigError("model.max_seq must be positive");
}

TransformerWeights zeros_like(const ModelConfig& cfg) {
    const auto d = static_cast<Eigen::Index>(cfg.d_model);
    const auto f = static_cast<Eigen::Index>(cfg.d_mlp);
    TransformerWeights w;
    w.config = cfg;
    w.tok_emb = Mat::Zero(static_cast<Eigen::Index>(cfg.vocab_size), d);
    w.pos_emb = Mat::Zero(static_cast<Eigen::Index>(cfg.max_seq), d);
    w.layers.resize(cfg.n_layers);
    for (auto& l : w.layers) {
        l.wq = Mat::Zero(d, d);
        l.wk = Mat::Zero(d, d);
        l.wv = Mat::Zero(d, d);
        l.wo = Mat::Zero(d, d);
        l.ln1_g = Vec::Zero(d);
        l.ln1_b = Vec::Zero(d);
        l.ln2_g = Vec::Zero(d);
        l.ln2_b = Vec::Zero(d);
        l.w_in = Mat::Zero(f, d);
        l.w_out = Mat::Zero(d, f);
    }
    w.lnf_g = Vec::Zero(d);
    w.lnf_b = Vec::Zero(d);
    w.unembed = Mat::Zero(static_cast<Eigen::Index>(cfg.vocab_size), d);
    return w;
}

std::vector<Eigen::Map<Eigen::VectorXd>> flat_views(TransformerWeights& w) {
    std::vector<Eigen::Map<Eigen::VectorXd>> views;
    w.for_each_param([&](auto& t) { views.emplace_back(t.data(), t.size()); });
    return views;
}

bool TransformerWeights::operator==(const TransformerWeights& other) const {
    const ModelConfig& a = config;
    const ModelConfig& b = other.config;
    if (a.n_layers != b.n_layers || a.d_model != b.d_model || a.d_mlp != b.d_mlp || a.n_heads != b.n_heads ||
        a.vocab_size != b.vocab_size || a.max_seq != b.max_seq)
        return false;
    std::vector<const double*> mine, theirs;
    std::vector<Eigen::Index> sizes;
    for_each_param([&](const auto& t) {
        mine.push_back(t.data());
        sizes.push_back(t.size());
    });
    other.for_each_param([&](const auto& t) { theirs.push_back(t.data()); });
    for (std::size_t i = 0; i < mine.size(); ++i)
        for (Eigen::Index j = 0; j < sizes[i]; ++j)
            if (mine[i][j] != theirs[i][j]) return false;
    return true;
}

TransformerWeights init_model(const ModelConfig& config) {
    config.validate();
    TransformerWeights w = zeros_like(config);
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto fill = [&](Mat& m, double std) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * normal(rng);
    };
    const double d = static_cast<double>(config.d_model);
    const double f = static_cast<double>(config.d_mlp);
    const double depth = 2.0 * static_cast<double>(config.n_layers);

    fill(w.tok_emb, 0.5);
    fill(w.pos_emb, 0.1);
    for (auto& l : w.layers) {
        fill(l.wq, 1.0 / std::sqrt(d));
        fill(l.wk, 1.0 / std::sqrt(d));
        fill(l.wv, 1.0 / std::sqrt(d));
        fill(l.wo, 1.0 / std::sqrt(d * depth));
        l.ln1_g.setOnes();
        l.ln2_g.setOnes();
        fill(l.w_in, 1.0 / std::sqrt(d));
        fill(l.w_out, 1.0 / std::sqrt(f * depth));
    }
    w.lnf_g.setOnes();
    fill(w.unembed, 1.0 / std::sqrt(d));
    return w;
}

namespace detail {

Mat layer_norm(const Mat& x, const Vec& g, const Vec& b, LnCache* cache) {
    const Eigen::Index rows = x.rows();
    const double d = static_cast<double>(x.cols());
    Mat xhat(rows, x.cols());
    Vec inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mean = x.row(i).sum() / d;
        const double var = (x.row(i).array() - mean).square().sum() / d;
        inv_std(i) = 1.0 / std::sqrt(var + kLnEps);
        xhat.row(i) = (x.row(i).array() - mean) * inv_std(i);
    }
    Mat y = (xhat.array().rowwise() * g.transpose().array()).rowwise() + b.transpose().array();
    if (cache) {
        cache->xhat = std::move(xhat);
        cache->inv_std = std::move(inv_std);
    }
    return y;
}

Mat layer_norm_backward(const Mat& dy, const Vec& g, const LnCache& cache, Vec* dg, Vec* db) {
    const double d = static_cast<double>(dy.cols());
    if (dg) *dg += (dy.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
    if (db) *db += dy.colwise().sum().transpose();
    Mat dxhat = dy.array().rowwise() * g.transpose().array();
    Mat dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const double mean_d = dxhat.row(i).sum() / d;
        const double mean_dx = dxhat.row(i).dot(cache.xhat.row(i)) / d;
        dx.row(i) = cache.inv_std(i) * (dxhat.row(i).array() - mean_d - cache.xhat.row(i).array() * mean_dx);
    }
    return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

double gelu_grad(double x) {
    constexpr double inv_sqrt_2pi = 0.39894228040143267794;
    return 0.5 * (1.0 + std::erf(x / std::sqrt(2.0))) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
}

void check_tokens(const TransformerWeights& w, std::span<const Token> tokens) {
    if (tokens.empty()) throw InvalidInput("forward: empty token sequence");
    if (tokens.size() > w.config.max_seq)
        throw InvalidInput("forward: sequence length " + std::to_string(tokens.size()) + " exceeds max_seq " +
                           std::to_string(w.config.max_seq));
    for (Token t : tokens)
        if (t < 0 || static_cast<std::size_t>(t) >= w.config.vocab_size)
            throw InvalidToken("forward: token id " + std::to_string(t) + " outside vocabulary of size " +
                               std::to_string(w.config.vocab_size));
}

namespace {

void apply_hidden_patches(std::span<const Patch> patches, std::size_t boundary, Mat& h) {
    for (const Patch& p : patches) {
        if (p.layer != boundary) continue;
        if (p.kind == PatchKind::add_hidden)
            h.row(static_cast<Eigen::Index>(p.token)) += p.value.transpose();
        else if (p.kind == PatchKind::set_hidden)
            h.row(static_cast<Eigen::Index>(p.token)) = p.value.transpose();
    }
}

void apply_module_patches(std::span<const Patch> patches, std::size_t layer, PatchKind kind, Mat& out) {
    for (const Patch& p : patches)
        if (p.layer == layer && p.kind == kind) out.row(static_cast<Eigen::Index>(p.token)) = p.value.transpose();
}

void validate_patches(const TransformerWeights& w, std::size_t seq, std::span<const Patch> patches) {
    const std::size_t d = w.config.d_model;
    for (const Patch& p : patches) {
        const bool hidden = p.kind == PatchKind::add_hidden || p.kind == PatchKind::set_hidden;
        const std::size_t max_layer = hidden ? w.config.n_layers : w.config.n_layers - 1;
        if (p.layer > max_layer) throw InvalidInput("forward: patch layer out of range");
        if (p.token >= seq) throw InvalidInput("forward: patch token out of range");
        if (static_cast<std::size_t>(p.value.size()) != d) throw InvalidInput("forward: patch vector has wrong size");
    }
}

}  // namespace

ForwardTrace run_forward(const TransformerWeights& w, std::span<const Token> tokens, std::span<const Patch> patches,
                         ForwardCache* cache) {
    check_tokens(w, tokens);
    validate_patches(w, tokens.size(), patches);
    const ModelConfig& cfg = w.config;
    const auto seq = static_cast<Eigen::Index>(tokens.size());
    const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ForwardTrace tr;
    tr.hidden.reserve(cfg.n_layers + 1);
    Mat h(seq, static_cast<Eigen::Index>(cfg.d_model));
    for (Eigen::Index t = 0; t < seq; ++t) h.row(t) = w.tok_emb.row(tokens[static_cast<std::size_t>(t)]) + w.pos_emb.row(t);
    apply_hidden_patches(patches, 0, h);
    tr.hidden.push_back(h);
    if (cache) cache->blocks.assign(cfg.n_layers, BlockCache{});

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& lw = w.layers[l];
        BlockCache local;
        BlockCache& bc = cache ? cache->blocks[l] : local;

        bc.n1 = layer_norm(h, lw.ln1_g, lw.ln1_b, &bc.ln1);
        bc.q = bc.n1 * lw.wq.transpose();
        bc.k = bc.n1 * lw.wk.transpose();
        bc.v = bc.n1 * lw.wv.transpose();
        bc.ctx = Mat::Zero(seq, static_cast<Eigen::Index>(cfg.d_model));
        bc.probs.assign(cfg.n_heads, Mat());
        for (std::size_t head = 0; head < cfg.n_heads; ++head) {
            const Eigen::Index off = static_cast<Eigen::Index>(head) * dh;
            Mat scores = bc.q.middleCols(off, dh) * bc.k.middleCols(off, dh).transpose() * scale;
            Mat& p = bc.probs[head];
            p = Mat::Zero(seq, seq);
            for (Eigen::Index i = 0; i < seq; ++i) {
                const double mx = scores.row(i).head(i + 1).maxCoeff();
                double total = 0.0;
                for (Eigen::Index j = 0; j <= i; ++j) {
                    p(i, j) = std::exp(scores(i, j) - mx);
                    total += p(i, j);
                }
                p.row(i).head(i + 1) /= total;
            }
            bc.ctx.middleCols(off, dh) = p * bc.v.middleCols(off, dh);
        }
        Mat a = bc.ctx * lw.wo.transpose();
        apply_module_patches(patches, l, PatchKind::set_attn, a);

        bc.n2 = layer_norm(h, lw.ln2_g, lw.ln2_b, &bc.ln2);
        bc.pre = bc.n2 * lw.w_in.transpose();
        Mat act = bc.pre.unaryExpr([](double x) { return gelu(x); });
        Mat m = act * lw.w_out.transpose();
        apply_module_patches(patches, l, PatchKind::set_mlp, m);

        h = h + a + m;
        apply_hidden_patches(patches, l + 1, h);
        tr.attn_out.push_back(std::move(a));
        tr.mlp_out.push_back(std::move(m));
        tr.mlp_act.push_back(std::move(act));
        tr.hidden.push_back(h);
    }

    LnCache lnf_local;
    Mat nf = layer_norm(h, w.lnf_g, w.lnf_b, cache ? &cache->lnf : &lnf_local);
    tr.logits = nf * w.unembed.transpose();
    if (cache) cache->nf = std::move(nf);
    return tr;
}

}  // namespace detail

ForwardTrace forward(const TransformerWeights& w, std::span<const Token> tokens) {
    return detail::run_forward(w, tokens, {}, nullptr);
}

ForwardTrace forward_injected(const TransformerWeights& w, std::span<const Token> tokens, InjectionSite site,
                              const Vec& delta) {
    Patch p{PatchKind::add_hidden, site.layer, site.token, delta};
    return detail::run_forward(w, tokens, std::span<const Patch>(&p, 1), nullptr);
}

ForwardTrace forward_patched(const TransformerWeights& w, std::span<const Token> tokens,
                             std::span<const Patch> patches) {
    return detail::run_forward(w, tokens, patches, nullptr);
}

Vec log_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits) {
    const double mx = logits.maxCoeff();
    const double lse = mx + std::log((logits.array() - mx).exp().sum());
    return (logits.array() - lse).matrix().transpose();
}

double token_prob(const Mat& logits, std::size_t row, Token token) {
    Vec lp = log_softmax(logits.row(static_cast<Eigen::Index>(row)));
    return std::exp(lp(token));
}

TokenSeq greedy_answer(const TransformerWeights& w, std::span<const Token> prompt, std::size_t max_new) {
    if (prompt.size() + max_new > w.config.max_seq)
        throw InvalidInput("greedy_answer: prompt of length " + std::to_string(prompt.size()) +
                           " does not fit max_seq with " + std::to_string(max_new) + " new tokens");
    TokenSeq seq(prompt.begin(), prompt.end());
    TokenSeq out;
    for (std::size_t step = 0; step < max_new; ++step) {
        ForwardTrace tr = forward(w, seq);
        auto last = tr.logits.row(tr.logits.rows() - 1);
        Token best = 0;
        for (Eigen::Index j = 1; j < last.size(); ++j)
            if (last(j) > last(best)) best = static_cast<Token>(j);
        out.push_back(best);
        seq.push_back(best);
    }
    return out;
}

}  // namespace cae::model
