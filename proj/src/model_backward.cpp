#include <cmath>
#include <string>

#include "cae/error.hpp"
#include "cae/model.hpp"
#include "model_internal.hpp"

namespace cae::model {

namespace detail {

Mat block_backward(const TransformerWeights& w, std::size_t layer, const ForwardTrace& trace,
                   const BlockCache& cache, const Mat& dh_out, LayerWeights* grads) {
    const ModelConfig& cfg = w.config;
    const LayerWeights& lw = w.layers[layer];
    const auto seq = dh_out.rows();
    const auto dh = static_cast<Eigen::Index>(cfg.head_dim());
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Mat dh_in = dh_out;

    // MLP path
    const Mat& act = trace.mlp_act[layer];
    Mat dact = dh_out * lw.w_out;
    Mat dpre = dact.array() * cache.pre.unaryExpr([](double x) { return gelu_grad(x); }).array();
    Mat dn2 = dpre * lw.w_in;
    if (grads) {
        grads->w_out.noalias() += dh_out.transpose() * act;
        grads->w_in.noalias() += dpre.transpose() * cache.n2;
    }
    dh_in += layer_norm_backward(dn2, lw.ln2_g, cache.ln2, grads ? &grads->ln2_g : nullptr,
                                 grads ? &grads->ln2_b : nullptr);

    // attention path
    Mat dctx = dh_out * lw.wo;
    if (grads) grads->wo.noalias() += dh_out.transpose() * cache.ctx;
    Mat dq = Mat::Zero(seq, static_cast<Eigen::Index>(cfg.d_model));
    Mat dk = Mat::Zero(seq, static_cast<Eigen::Index>(cfg.d_model));
    Mat dv = Mat::Zero(seq, static_cast<Eigen::Index>(cfg.d_model));
    for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const Eigen::Index off = static_cast<Eigen::Index>(head) * dh;
        const Mat& p = cache.probs[head];
        auto dctx_h = dctx.middleCols(off, dh);
        Mat dp = dctx_h * cache.v.middleCols(off, dh).transpose();
        dv.middleCols(off, dh) = p.transpose() * dctx_h;
        Mat ds(seq, seq);
        for (Eigen::Index i = 0; i < seq; ++i) {
            const double row_dot = dp.row(i).dot(p.row(i));
            ds.row(i) = p.row(i).array() * (dp.row(i).array() - row_dot);
        }
        dq.middleCols(off, dh) = ds * cache.k.middleCols(off, dh) * scale;
        dk.middleCols(off, dh) = ds.transpose() * cache.q.middleCols(off, dh) * scale;
    }
    Mat dn1 = dq * lw.wq + dk * lw.wk + dv * lw.wv;
    if (grads) {
        grads->wq.noalias() += dq.transpose() * cache.n1;
        grads->wk.noalias() += dk.transpose() * cache.n1;
        grads->wv.noalias() += dv.transpose() * cache.n1;
    }
    dh_in += layer_norm_backward(dn1, lw.ln1_g, cache.ln1, grads ? &grads->ln1_g : nullptr,
                                 grads ? &grads->ln1_b : nullptr);
    return dh_in;
}

}  // namespace detail

DeltaGrad grad_wrt_delta(const TransformerWeights& w, std::span<const Token> tokens, InjectionSite site,
                         const Vec& delta, const LossSpec& spec) {
    const ModelConfig& cfg = w.config;
    if (site.layer > cfg.n_layers || site.token >= tokens.size())
        throw InvalidInput("grad_wrt_delta: injection site out of range");
    if (static_cast<std::size_t>(delta.size()) != cfg.d_model)
        throw InvalidInput("grad_wrt_delta: delta has wrong dimension");
    if (spec.target < 0 || static_cast<std::size_t>(spec.target) >= cfg.vocab_size)
        throw InvalidToken("grad_wrt_delta: target token outside vocabulary");
    if (spec.lambda != 0.0 && spec.target_mean && static_cast<std::size_t>(spec.target_mean->size()) != cfg.d_model)
        throw InvalidInput("grad_wrt_delta: consistency mean has wrong dimension");

    detail::ForwardCache cache;
    Patch inject{PatchKind::add_hidden, site.layer, site.token, delta};
    ForwardTrace tr = detail::run_forward(w, tokens, std::span<const Patch>(&inject, 1), &cache);

    const Eigen::Index last = tr.logits.rows() - 1;
    Vec lp = log_softmax(tr.logits.row(last));
    DeltaGrad out;
    out.nll = -lp(spec.target);

    Mat dlogits = Mat::Zero(tr.logits.rows(), tr.logits.cols());
    dlogits.row(last) = spec.nll_weight * lp.array().exp().matrix().transpose();
    dlogits(last, spec.target) -= spec.nll_weight;

    Mat dh = detail::layer_norm_backward(dlogits * w.unembed, w.lnf_g, cache.lnf, nullptr, nullptr);
    for (std::size_t l = cfg.n_layers; l-- > site.layer;)
        dh = detail::block_backward(w, l, tr, cache.blocks[l], dh, nullptr);

    out.grad = dh.row(static_cast<Eigen::Index>(site.token)).transpose();
    if (spec.lambda != 0.0 && spec.target_mean) {
        Vec diff = tr.hidden[site.layer].row(static_cast<Eigen::Index>(site.token)).transpose() - *spec.target_mean;
        out.consistency = spec.lambda * diff.squaredNorm();
        out.grad += 2.0 * spec.lambda * diff;
    }
    out.loss = spec.nll_weight * out.nll + out.consistency;
    if (!std::isfinite(out.loss) || !out.grad.allFinite())
        throw NumericError("grad_wrt_delta: numeric overflow (non-finite loss or gradient)");
    return out;
}

double accumulate_sequence_grad(const TransformerWeights& w, std::span<const Token> tokens, double weight,
                                TransformerWeights& grads) {
    if (tokens.size() < 2) return 0.0;
    detail::ForwardCache cache;
    ForwardTrace tr = detail::run_forward(w, tokens, {}, &cache);

    const Eigen::Index seq = tr.logits.rows();
    Mat dlogits = Mat::Zero(seq, tr.logits.cols());
    double nll = 0.0;
    for (Eigen::Index t = 0; t + 1 < seq; ++t) {
        Vec lp = log_softmax(tr.logits.row(t));
        const Token next = tokens[static_cast<std::size_t>(t + 1)];
        nll -= lp(next);
        dlogits.row(t) = weight * lp.array().exp().matrix().transpose();
        dlogits(t, next) -= weight;
    }

    grads.unembed.noalias() += dlogits.transpose() * cache.nf;
    Mat dh = detail::layer_norm_backward(dlogits * w.unembed, w.lnf_g, cache.lnf, &grads.lnf_g, &grads.lnf_b);
    for (std::size_t l = w.config.n_layers; l-- > 0;)
        dh = detail::block_backward(w, l, tr, cache.blocks[l], dh, &grads.layers[l]);
    for (Eigen::Index t = 0; t < seq; ++t) {
        grads.tok_emb.row(tokens[static_cast<std::size_t>(t)]) += dh.row(t);
        grads.pos_emb.row(t) += dh.row(t);
    }
    return nll;
}

}  // namespace cae::model
