#pragma once

#include <span>
#include <vector>

#include "cae/model.hpp"

namespace cae::model::detail {

constexpr double kLnEps = 1e-5;

struct LnCache {
    Mat xhat;     // normalized input, seq x d
    Vec inv_std;  // per row
};

struct BlockCache {
    LnCache ln1, ln2;
    Mat n1, n2;              // normalized inputs to attention / MLP
    Mat q, k, v;             // seq x d_model
    std::vector<Mat> probs;  // per head, seq x seq (causal, row-stochastic)
    Mat ctx;                 // concatenated head outputs, seq x d_model
    Mat pre;                 // MLP pre-activation, seq x d_mlp
};

struct ForwardCache {
    std::vector<BlockCache> blocks;
    LnCache lnf;
    Mat nf;  // final normalized state, seq x d_model
};

Mat layer_norm(const Mat& x, const Vec& g, const Vec& b, LnCache* cache);
// Returns dx; accumulates dg/db when non-null.
Mat layer_norm_backward(const Mat& dy, const Vec& g, const LnCache& cache, Vec* dg, Vec* db);

double gelu(double x);
double gelu_grad(double x);

// Full forward with optional caches; `patches` as in forward_patched.
ForwardTrace run_forward(const TransformerWeights& w, std::span<const Token> tokens, std::span<const Patch> patches,
                         ForwardCache* cache);

// Backprop through block `layer` given the gradient at its output boundary.
// Returns the gradient at its input boundary; accumulates parameter grads
// into `grads` when non-null.
Mat block_backward(const TransformerWeights& w, std::size_t layer, const ForwardTrace& trace,
                   const BlockCache& cache, const Mat& dh_out, LayerWeights* grads);

void check_tokens(const TransformerWeights& w, std::span<const Token> tokens);

}  // namespace cae::model::detail
