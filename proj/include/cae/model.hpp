#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cae/numerics.hpp"

namespace cae::model {

using Token = std::int32_t;
using TokenSeq = std::vector<Token>;

struct ModelConfig {
    std::size_t n_layers = 12;
    std::size_t d_model = 64;
    std::size_t d_mlp = 256;
    std::size_t n_heads = 4;
    std::size_t vocab_size = 256;
    std::size_t max_seq = 32;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return d_model / n_heads; }
    // Throws ConfigError naming the offending field.
    void validate() const;
};

struct LayerWeights {
    Mat wq, wk, wv, wo;  // d_model x d_model
    Vec ln1_g, ln1_b;    // pre-attention norm
    Vec ln2_g, ln2_b;    // pre-MLP norm
    Mat w_in;            // d_mlp x d_model
    Mat w_out;           // d_model x d_mlp
};

// Parallel-residual block: h_out = h + Attn(LN1(h)) + W_out gelu(W_in LN2(h)).
struct TransformerWeights {
    ModelConfig config;
    Mat tok_emb;  // vocab x d_model
    Mat pos_emb;  // max_seq x d_model
    std::vector<LayerWeights> layers;
    Vec lnf_g, lnf_b;
    Mat unembed;  // vocab x d_model

    // Visits every parameter tensor in checkpoint declaration order.
    template <typename F>
    void for_each_param(F&& f) {
        f(tok_emb);
        f(pos_emb);
        for (auto& l : layers) {
            f(l.wq);
            f(l.wk);
            f(l.wv);
            f(l.wo);
            f(l.ln1_g);
            f(l.ln1_b);
            f(l.ln2_g);
            f(l.ln2_b);
            f(l.w_in);
            f(l.w_out);
        }
        f(lnf_g);
        f(lnf_b);
        f(unembed);
    }

    template <typename F>
    void for_each_param(F&& f) const {
        const_cast<TransformerWeights*>(this)->for_each_param([&](const auto& t) { f(t); });
    }

    bool operator==(const TransformerWeights& other) const;
};

// Same shapes as `cfg`, every entry zero.
TransformerWeights zeros_like(const ModelConfig& cfg);

// Flat views over every parameter tensor, in declaration order.
std::vector<Eigen::Map<Eigen::VectorXd>> flat_views(TransformerWeights& w);

TransformerWeights init_model(const ModelConfig& config);

struct ForwardTrace {
    Mat logits;                 // seq x vocab
    std::vector<Mat> hidden;    // L+1 boundaries, each seq x d_model; hidden[0] = embeddings
    std::vector<Mat> attn_out;  // L, seq x d_model
    std::vector<Mat> mlp_out;   // L, seq x d_model
    std::vector<Mat> mlp_act;   // L, seq x d_mlp (the MLP keys)
};

// A hidden-state boundary in [0, L] and a token position.
struct InjectionSite {
    std::size_t layer = 0;
    std::size_t token = 0;
};

enum class PatchKind {
    add_hidden,  // hidden[layer][token] += value
    set_hidden,  // hidden[layer][token] = value
    set_attn,    // attn_out of block `layer` at token := value
    set_mlp,     // mlp_out of block `layer` at token := value
};

struct Patch {
    PatchKind kind;
    std::size_t layer;
    std::size_t token;
    Vec value;
};

ForwardTrace forward(const TransformerWeights& w, std::span<const Token> tokens);
ForwardTrace forward_injected(const TransformerWeights& w, std::span<const Token> tokens, InjectionSite site,
                              const Vec& delta);
// Patches are applied in the given order as each state is produced.
ForwardTrace forward_patched(const TransformerWeights& w, std::span<const Token> tokens,
                             std::span<const Patch> patches);

// Null-answer NLL at the final position, optionally plus
// lambda * ||(h + delta) - target_mean||^2 on the injected state.
struct LossSpec {
    Token target = 0;
    double nll_weight = 1.0;
    double lambda = 0.0;
    std::optional<Vec> target_mean;
};

struct DeltaGrad {
    double loss = 0.0;
    double nll = 0.0;
    double consistency = 0.0;
    Vec grad;
};

DeltaGrad grad_wrt_delta(const TransformerWeights& w, std::span<const Token> tokens, InjectionSite site,
                         const Vec& delta, const LossSpec& spec);

// Log-softmax probability helpers over one logit row.
Vec log_softmax(const Eigen::Ref<const Eigen::RowVectorXd>& logits);
double token_prob(const Mat& logits, std::size_t row, Token token);

TokenSeq greedy_answer(const TransformerWeights& w, std::span<const Token> prompt, std::size_t max_new);

// Full-parameter gradients of the summed next-token cross-entropy of one
// sequence, scaled by `weight` and added into `grads`. Returns the summed NLL.
double accumulate_sequence_grad(const TransformerWeights& w, std::span<const Token> tokens, double weight,
                                TransformerWeights& grads);

struct Probe {
    TokenSeq prompt;
    Token gold = 0;
};

struct TrainConfig {
    std::size_t max_steps = 6000;
    std::size_t batch_size = 16;
    double lr = 3e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
    double grad_clip = 1.0;
    std::size_t warmup_steps = 100;
    std::size_t eval_every = 100;
    double target_accuracy = 1.0;       // fraction of probes answered correctly
    std::size_t consolidate_steps = 0;  // extra steps once the target is first met
    std::uint64_t seed = 0;
};

struct TrainReport {
    std::size_t steps = 0;
    double final_loss = 0.0;
    double probe_accuracy = 0.0;  // fraction in [0, 1]
    bool reached_target = false;
    std::vector<double> loss_curve;  // mean loss per eval window
};

struct TrainResult {
    TransformerWeights weights;
    TrainReport report;
};

// Seeded mini-batch Adam on next-token cross-entropy. Stops consolidate_steps
// after the probe accuracy target is first met, or after max_steps.
TrainResult train(TransformerWeights weights, const std::vector<TokenSeq>& corpus, const TrainConfig& cfg,
                  std::span<const Probe> probes = {});

double probe_fraction_correct(const TransformerWeights& w, std::span<const Probe> probes);

// Checkpoint: "CAE1", u32 header (version, L, d_model, d_mlp, n_heads, vocab,
// max_seq), then every tensor row-major as little-endian f64.
void save_checkpoint(const TransformerWeights& w, const std::filesystem::path& path);
TransformerWeights load_checkpoint(const std::filesystem::path& path);
std::string checkpoint_bytes(const TransformerWeights& w);
TransformerWeights checkpoint_from_bytes(const std::string& bytes);

}  // namespace cae::model
