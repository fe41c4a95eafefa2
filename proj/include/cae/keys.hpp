#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cae/corpus.hpp"
#include "cae/model.hpp"

namespace cae::keys {

using model::TokenSeq;
using model::TransformerWeights;

enum class TokenPolicy { last_subject_token, last_token };

std::string to_string(TokenPolicy p);  // "lst" / "lt"
TokenPolicy parse_token_policy(const std::string& s);

// Position whose key / hidden state an edit acts on.
std::size_t policy_token(const corpus::Prompt& p, TokenPolicy policy);

struct KeyMatrix {
    std::size_t layer = 0;
    TokenPolicy policy = TokenPolicy::last_subject_token;
    Mat keys;                            // d_mlp x u, one column per prompt
    std::vector<std::size_t> prompt_ids;  // aligned with columns

    std::size_t size() const { return static_cast<std::size_t>(keys.cols()); }
};

// Column j = gelu(W_in LN2(h)) of block `layer` at the policy token of prompt j.
KeyMatrix extract_keys(const TransformerWeights& w, std::span<const corpus::Prompt> prompts, std::size_t layer,
                       TokenPolicy policy);

struct Covariance {
    std::size_t layer = 0;
    Mat c;  // d_mlp x d_mlp
    std::size_t n_samples = 0;
    double scale = 1.0;
    bool few_samples = false;  // fewer than d_mlp / 4 samples
};

enum class RetainPositions {
    final_token,  // one key per retain prompt
    every_prefix  // one key per position, i.e. every prefix taken as a prompt
};

// c = scale * (1/n) * sum_i k_i k_i^T, uncentered.
Covariance estimate_covariance(const TransformerWeights& w, std::span<const TokenSeq> retain, std::size_t layer,
                               double scale, RetainPositions positions = RetainPositions::final_token);

struct Selection {
    std::vector<std::size_t> kept_indices;  // columns of the KeyMatrix, in kept order
    std::vector<double> scores;             // projection norms of kept keys (svd mode only)
    std::size_t rank_used = 0;
    double energy_captured = 1.0;
};

// r = smallest rank with sum_{i<=r} s_i^2 >= tau_rank * sum s_i^2; keys are
// scored by ||U_r^T k||, sorted descending (stable, so ties keep the lower
// column first), and the shortest prefix holding tau_energy of the total
// squared score is kept. tau_energy = 1 keeps every key.
Selection svd_select(const KeyMatrix& km, double tau_rank, double tau_energy);

// `count` distinct columns in seeded random order.
Selection random_select(const KeyMatrix& km, std::size_t count, std::uint64_t seed);

Selection select_all(const KeyMatrix& km);

void write_selection(std::ostream& out, const Selection& s, const KeyMatrix& km);

}  // namespace cae::keys
