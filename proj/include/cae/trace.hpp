#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cae/corpus.hpp"
#include "cae/model.hpp"

namespace cae::trace {

using model::Token;
using model::TransformerWeights;

enum class SeveredKind { none, mlp, attention };

std::string to_string(SeveredKind k);

struct TraceConfig {
    double noise_scale = 3.0;  // multiple of the per-dimension token-embedding std
    std::size_t n_samples = 10;
    std::uint64_t seed = 0;
    std::size_t sever_window = 5;  // blocks frozen above the restored state
};

// effect(b, t): mean gold-probability recovery when the clean hidden state at
// boundary b (0 = embeddings, L = last block output) and token t is restored
// into a run whose subject embeddings were noised.
struct TraceGrid {
    Mat effect;  // (L+1) x seq
    double clean_prob = 0.0;
    double corrupted_prob = 0.0;
    double noise_scale = 0.0;
    std::size_t n_noise_samples = 0;
    bool low_contrast = false;  // corrupted_prob >= clean_prob
    SeveredKind severed_kind = SeveredKind::none;
    std::size_t last_subject_token = 0;
};
using SeverGrid = TraceGrid;

TraceGrid causal_trace(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, const TraceConfig& cfg);

// As causal_trace, but the chosen module's outputs at the restored token are
// frozen to their corrupted-run values in blocks b .. b + window - 1.
SeverGrid sever_trace(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, SeveredKind kind,
                      const TraceConfig& cfg);

// Mean gold probability over the noise draws of `cfg` with the clean states at
// `restore` (boundary, token) put back. An empty list gives the corrupted
// probability.
double restored_prob(const TransformerWeights& w, const corpus::Prompt& prompt, Token gold, const TraceConfig& cfg,
                     std::span<const model::InjectionSite> restore);

// Per-dimension std of the token embedding table.
Vec embedding_std(const TransformerWeights& w);

// Block window [first, last] of length `span` maximizing the mean effect at
// the last subject token. Block l is scored by grid row l + 1, the state it
// writes. Ties go to the lowest window.
std::pair<std::size_t, std::size_t> pick_edit_layers(std::span<const TraceGrid> grids, std::size_t span);

// CSV with header layer,token_index,token_text,effect,severed_kind.
void write_trace_csv(std::ostream& out, const TraceGrid& grid, std::span<const Token> tokens,
                     const corpus::Vocabulary& vocab, bool header = true);

}  // namespace cae::trace
