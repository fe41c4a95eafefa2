#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cae/error.hpp"
#include "cae/trace.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cae;
using namespace cae::trace;

namespace {

corpus::Prompt toy_prompt() {
    corpus::Prompt p;
    p.tokens = {0, 5, 6, 7, 8, 9};
    p.subject_span = {1, 3};
    return p;
}

TraceConfig quick() {
    TraceConfig c;
    c.n_samples = 3;
    c.seed = 5;
    c.noise_scale = 3.0;
    c.sever_window = 2;
    return c;
}

TraceGrid random_grid(std::size_t L, std::size_t seq, std::size_t lst, std::mt19937_64& rng) {
    TraceGrid g;
    g.effect = fixture::random_mat(L + 1, seq, rng);
    g.last_subject_token = lst;
    return g;
}

}  // namespace

TEST(PickEditLayers, MatchesExhaustiveScan) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t L = 3 + trial % 10;
        const std::size_t span = 1 + trial % L;
        std::vector<TraceGrid> grids;
        for (int g = 0; g < 1 + trial % 4; ++g) grids.push_back(random_grid(L, 6, static_cast<std::size_t>(g % 6), rng));
        EXPECT_EQ(pick_edit_layers(grids, span), oracle::exhaustive_window(grids, span)) << trial;
    }
}

TEST(PickEditLayers, TiesGoToLowestWindow) {
    TraceGrid g;
    g.effect = Mat::Ones(7, 4);
    g.last_subject_token = 2;
    const TraceGrid gs[] = {g};
    EXPECT_EQ(pick_edit_layers(gs, 3), (std::pair<std::size_t, std::size_t>{0, 2}));
    // block l is scored by row l + 1: a peak at row 4 selects blocks ending at 3
    g.effect(4, 2) = 10.0;
    const TraceGrid peak[] = {g};
    EXPECT_EQ(pick_edit_layers(peak, 1), (std::pair<std::size_t, std::size_t>{3, 3}));
    EXPECT_EQ(pick_edit_layers(peak, 2), (std::pair<std::size_t, std::size_t>{2, 3}));
}

TEST(PickEditLayers, RejectsBadInput) {
    TraceGrid g;
    g.effect = Mat::Zero(5, 3);
    g.last_subject_token = 1;
    const TraceGrid gs[] = {g};
    EXPECT_THROW(pick_edit_layers({}, 1), InvalidInput);
    EXPECT_THROW(pick_edit_layers(gs, 0), InvalidInput);
    EXPECT_THROW(pick_edit_layers(gs, 5), InvalidInput);
    g.last_subject_token = 3;
    const TraceGrid bad[] = {g};
    EXPECT_THROW(pick_edit_layers(bad, 1), InvalidInput);
}

TEST(CausalTrace, ShapeAndBoundaryIdentities) {
    const auto w = fixture::random_model(3, 3);
    const auto p = toy_prompt();
    const auto g = causal_trace(w, p, 4, quick());
    ASSERT_EQ(g.effect.rows(), 4);
    ASSERT_EQ(g.effect.cols(), 6);
    EXPECT_EQ(g.last_subject_token, 2u);
    // positions before the subject are never corrupted
    EXPECT_EQ(g.effect.col(0).norm(), 0.0);
    // restoring the final state at the last position recovers the clean run
    EXPECT_NEAR(g.effect(3, 5), g.clean_prob - g.corrupted_prob, 1e-12);
    // restoring every subject embedding recovers it too
    const model::InjectionSite all[] = {{0, 1}, {0, 2}};
    EXPECT_NEAR(restored_prob(w, p, 4, quick(), all), g.clean_prob, 1e-12);
    const double corrupt = restored_prob(w, p, 4, quick(), {});
    EXPECT_NEAR(corrupt, g.corrupted_prob, 1e-15);
    EXPECT_EQ(g.low_contrast, g.corrupted_prob >= g.clean_prob);
}

TEST(CausalTrace, DeterministicAndZeroNoiseIsNeutral) {
    const auto w = fixture::random_model(4, 2);
    const auto p = toy_prompt();
    EXPECT_EQ(causal_trace(w, p, 4, quick()).effect, causal_trace(w, p, 4, quick()).effect);
    auto c = quick();
    c.noise_scale = 0.0;
    const auto g = causal_trace(w, p, 4, c);
    EXPECT_LT(g.effect.cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(g.clean_prob, g.corrupted_prob, 1e-14);
}

TEST(SeverTrace, FreezingAtFinalBoundaryIsNoOp) {
    const auto w = fixture::random_model(5, 3);
    const auto p = toy_prompt();
    const auto plain = causal_trace(w, p, 4, quick());
    for (SeveredKind k : {SeveredKind::mlp, SeveredKind::attention}) {
        const auto s = sever_trace(w, p, 4, k, quick());
        EXPECT_EQ(s.severed_kind, k);
        // no block lies above the last boundary, so nothing is frozen there
        EXPECT_NEAR(s.effect(3, 5), plain.effect(3, 5), 1e-12);
        EXPECT_NEAR(s.corrupted_prob, plain.corrupted_prob, 1e-15);
    }
    EXPECT_THROW(sever_trace(w, p, 4, SeveredKind::none, quick()), InvalidInput);
}

TEST(CausalTrace, RejectsBadInput) {
    const auto w = fixture::random_model(6, 2);
    auto p = toy_prompt();
    auto c = quick();
    c.n_samples = 0;
    EXPECT_THROW(causal_trace(w, p, 4, c), ConfigError);
    EXPECT_THROW(causal_trace(w, p, 999, quick()), InvalidToken);
    p.subject_span = {3, 3};
    EXPECT_THROW(causal_trace(w, p, 4, quick()), SpanNotFound);
}

TEST(EmbeddingStd, MatchesTwoPassComputation) {
    const auto w = fixture::random_model(7, 2);
    const Vec sd = embedding_std(w);
    for (Eigen::Index i = 0; i < sd.size(); ++i) {
        double mean = 0.0, var = 0.0;
        for (Eigen::Index r = 0; r < w.tok_emb.rows(); ++r) mean += w.tok_emb(r, i);
        mean /= w.tok_emb.rows();
        for (Eigen::Index r = 0; r < w.tok_emb.rows(); ++r) var += (w.tok_emb(r, i) - mean) * (w.tok_emb(r, i) - mean);
        EXPECT_NEAR(sd(i), std::sqrt(var / w.tok_emb.rows()), 1e-14);
    }
}

TEST(TraceCsv, OneRowPerCell) {
    corpus::Vocabulary v;
    for (int i = 0; i < 24; ++i) v.add(i == 7 ? "a,b" : "w" + std::to_string(i));
    const auto w = fixture::random_model(8, 2);
    const auto p = toy_prompt();
    const auto g = causal_trace(w, p, 4, quick());
    std::ostringstream os;
    write_trace_csv(os, g, p.tokens, v);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "layer,token_index,token_text,effect,severed_kind");
    std::size_t rows = 0;
    bool quoted = false;
    while (std::getline(is, line)) {
        ++rows;
        quoted = quoted || line.find("\"a,b\"") != std::string::npos;
        EXPECT_EQ(line.substr(line.rfind(',') + 1), "none");
    }
    EXPECT_EQ(rows, 3u * 6u);
    EXPECT_TRUE(quoted);
    EXPECT_THROW(write_trace_csv(os, g, std::span(p.tokens).first(2), v), InvalidInput);
}
