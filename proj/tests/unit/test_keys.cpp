#include <gtest/gtest.h>

#include <random>
#include <set>
#include <sstream>

#include "cae/error.hpp"
#include "cae/keys.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cae;
using namespace cae::keys;

namespace {

std::vector<corpus::Prompt> toy_prompts() {
    std::vector<corpus::Prompt> ps;
    for (int i = 0; i < 5; ++i) {
        corpus::Prompt p;
        p.tokens = {0, static_cast<model::Token>(3 + i), static_cast<model::Token>(4 + i), 2, 1};
        p.tokens.resize(4 + i % 3, 9);
        p.subject_span = {1, 3};
        ps.push_back(p);
    }
    return ps;
}

KeyMatrix km_of(const Mat& m) {
    KeyMatrix km;
    km.keys = m;
    for (Eigen::Index j = 0; j < m.cols(); ++j) km.prompt_ids.push_back(static_cast<std::size_t>(j));
    return km;
}

}  // namespace

TEST(TokenPolicy, ParseAndPositions) {
    EXPECT_EQ(parse_token_policy("lst"), TokenPolicy::last_subject_token);
    EXPECT_EQ(parse_token_policy("lt"), TokenPolicy::last_token);
    EXPECT_THROW(parse_token_policy("first"), ConfigError);
    const auto p = toy_prompts()[0];
    EXPECT_EQ(policy_token(p, TokenPolicy::last_subject_token), 2u);
    EXPECT_EQ(policy_token(p, TokenPolicy::last_token), p.tokens.size() - 1);
}

TEST(ExtractKeys, MatchesNaiveActivations) {
    const auto w = fixture::random_model(2, 3);
    const auto ps = toy_prompts();
    for (TokenPolicy pol : {TokenPolicy::last_subject_token, TokenPolicy::last_token}) {
        const auto km = extract_keys(w, ps, 1, pol);
        ASSERT_EQ(km.keys.rows(), static_cast<Eigen::Index>(w.config.d_mlp));
        ASSERT_EQ(km.size(), ps.size());
        for (std::size_t j = 0; j < ps.size(); ++j) {
            const auto ref = oracle::naive_forward(w, ps[j].tokens);
            const std::size_t t = policy_token(ps[j], pol);
            for (std::size_t i = 0; i < w.config.d_mlp; ++i) EXPECT_NEAR(km.keys(i, j), ref.mlp_act[1][t][i], 1e-10);
        }
    }
    EXPECT_THROW(extract_keys(w, {}, 1, TokenPolicy::last_token), InvalidInput);
    EXPECT_THROW(extract_keys(w, ps, 3, TokenPolicy::last_token), InvalidInput);
}

TEST(Covariance, MatchesDoubleLoop) {
    const auto w = fixture::random_model(3, 2);
    std::vector<model::TokenSeq> retain = {{0, 1, 2, 3}, {0, 4, 5}, {0, 6, 7, 8, 9}};
    std::vector<Vec> last, every;
    for (const auto& s : retain) {
        const auto ref = oracle::naive_forward(w, s);
        for (std::size_t t = 0; t < s.size(); ++t) {
            Vec k = Eigen::Map<const Vec>(ref.mlp_act[1][t].data(), w.config.d_mlp);
            every.push_back(k);
            if (t + 1 == s.size()) last.push_back(k);
        }
    }
    const auto c1 = estimate_covariance(w, retain, 1, 7.0, RetainPositions::final_token);
    EXPECT_EQ(c1.n_samples, 3u);
    EXPECT_LT((c1.c - oracle::double_loop_covariance(last, 7.0)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_TRUE(c1.few_samples);
    const auto c2 = estimate_covariance(w, retain, 1, 2.0, RetainPositions::every_prefix);
    EXPECT_EQ(c2.n_samples, 12u);
    EXPECT_LT((c2.c - oracle::double_loop_covariance(every, 2.0)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(numerics::max_asymmetry(c2.c), 0.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c2.c);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(Covariance, RejectsBadInput) {
    const auto w = fixture::random_model(3, 2);
    std::vector<model::TokenSeq> retain = {{0, 1}};
    EXPECT_THROW(estimate_covariance(w, {}, 0, 1.0), InvalidInput);
    EXPECT_THROW(estimate_covariance(w, retain, 2, 1.0), InvalidInput);
    EXPECT_THROW(estimate_covariance(w, retain, 0, 0.0), ConfigError);
}

TEST(SvdSelect, MatchesExhaustiveOracle) {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> tau(0.5, 0.99);
    std::uniform_int_distribution<std::size_t> count(2, 40);
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t u = count(rng);
        const std::size_t d = trial % 2 ? 16 : 48;
        // low-rank structure plus noise, with a few duplicated columns to force ties
        Mat k = fixture::random_mat(d, 3, rng) * fixture::random_mat(3, u, rng) + 0.1 * fixture::random_mat(d, u, rng);
        for (std::size_t j = 1; j < u; j += 5) k.col(j) = k.col(j - 1);
        const double tr = tau(rng), te = tau(rng);
        const auto sel = svd_select(km_of(k), tr, te);
        const auto ref = oracle::exhaustive_select(k, tr, te);
        EXPECT_EQ(sel.rank_used, ref.rank) << trial;
        EXPECT_EQ(sel.kept_indices, ref.kept) << trial;
        EXPECT_EQ(sel.scores.size(), sel.kept_indices.size());
        for (std::size_t i = 1; i < sel.scores.size(); ++i) EXPECT_GE(sel.scores[i - 1], sel.scores[i]);
    }
}

TEST(SvdSelect, TiesKeepLowerIndexFirst) {
    Mat k = Mat::Zero(4, 6);
    for (int j = 0; j < 6; ++j) k(1, j) = 1.0 + (j == 4);  // five identical keys and a larger one
    const auto sel = svd_select(km_of(k), 1.0, 0.6);
    EXPECT_EQ(sel.kept_indices, (std::vector<std::size_t>{4, 0, 1}));
    const auto ref = oracle::exhaustive_select(k, 1.0, 0.6);
    EXPECT_EQ(sel.kept_indices, ref.kept);
}

TEST(SvdSelect, FullEnergyKeepsEverything) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        const Mat k = fixture::random_mat(20, 5 + trial, rng);
        const auto sel = svd_select(km_of(k), 0.9, 1.0);
        EXPECT_EQ(sel.kept_indices.size(), static_cast<std::size_t>(k.cols()));
        EXPECT_EQ(std::set<std::size_t>(sel.kept_indices.begin(), sel.kept_indices.end()).size(),
                  static_cast<std::size_t>(k.cols()));
        EXPECT_DOUBLE_EQ(sel.energy_captured, 1.0);
    }
}

TEST(SvdSelect, KeptEnergyMeetsThresholdMinimally) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat k = fixture::random_mat(12, 15, rng);
        const double te = 0.3 + 0.03 * trial;
        const auto sel = svd_select(km_of(k), 0.8, te);
        EXPECT_GE(sel.energy_captured, te - 1e-12);
        double total = 0.0, drop_last = 0.0;
        const auto all = svd_select(km_of(k), 0.8, 1.0);
        for (double s : all.scores) total += s * s;
        for (std::size_t i = 0; i + 1 < sel.scores.size(); ++i) drop_last += sel.scores[i] * sel.scores[i];
        EXPECT_LT(drop_last, te * total);
    }
}

TEST(SvdSelect, RejectsBadThresholds) {
    const auto km = km_of(Mat::Identity(3, 3));
    EXPECT_THROW(svd_select(km, 0.0, 0.5), ConfigError);
    EXPECT_THROW(svd_select(km, 0.5, 1.5), ConfigError);
    EXPECT_THROW(svd_select(km_of(Mat(3, 0)), 0.5, 0.5), InvalidInput);
}

TEST(RandomSelect, SeededDistinctSubset) {
    const auto km = km_of(Mat::Identity(10, 10));
    const auto a = random_select(km, 6, 42);
    EXPECT_EQ(a.kept_indices, random_select(km, 6, 42).kept_indices);
    EXPECT_NE(a.kept_indices, random_select(km, 6, 43).kept_indices);
    EXPECT_EQ(std::set<std::size_t>(a.kept_indices.begin(), a.kept_indices.end()).size(), 6u);
    for (auto i : a.kept_indices) EXPECT_LT(i, 10u);
    EXPECT_THROW(random_select(km, 0, 1), InvalidInput);
    EXPECT_THROW(random_select(km, 11, 1), InvalidInput);
    EXPECT_EQ(select_all(km).kept_indices.size(), 10u);
}

TEST(Selection, WritesReadableSummary) {
    const auto km = km_of(Mat::Identity(3, 3));
    std::ostringstream os;
    write_selection(os, svd_select(km, 1.0, 1.0), km);
    EXPECT_NE(os.str().find("total_keys 3"), std::string::npos);
    EXPECT_NE(os.str().find("kept 3"), std::string::npos);
}
