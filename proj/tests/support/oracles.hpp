#pragma once

// Reference implementations used only by tests. They share no code with the
// library and favour plain loops over speed.

#include <cstddef>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "cae/model.hpp"
#include "cae/numerics.hpp"
#include "cae/trace.hpp"

namespace oracle {

using cae::Mat;
using cae::Vec;

struct Svd {
    Mat u;  // rows x k
    Vec s;  // non-increasing
    Mat v;  // cols x k
};

// One-sided (Hestenes) Jacobi on the columns of a.
Svd jacobi_svd(const Mat& a);

// Inverse with partial pivoting.
Mat gauss_jordan_inverse(const Mat& a);

// Minimizes ||a x - b|| through Householder QR (a has full column rank).
Vec householder_lstsq(const Mat& a, const Vec& b);

// Symmetric eigendecomposition by cyclic Jacobi rotations; eigenvalues in
// descending order, eigenvectors as columns.
struct EigenDecomp {
    Vec values;
    Mat vectors;
};
EigenDecomp jacobi_eigen(const Mat& a);

double central_difference(const std::function<double(double)>& f, double x, double h);

// Per-scalar forward pass of the parallel-residual transformer.
struct NaiveTrace {
    std::vector<std::vector<std::vector<double>>> hidden;  // [boundary][t][i]
    std::vector<std::vector<std::vector<double>>> mlp_act;  // [layer][t][j]
    std::vector<std::vector<double>> logits;                // [t][v]
};
NaiveTrace naive_forward(const cae::model::TransformerWeights& w, std::span<const cae::model::Token> tokens);

// scale / n * sum_i k_i k_i^T with explicit index loops.
Mat double_loop_covariance(const std::vector<Vec>& keys, double scale);

// Tries every `span`-long block window; block l is scored by the effect at
// boundary l + 1 and last subject token, averaged over grids. Earliest wins ties.
std::pair<std::size_t, std::size_t> exhaustive_window(std::span<const cae::trace::TraceGrid> grids, std::size_t span);

// Key selection by brute force: every rank and every keep count is tried and
// the smallest satisfying one taken; keys are ordered by repeated arg-max of
// the projection norm, lowest index winning ties.
struct SelectOracle {
    std::vector<std::size_t> kept;
    std::size_t rank = 0;
};
SelectOracle exhaustive_select(const Mat& keys, double tau_rank, double tau_energy);

// Start index of the last occurrence of `needle` in `hay`, or -1.
long last_occurrence(std::span<const cae::model::Token> hay, std::span<const cae::model::Token> needle);

}  // namespace oracle
