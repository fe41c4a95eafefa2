#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace cae::numerics {

// Row-major dense matrix of 64-bit reals; every module stores its tensors in it.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct SvdResult {
    Mat u;   // rows x k, orthonormal columns
    Vec s;   // k singular values, non-increasing
    Mat vt;  // k x cols
};

// Thin SVD (k = min(rows, cols)). The largest-magnitude entry of every left
// singular vector is made positive (first such entry on ties) so results are
// reproducible across calls.
SvdResult svd(const Mat& a);

// Solves a * X = b for symmetric positive definite `a` with a Cholesky
// factorization and one round of iterative refinement. If the factorization
// breaks down, eps * I with eps = 1e-8 * trace(a) / rows is added and the
// factorization retried; a second breakdown raises SingularSystem.
Mat solve_spd(const Mat& a, const Mat& b);

struct PcaResult {
    std::vector<Vec> coords;  // one k-vector per input point
    Mat components;           // k x dim, principal directions as rows
    Vec explained;            // variance along each component
    double total_variance = 0.0;
};

PcaResult pca(const std::vector<Vec>& points, std::size_t k);

// Centers the points and projects them onto the top-k principal directions.
std::vector<Vec> pca_project(const std::vector<Vec>& points, std::size_t k);

bool all_finite(const Mat& a);
bool all_finite(const Vec& v);
double max_asymmetry(const Mat& a);

}  // namespace cae::numerics

namespace cae {
using numerics::Mat;
using numerics::Vec;
}  // namespace cae
