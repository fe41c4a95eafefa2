#include "cae/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "cae/error.hpp"

namespace cae::numerics {

bool all_finite(const Mat& a) { return a.allFinite(); }
bool all_finite(const Vec& v) { return v.allFinite(); }

double max_asymmetry(const Mat& a) {
    if (a.rows() != a.cols()) return std::numeric_limits<double>::infinity();
    return (a - a.transpose()).cwiseAbs().maxCoeff();
}

SvdResult svd(const Mat& a) {
    if (a.rows() < 1 || a.cols() < 1) throw InvalidInput("svd: empty matrix");
    if (!a.allFinite()) throw InvalidInput("svd: non-finite input");

    Eigen::MatrixXd col_major = a;
    Eigen::BDCSVD<Eigen::MatrixXd> dec(col_major, Eigen::ComputeThinU | Eigen::ComputeThinV);

    SvdResult out;
    out.u = dec.matrixU();
    out.s = dec.singularValues();
    out.vt = dec.matrixV().transpose();

    for (Eigen::Index j = 0; j < out.u.cols(); ++j) {
        Eigen::Index arg = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < out.u.rows(); ++i) {
            double m = std::abs(out.u(i, j));
            if (m > best) {
                best = m;
                arg = i;
            }
        }
        if (out.u(arg, j) < 0.0) {
            out.u.col(j) *= -1.0;
            out.vt.row(j) *= -1.0;
        }
    }
    return out;
}

namespace {

// Lower Cholesky factor; returns false on a non-positive pivot and reports the
// smallest pivot seen.
bool cholesky(const Mat& a, Mat& l, double& min_pivot) {
    const Eigen::Index n = a.rows();
    l.setZero(n, n);
    min_pivot = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j) {
        double d = a(j, j) - l.row(j).head(j).squaredNorm();
        min_pivot = std::min(min_pivot, d);
        if (!(d > 0.0)) return false;
        l(j, j) = std::sqrt(d);
        for (Eigen::Index i = j + 1; i < n; ++i) {
            double sum = l.row(j).head(j).dot(l.row(i).head(j));
            l(i, j) = (a(i, j) - sum) / l(j, j);
        }
    }
    return true;
}

Mat cholesky_solve(const Mat& l, const Mat& b) {
    Mat y = l.triangularView<Eigen::Lower>().solve(b);
    return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

}  // namespace

Mat solve_spd(const Mat& a, const Mat& b) {
    if (a.rows() != a.cols()) throw InvalidInput("solve_spd: matrix is not square");
    if (b.rows() != a.rows()) throw InvalidInput("solve_spd: right-hand side has wrong row count");
    if (!a.allFinite() || !b.allFinite()) throw InvalidInput("solve_spd: non-finite input");
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    if (max_asymmetry(a) > 1e-10 * scale) throw InvalidInput("solve_spd: matrix is not symmetric");

    Mat l;
    double min_pivot = 0.0;
    Mat system = a;
    if (!cholesky(system, l, min_pivot)) {
        const double eps = 1e-8 * a.trace() / static_cast<double>(a.rows());
        system.diagonal().array() += std::max(eps, 0.0);
        if (!(eps > 0.0) || !cholesky(system, l, min_pivot)) {
            throw SingularSystem("solve_spd: matrix is not positive definite after damping (smallest pivot " +
                                     std::to_string(min_pivot) + ")",
                                 min_pivot);
        }
    }

    Mat x = cholesky_solve(l, b);
    Mat r = b - system * x;
    x += cholesky_solve(l, r);
    return x;
}

PcaResult pca(const std::vector<Vec>& points, std::size_t k) {
    if (points.size() < 2) throw InvalidInput("pca: need at least two points");
    const Eigen::Index dim = points.front().size();
    if (k < 1 || static_cast<Eigen::Index>(k) > dim) throw InvalidInput("pca: k exceeds the point dimension");

    Mat centered(static_cast<Eigen::Index>(points.size()), dim);
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].size() != dim) throw InvalidInput("pca: points differ in dimension");
        centered.row(static_cast<Eigen::Index>(i)) = points[i].transpose();
    }
    Eigen::RowVectorXd mean = centered.colwise().mean();
    centered.rowwise() -= mean;

    const double n = static_cast<double>(points.size());
    PcaResult out;
    out.total_variance = centered.squaredNorm() / (n - 1.0);
    out.components = Mat::Zero(static_cast<Eigen::Index>(k), dim);
    out.explained = Vec::Zero(static_cast<Eigen::Index>(k));
    out.coords.assign(points.size(), Vec::Zero(static_cast<Eigen::Index>(k)));
    if (centered.squaredNorm() == 0.0) return out;

    SvdResult dec = svd(centered);
    const Eigen::Index avail = std::min<Eigen::Index>(static_cast<Eigen::Index>(k), dec.s.size());
    for (Eigen::Index c = 0; c < avail; ++c) {
        out.components.row(c) = dec.vt.row(c);
        out.explained(c) = dec.s(c) * dec.s(c) / (n - 1.0);
    }
    Mat projected = centered * out.components.transpose();
    for (std::size_t i = 0; i < points.size(); ++i) out.coords[i] = projected.row(static_cast<Eigen::Index>(i)).transpose();
    return out;
}

std::vector<Vec> pca_project(const std::vector<Vec>& points, std::size_t k) { return pca(points, k).coords; }

}  // namespace cae::numerics
