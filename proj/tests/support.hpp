#pragma once

// Independent reference computations for the tests: brute-force grids, dense
// KKT solves, explicit null-space bases, and a plain Newton method on a
// reduced coordinate system.

#include <qsc/linalg.hpp>
#include <qsc/loss.hpp>
#include <qsc/residual.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

namespace testing_support {

using qsc::Index;
using qsc::Matrix;
using qsc::Vector;

inline Matrix uniform_matrix(Index rows, Index cols, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix M(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
            M(i, j) = u(rng);
    return M;
}

inline Vector uniform_vector(Index n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    return uniform_matrix(n, 1, rng, lo, hi).col(0);
}

inline Matrix gaussian_matrix(Index rows, Index cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> g(0.0, 1.0);
    Matrix M(rows, cols);
    for (Index j = 0; j < cols; ++j)
        for (Index i = 0; i < rows; ++i)
            M(i, j) = g(rng);
    return M;
}

/// Orthonormal basis of ker N from the SVD of N.
inline Matrix null_space_basis(const Matrix& N)
{
    Eigen::JacobiSVD<Matrix> svd(N, Eigen::ComputeFullV);
    Index rank = 0;
    const auto& sv = svd.singularValues();
    while (rank < sv.size() && sv[rank] > 1e-12 * sv[0])
        ++rank;
    return svd.matrixV().rightCols(N.cols() - rank);
}

/// Orthonormal basis of the row space of A.
inline Matrix row_space_basis(const Matrix& A)
{
    Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullV);
    Index rank = 0;
    const auto& sv = svd.singularValues();
    while (rank < sv.size() && sv[rank] > 1e-12 * sv[0])
        ++rank;
    return svd.matrixV().leftCols(rank);
}

/// Minimizer of <r,(Ax)^2> subject to C x = c through the dense KKT system.
inline Vector kkt_solve(const Matrix& A, const Vector& r, const Matrix& C, const Vector& c)
{
    const Index d = A.cols();
    const Index m = C.rows();
    Matrix K = Matrix::Zero(d + m, d + m);
    K.topLeftCorner(d, d) = 2.0 * A.transpose() * r.asDiagonal() * A;
    K.topRightCorner(d, m) = C.transpose();
    K.bottomLeftCorner(m, d) = C;
    Vector rhs = Vector::Zero(d + m);
    rhs.tail(m) = c;
    return K.fullPivLu().solve(rhs).head(d);
}

/// Explicit projection diag W^{1/2} A (A^T W A)^+ A^T W^{1/2}.
inline Vector projection_diagonal(const Matrix& A, const Vector& w)
{
    const Matrix B = A.array().colwise() * w.cwiseSqrt().array();
    const Matrix P = B * B.completeOrthogonalDecomposition().pseudoInverse();
    return P.diagonal();
}

/// ||Ay - b||_inf minimized over an axis grid: a coarse pass over a box, then
/// two passes at ten times the resolution within two cells of the incumbent.
struct GridOptimum {
    double value = std::numeric_limits<double>::infinity();
    Vector y;
    double resolution = 0.0;
};

inline GridOptimum linf_grid_oracle(const Matrix& A, const Vector& b, const Vector& center,
                                    double half_width, double coarse, int refinements)
{
    const Index d = A.cols();
    GridOptimum best;
    best.y = center;
    Vector lo = center.array() - half_width;
    double step = coarse;
    Index per_axis = static_cast<Index>(std::llround(2.0 * half_width / coarse)) + 1;
    for (int pass = 0; pass <= refinements; ++pass) {
        std::vector<Index> idx(d, 0);
        Vector y(d);
        const Vector origin = lo;
        bool done = false;
        while (!done) {
            for (Index k = 0; k < d; ++k)
                y[k] = origin[k] + step * static_cast<double>(idx[k]);
            const double v = (A * y - b).cwiseAbs().maxCoeff();
            if (v < best.value) {
                best.value = v;
                best.y = y;
            }
            Index k = 0;
            while (k < d && ++idx[k] == per_axis)
                idx[k++] = 0;
            done = k == d;
        }
        best.resolution = step;
        lo = best.y.array() - 2.0 * step;
        step /= 10.0;
        per_axis = 41;
    }
    return best;
}

/// Exact max of a concave quadratic q(D) = c^T D - D^T H D over the polygon
/// {D in R^2 : |a_i^T D| <= bound}: interior critical point if feasible, else
/// the best point along each edge.
inline double polygon_quadratic_max(const Matrix& A, double bound, const Vector& c, const Matrix& H)
{
    auto q = [&](const Vector& D) { return c.dot(D) - D.dot(H * D); };
    auto feasible = [&](const Vector& D) {
        return (A * D).cwiseAbs().maxCoeff() <= bound * (1.0 + 1e-12);
    };
    double best = 0.0;
    const Vector crit = (2.0 * H).completeOrthogonalDecomposition().solve(c);
    if (feasible(crit))
        best = std::max(best, q(crit));
    for (Index i = 0; i < A.rows(); ++i) {
        for (double sign : {-1.0, 1.0}) {
            // line a_i^T D = sign * bound, parametrized D = p0 + s t
            const Vector ai = A.row(i).transpose();
            const Vector p0 = ai * (sign * bound / ai.squaredNorm());
            Vector t(2);
            t << -ai[1], ai[0];
            double smin = -std::numeric_limits<double>::infinity();
            double smax = std::numeric_limits<double>::infinity();
            bool empty = false;
            for (Index j = 0; j < A.rows() && !empty; ++j) {
                const Vector aj = A.row(j).transpose();
                const double slope = aj.dot(t);
                const double at0 = aj.dot(p0);
                if (std::abs(slope) < 1e-14) {
                    if (std::abs(at0) > bound * (1.0 + 1e-12))
                        empty = true;
                    continue;
                }
                double s1 = (bound - at0) / slope, s2 = (-bound - at0) / slope;
                if (s1 > s2)
                    std::swap(s1, s2);
                smin = std::max(smin, s1);
                smax = std::min(smax, s2);
            }
            if (empty || smin > smax)
                continue;
            // q along the line: alpha + beta s - gamma s^2
            const double beta = c.dot(t) - 2.0 * p0.dot(H * t);
            const double gamma = t.dot(H * t);
            double s_star = gamma > 0.0 ? beta / (2.0 * gamma) : (beta > 0.0 ? smax : smin);
            s_star = std::clamp(s_star, smin, smax);
            for (double s : {smin, smax, s_star})
                best = std::max(best, q(p0 + s * t));
        }
    }
    return best;
}

/// Damped Newton on h(x0 + B z) in reduced coordinates, run until the reduced
/// gradient norm drops below 1e-12 or no decrease is possible.
template <class Loss>
double reduced_newton(const Matrix& A, const Vector& b, const Loss& loss, const Vector& x0,
                      const Matrix& B, Vector* x_out = nullptr)
{
    const Matrix AB = A * B;
    const Vector base = A * x0 - b;
    auto value = [&](const Vector& z) {
        const Vector r = base + AB * z;
        double s = 0.0;
        for (Index i = 0; i < r.size(); ++i)
            s += loss.value(r[i]);
        return s;
    };
    Vector z = Vector::Zero(B.cols());
    double h = value(z);
    for (int it = 0; it < 500; ++it) {
        const Vector r = base + AB * z;
        Vector g1(r.size()), g2(r.size());
        for (Index i = 0; i < r.size(); ++i) {
            g1[i] = loss.first(r[i]);
            g2[i] = loss.second(r[i]);
        }
        const Vector grad = AB.transpose() * g1;
        if (grad.norm() < 1e-12)
            break;
        const Matrix H = AB.transpose() * g2.asDiagonal() * AB;
        const Vector step = H.ldlt().solve(grad);
        double alpha = 1.0;
        double trial = value(z - step);
        int k = 0;
        while (!(trial <= h - 1e-4 * alpha * grad.dot(step)) && k++ < 60) {
            alpha /= 2.0;
            trial = value(z - alpha * step);
        }
        if (!(trial < h))
            break;
        z -= alpha * step;
        h = trial;
    }
    if (x_out)
        *x_out = x0 + B * z;
    return h;
}

} // namespace testing_support
