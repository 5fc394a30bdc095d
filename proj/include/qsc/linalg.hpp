#pragma once

// Weighted least-squares machinery shared by every solver in the library.
//
// All solves reduce to the quadratic program
//
//     minimize  <p, (A x)^2>   subject to  g^T x = -1  and  N x = 0,
//
// whose minimizer is x = -Q g / (g^T Q g) with Q = K - K N^T (N K N^T)^+ N K
// and K = (A^T diag(p) A)^+. Without constraints Q = K. The operator Q is
// materialized once per weight vector (d x d), which is cheap at the
// dimensions this library targets (d in the tens to low hundreds).

#include <qsc/error.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <utility>

namespace qsc {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Eigenvalues below this fraction of the largest are treated as zero.
inline constexpr double kRankCutoff = 1e-10;
/// Resistances are clamped from below before forming A^T diag(r) A.
inline constexpr double kResistanceFloor = 1e-300;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m)
{
    return m.allFinite();
}

/// Affine constraint N x = v.
struct Constraint {
    Matrix N;
    Vector v;
};

/// Design matrix with an optional affine constraint; immutable once built.
class ProblemMatrix {
public:
    explicit ProblemMatrix(Matrix A) : A_(std::move(A))
    {
        require(A_.rows() >= 1 && A_.cols() >= 1, ErrorKind::InvalidArgument,
                "design matrix must have at least one row and one column");
        require(all_finite(A_), ErrorKind::NonFinite, "design matrix has non-finite entries");
        effective_dim_ = A_.cols();
    }

    ProblemMatrix(Matrix A, Matrix N, Vector v) : ProblemMatrix(std::move(A))
    {
        if (N.rows() == 0)
            return;
        require(N.cols() == A_.cols(), ErrorKind::DimensionMismatch,
                "constraint matrix must have as many columns as the design matrix");
        require(N.rows() < A_.cols(), ErrorKind::InvalidArgument,
                "constraint matrix must have fewer rows than columns");
        require(v.size() == N.rows(), ErrorKind::DimensionMismatch,
                "constraint right-hand side length must equal the number of constraints");
        require(all_finite(N) && all_finite(v), ErrorKind::NonFinite,
                "constraint data has non-finite entries");
        Eigen::ColPivHouseholderQR<Matrix> qr(N);
        qr.setThreshold(kRankCutoff);
        effective_dim_ = A_.cols() - qr.rank();
        constraint_ = Constraint{std::move(N), std::move(v)};
    }

    const Matrix& A() const noexcept { return A_; }
    Index rows() const noexcept { return A_.rows(); }
    Index cols() const noexcept { return A_.cols(); }

    bool constrained() const noexcept { return constraint_.has_value(); }
    const Matrix& N() const { return constraint_.value().N; }
    const Vector& v() const { return constraint_.value().v; }

    /// Dimension of the feasible direction space ker N (d when unconstrained).
    Index effective_dim() const noexcept { return effective_dim_; }

    /// Same rows, constraint dropped.
    ProblemMatrix unconstrained() const { return ProblemMatrix(A_); }

private:
    Matrix A_;
    std::optional<Constraint> constraint_;
    Index effective_dim_ = 0;
};

/// Nonnegative per-row weights with a cached l1 mass.
class ResistanceVector {
public:
    ResistanceVector() = default;

    explicit ResistanceVector(Vector r) : r_(std::move(r))
    {
        require(all_finite(r_), ErrorKind::NonFinite, "resistances must be finite");
        require((r_.array() >= 0.0).all(), ErrorKind::InvalidArgument,
                "resistances must be nonnegative");
        l1_mass_ = r_.sum();
    }

    const Vector& values() const noexcept { return r_; }
    double l1_mass() const noexcept { return l1_mass_; }
    Index size() const noexcept { return r_.size(); }
    double operator[](Index i) const { return r_[i]; }

private:
    Vector r_;
    double l1_mass_ = 0.0;
};

/// Minimizer of <r,(Ax)^2> on the constraint hyperplane together with its energy.
struct EnergySolve {
    Vector x;
    double energy = 0.0;
};

namespace detail {

/// Lowest index attaining max |v_i|.
inline Index first_argmax_abs(const Vector& v)
{
    Index best = 0;
    double top = std::abs(v[0]);
    for (Index i = 1; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > top) {
            top = a;
            best = i;
        }
    }
    return best;
}

/// Moore-Penrose inverse of a symmetric PSD matrix with the library rank cutoff.
inline Matrix pinv_psd(const Matrix& S)
{
    Eigen::SelfAdjointEigenSolver<Matrix> eig(S);
    const Vector& lambda = eig.eigenvalues();
    const double top = lambda.size() ? std::max(lambda.maxCoeff(), 0.0) : 0.0;
    Vector inv = Vector::Zero(lambda.size());
    for (Index k = 0; k < lambda.size(); ++k)
        if (top > 0.0 && lambda[k] > kRankCutoff * top)
            inv[k] = 1.0 / lambda[k];
    return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

/// Some x in ker A with g^T x = -1, namely the scaled projection of -g onto ker A.
inline Vector kernel_hit(const Matrix& A, const Vector& g)
{
    Eigen::JacobiSVD<Matrix> svd(A, Eigen::ComputeFullV);
    const Vector& sv = svd.singularValues();
    const double top = sv.size() ? sv[0] : 0.0;
    Index rank = 0;
    while (rank < sv.size() && sv[rank] > kRankCutoff * top)
        ++rank;
    const Matrix null = svd.matrixV().rightCols(A.cols() - rank);
    const Vector comp = null * (null.transpose() * g);
    const double gc = g.dot(comp);
    require(gc > 0.0, ErrorKind::SingularSystem, "g has no component in ker A");
    return -comp / gc;
}

} // namespace detail

/// The operator Q for a fixed weight vector; see the file comment.
class WeightedGram {
public:
    WeightedGram(const ProblemMatrix& mat, const Vector& p)
    {
        require(p.size() == mat.rows(), ErrorKind::DimensionMismatch,
                "weight vector length must equal the number of rows");
        require(all_finite(p), ErrorKind::NonFinite, "weights must be finite");
        const Vector root = p.cwiseMax(kResistanceFloor).cwiseSqrt();
        const Matrix scaled = mat.A().array().colwise() * root.array();
        gram_.noalias() = scaled.transpose() * scaled;

        const Index d = mat.cols();
        Eigen::LLT<Matrix> llt(gram_);
        if (llt.info() == Eigen::Success && llt.rcond() >= kRankCutoff) {
            op_ = llt.solve(Matrix::Identity(d, d));
        } else {
            op_ = detail::pinv_psd(gram_);
            pseudo_ = true;
        }
        op_ = 0.5 * (op_ + op_.transpose());

        if (mat.constrained()) {
            const Matrix& N = mat.N();
            const Matrix KNt = op_ * N.transpose();
            const Matrix inner = detail::pinv_psd(N * KNt);
            op_ -= KNt * inner * KNt.transpose();
            op_ = 0.5 * (op_ + op_.transpose());
        }
    }

    /// Q g.
    Vector apply(const Vector& g) const { return op_ * g; }
    const Matrix& op() const noexcept { return op_; }
    const Matrix& gram() const noexcept { return gram_; }
    bool used_pseudo_inverse() const noexcept { return pseudo_; }

private:
    Matrix gram_;
    Matrix op_;
    bool pseudo_ = false;
};

/// General route: minimize <p,(Ax)^2> over g^T x = -1 (and N x = 0 when the
/// matrix carries a constraint). The error kind distinguishes a degenerate
/// unconstrained system from an unreachable constrained hyperplane.
inline EnergySolve minimize_energy(const ProblemMatrix& mat, const Vector& p, const Vector& g)
{
    require(g.size() == mat.cols(), ErrorKind::DimensionMismatch,
            "functional length must equal the number of columns");
    require(all_finite(g), ErrorKind::NonFinite, "functional has non-finite entries");
    const double gnorm = g.norm();
    require(gnorm > 0.0, ErrorKind::InvalidArgument, "functional must be nonzero");

    const WeightedGram Q(mat, p);
    const Vector z = Q.apply(g);
    const double gz = g.dot(z);
    const ErrorKind kind =
        mat.constrained() ? ErrorKind::InfeasibleConstraint : ErrorKind::SingularSystem;
    if (!(gz > 1e-13 * gnorm * gnorm * Q.op().norm()))
        fail(kind, "hyperplane g^T x = -1 is not reachable under the weighted system");
    if (Q.used_pseudo_inverse() && !mat.constrained()) {
        const double resid = (Q.gram() * z - g).norm();
        if (resid > 1e-6 * gnorm)
            fail(ErrorKind::SingularSystem, "functional lies outside the weighted row space");
    }

    EnergySolve out;
    out.x = -z / gz;
    const Vector Ax = mat.A() * out.x;
    out.energy = p.cwiseMax(0.0).dot(Ax.cwiseAbs2());
    return out;
}

/// argmin_{g^T x = -1} <r,(Ax)^2> for an unconstrained matrix.
inline EnergySolve solve_weighted_ls(const ProblemMatrix& mat, const ResistanceVector& r,
                                     const Vector& g)
{
    require(!mat.constrained(), ErrorKind::InvalidArgument,
            "solve_weighted_ls expects a matrix without constraints");
    require(r.size() == mat.rows(), ErrorKind::DimensionMismatch,
            "resistance length must equal the number of rows");
    require(r.values().maxCoeff() > 0.0, ErrorKind::InvalidArgument,
            "at least one resistance must be positive");
    return minimize_energy(mat, r.values(), g);
}

/// Electrical energy E(r) = min_{g^T x = -1} <r,(Ax)^2>.
inline double energy(const ProblemMatrix& mat, const ResistanceVector& r, const Vector& g)
{
    return solve_weighted_ls(mat, r, g).energy;
}

/// sigma_i = w_i a_i^T Q a_i, the leverage scores of diag(w)^{1/2} A restricted to ker N.
inline Vector leverage_scores_exact(const ProblemMatrix& mat, const Vector& w)
{
    require(all_finite(w), ErrorKind::NonFinite, "weights must be finite");
    require((w.array() >= 0.0).all(), ErrorKind::InvalidArgument, "weights must be nonnegative");
    const WeightedGram Q(mat, w);
    const Matrix AQ = mat.A() * Q.op();
    return w.cwiseProduct(AQ.cwiseProduct(mat.A()).rowwise().sum());
}

inline Vector leverage_scores_exact(const Matrix& A, const Vector& w)
{
    return leverage_scores_exact(ProblemMatrix(A), w);
}

/// Gaussian-sketch estimate (1/s)||S W^{1/2} A Q sqrt(w_i) a_i||^2 of each leverage score.
inline Vector leverage_scores_sketched(const ProblemMatrix& mat, const Vector& w,
                                       Index sketch_rows, std::uint64_t seed)
{
    require(sketch_rows >= 1, ErrorKind::InvalidArgument, "sketch_rows must be at least 1");
    require(all_finite(w), ErrorKind::NonFinite, "weights must be finite");
    require((w.array() >= 0.0).all(), ErrorKind::InvalidArgument, "weights must be nonnegative");

    const Index n = mat.rows();
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix S(sketch_rows, n);
    for (Index j = 0; j < n; ++j)
        for (Index i = 0; i < sketch_rows; ++i)
            S(i, j) = normal(rng);

    const WeightedGram Q(mat, w);
    const Matrix scaled = mat.A().array().colwise() * w.cwiseSqrt().array();
    const Matrix Y = (S * scaled) * Q.op();
    const Matrix Z = Y * scaled.transpose();
    return Z.colwise().squaredNorm().transpose() / static_cast<double>(sketch_rows);
}

inline Vector leverage_scores_sketched(const Matrix& A, const Vector& w, Index sketch_rows,
                                       std::uint64_t seed)
{
    return leverage_scores_sketched(ProblemMatrix(A), w, sketch_rows, seed);
}

/// Minimizer of <p,(Ax)^2> subject to N x = 0 and u^T A x = -1, without a
/// null-space basis for N.
inline Vector constrained_weighted_ls(const ProblemMatrix& mat, const ResistanceVector& p,
                                      const Vector& u)
{
    require(u.size() == mat.rows(), ErrorKind::DimensionMismatch,
            "u must have one entry per row");
    const Vector g = mat.A().transpose() * u;
    if (g.norm() == 0.0)
        fail(mat.constrained() ? ErrorKind::InfeasibleConstraint : ErrorKind::SingularSystem,
             "A^T u vanishes");
    return minimize_energy(mat, p.values(), g).x;
}

/// w^T A B (B^T A^T P A B)^+ B^T A^T u for any basis B of ker N.
inline double constrained_bilinear(const ProblemMatrix& mat, const ResistanceVector& p,
                                   const Vector& w_vec, const Vector& u_vec)
{
    require(w_vec.size() == mat.rows() && u_vec.size() == mat.rows(),
            ErrorKind::DimensionMismatch, "bilinear vectors must have one entry per row");
    const WeightedGram Q(mat, p.values());
    const Vector lhs = mat.A().transpose() * w_vec;
    const Vector rhs = mat.A().transpose() * u_vec;
    return lhs.dot(Q.apply(rhs));
}

} // namespace qsc
