#pragma once

// l-infinity Lewis weight overestimates by averaged fixed-point iteration
// w <- sigma(diag(w)^{1/2} A), followed by a deterministic repair stage so
// that the returned vector always satisfies
//
//     w_i >= sigma(diag(w)^{1/2} A)_i   and   D <= ||w||_1 <= 2 D,
//
// where D is the dimension of the feasible direction space (d, or d - rank N
// for constrained matrices, in which case leverage is taken inside ker N).

#include <qsc/error.hpp>
#include <qsc/linalg.hpp>

#include <cmath>
#include <cstdint>

namespace qsc {

enum class LewisMode { Auto, Exact, Sketched };

/// Above this many rows Auto switches from exact to sketched leverage scores.
inline constexpr Index kExactLewisRowLimit = 5000;
inline constexpr Index kDefaultSketchRows = 64;

struct LewisOptions {
    LewisMode mode = LewisMode::Auto;
    Index sketch_rows = kDefaultSketchRows;
    std::uint64_t seed = 0;
    double margin = 1.15;
    int max_retries = 3;
};

struct LewisOverestimate {
    Vector w;
    double mass = 0.0;
    bool exact = true;       ///< exact leverage scores produced the returned vector
    int attempts = 0;        ///< sketched attempts consumed before success or fallback
    bool rescaled = false;   ///< the final scale repair stage was needed
    double worst_margin = 0; ///< min_i (w_i - sigma_i)
};

struct OverestimateCheck {
    bool ok = false;
    double worst_margin = 0.0;
    Index worst_row = 0;
};

inline constexpr double kOverestimateSlack = 1e-10;

inline OverestimateCheck verify_overestimate(const ProblemMatrix& mat, const Vector& w)
{
    require(w.size() == mat.rows(), ErrorKind::DimensionMismatch,
            "weight length must equal the number of rows");
    const Vector sigma = leverage_scores_exact(mat, w);
    OverestimateCheck out;
    out.worst_margin = (w - sigma).minCoeff(&out.worst_row);
    out.ok = out.worst_margin >= -kOverestimateSlack;
    return out;
}

inline OverestimateCheck verify_overestimate(const Matrix& A, const Vector& w)
{
    return verify_overestimate(ProblemMatrix(A), w);
}

/// Number of fixed-point rounds, ceil(10 ln n), at least one.
inline Index lewis_rounds(Index n)
{
    const double t = std::ceil(10.0 * std::log(static_cast<double>(n)));
    return std::max<Index>(1, static_cast<Index>(t));
}

namespace detail {

inline Vector lewis_average(const ProblemMatrix& mat, bool exact, Index sketch_rows,
                            std::uint64_t seed)
{
    const Index n = mat.rows();
    const double dim = static_cast<double>(mat.effective_dim());
    const Index rounds = lewis_rounds(n);
    Vector w = Vector::Constant(n, dim / static_cast<double>(n));
    Vector sum = w;
    for (Index k = 1; k < rounds; ++k) {
        w = exact ? leverage_scores_exact(mat, w)
                  : leverage_scores_sketched(mat, w, sketch_rows,
                                             seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(k));
        sum += w;
    }
    return sum / static_cast<double>(rounds);
}

inline void enforce_mass(Vector& w, double dim, double margin)
{
    const double n = static_cast<double>(w.size());
    const double mass = w.sum();
    if (mass < dim)
        w.array() += (dim - mass) / n;
    w *= margin;
    const double scaled = w.sum();
    if (scaled > 2.0 * dim)
        w *= 2.0 * dim / scaled;
}

} // namespace detail

/// Lewis weight overestimates for the rows of `mat`.
inline LewisOverestimate approx_lewis(const ProblemMatrix& mat, const LewisOptions& opts = {})
{
    require(mat.effective_dim() >= 1, ErrorKind::RankDeficient,
            "no feasible directions remain after the constraints");
    require(!mat.A().isZero(0.0), ErrorKind::RankDeficient, "design matrix has rank 0");
    require(opts.sketch_rows >= 1, ErrorKind::InvalidArgument, "sketch_rows must be at least 1");

    const double dim = static_cast<double>(mat.effective_dim());
    const bool start_exact = opts.mode == LewisMode::Exact
        || (opts.mode == LewisMode::Auto && mat.rows() <= kExactLewisRowLimit);

    LewisOverestimate out;
    if (!start_exact) {
        for (int attempt = 0; attempt <= opts.max_retries; ++attempt) {
            const std::uint64_t seed = opts.seed + 0xD1B54A32D192ED03ull * static_cast<std::uint64_t>(attempt);
            Vector w = detail::lewis_average(mat, false, opts.sketch_rows, seed);
            detail::enforce_mass(w, dim, opts.margin);
            out.attempts = attempt + 1;
            const OverestimateCheck chk = verify_overestimate(mat, w);
            if (chk.ok) {
                out.w = std::move(w);
                out.mass = out.w.sum();
                out.exact = false;
                out.worst_margin = chk.worst_margin;
                return out;
            }
        }
    }

    Vector w = detail::lewis_average(mat, true, opts.sketch_rows, opts.seed);
    detail::enforce_mass(w, dim, opts.margin);
    OverestimateCheck chk = verify_overestimate(mat, w);
    if (!chk.ok) {
        // Leverage scores are invariant under uniform scaling of w, so the
        // worst ratio sigma_i / w_i is exactly the factor that restores the
        // overestimate property.
        const Vector sigma = leverage_scores_exact(mat, w);
        const double ratio = (sigma.array() / w.array().max(kResistanceFloor)).maxCoeff();
        w *= ratio * (1.0 + 1e-9);
        out.rescaled = true;
        chk = verify_overestimate(mat, w);
        if (!chk.ok || w.sum() > 2.0 * dim * (1.0 + 1e-12))
            fail(ErrorKind::OverestimateFailure,
                 "exact fixed-point average cannot be repaired into an overestimate");
    }
    out.w = std::move(w);
    out.mass = out.w.sum();
    out.exact = true;
    out.worst_margin = chk.worst_margin;
    return out;
}

/// Convenience overload mirroring the (A, seed, sketch_rows, exact) call shape.
inline LewisOverestimate approx_lewis(const Matrix& A, std::uint64_t seed, Index sketch_rows,
                                      bool exact)
{
    LewisOptions opts;
    opts.mode = exact ? LewisMode::Exact : LewisMode::Sketched;
    opts.seed = seed;
    opts.sketch_rows = sketch_rows;
    return approx_lewis(ProblemMatrix(A), opts);
}

} // namespace qsc
