#pragma once

#include <qsc/error.hpp>

#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <random>
#include <type_traits>
#include <utility>

namespace qsc {

/// Scalar convex loss with |f'''| <= C f''.
template <class F>
concept QscLoss = requires(const F& f, double t) {
    { f.value(t) } -> std::convertible_to<double>;
    { f.first(t) } -> std::convertible_to<double>;
    { f.second(t) } -> std::convertible_to<double>;
    { f.qsc_constant() } -> std::convertible_to<double>;
};

/// f(t) = |t|^p + mu t^2, C-QSC with C = p mu^{-1/(p-2)} for p >= 3.
class LpL2Loss {
public:
    LpL2Loss(double p, double mu) : p_(p), mu_(mu)
    {
        require(p >= 3.0 && std::isfinite(p), ErrorKind::InvalidArgument, "p must be at least 3");
        require(mu > 0.0 && std::isfinite(mu), ErrorKind::InvalidArgument, "mu must be positive");
        c_ = p_ * std::pow(mu_, -1.0 / (p_ - 2.0));
    }

    double value(double t) const { return std::pow(std::abs(t), p_) + mu_ * t * t; }
    double first(double t) const
    {
        const double a = std::abs(t);
        return p_ * std::copysign(std::pow(a, p_ - 1.0), t) + 2.0 * mu_ * t;
    }
    double second(double t) const
    {
        return p_ * (p_ - 1.0) * std::pow(std::abs(t), p_ - 2.0) + 2.0 * mu_;
    }
    double qsc_constant() const noexcept { return c_; }

    double p() const noexcept { return p_; }
    double mu() const noexcept { return mu_; }

private:
    double p_, mu_, c_;
};

/// f(t) = t^2. Any C > 0 is valid since f''' = 0.
class QuadraticLoss {
public:
    explicit QuadraticLoss(double c = 1.0) : c_(c)
    {
        require(c > 0.0, ErrorKind::InvalidArgument, "QSC constant must be positive");
    }
    double value(double t) const { return t * t; }
    double first(double t) const { return 2.0 * t; }
    double second(double) const { return 2.0; }
    double qsc_constant() const noexcept { return c_; }

private:
    double c_;
};

/// Type-erased loss for callers that assemble f at runtime.
class QscFunction {
public:
    using Fn = std::function<double(double)>;

    QscFunction(Fn value, Fn first, Fn second, double c)
        : value_(std::move(value)), first_(std::move(first)), second_(std::move(second)), c_(c)
    {
        require(c > 0.0, ErrorKind::InvalidArgument, "QSC constant must be positive");
    }

    template <QscLoss F>
        requires(!std::same_as<std::remove_cvref_t<F>, QscFunction>)
    explicit QscFunction(F f)
        : value_([f](double t) { return f.value(t); }),
          first_([f](double t) { return f.first(t); }),
          second_([f](double t) { return f.second(t); }),
          c_(f.qsc_constant())
    {
    }

    double value(double t) const { return value_(t); }
    double first(double t) const { return first_(t); }
    double second(double t) const { return second_(t); }
    double qsc_constant() const noexcept { return c_; }

private:
    Fn value_, first_, second_;
    double c_;
};

inline QscFunction lp_l2_loss(double p, double mu)
{
    return QscFunction(LpL2Loss(p, mu));
}

struct QscCheck {
    bool ok = true;
    double worst_ratio = 0.0; ///< max |f'''| / (C f'') over the samples
    double worst_t = 0.0;
    bool convex = true;
};

/// Spot-checks f'' >= 0 and |f'''| <= tol C f'' at uniform samples in [lo, hi],
/// with f''' from a central difference of f'' at step 1e-4 (1 + |t|).
template <QscLoss F>
QscCheck check_qsc(const F& f, double lo, double hi, int samples = 1000,
                   std::uint64_t seed = 7, double tol = 1.05)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    QscCheck out;
    const double C = f.qsc_constant();
    for (int k = 0; k < samples; ++k) {
        const double t = u(rng);
        const double h = 1e-4 * (1.0 + std::abs(t));
        const double f2 = f.second(t);
        const double f3 = (f.second(t + h) - f.second(t - h)) / (2.0 * h);
        if (f2 < 0.0)
            out.convex = false;
        const double ratio = f2 > 0.0 ? std::abs(f3) / (C * f2) : (f3 == 0.0 ? 0.0 : INFINITY);
        if (ratio > out.worst_ratio) {
            out.worst_ratio = ratio;
            out.worst_t = t;
        }
    }
    out.ok = out.convex && out.worst_ratio <= tol;
    return out;
}

} // namespace qsc
