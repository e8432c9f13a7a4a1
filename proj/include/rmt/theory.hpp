#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "rmt/covariance.hpp"
#include "rmt/numerics.hpp"

namespace rmt {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Holomorphic M-transform of a positive matrix ensemble, together with the
// moments that control the enclosing-circle radii of lagged estimators.
struct MTransform {
    std::function<cdouble(cdouble)> M;
    double m1 = 0.0;
    double m2 = kInf;
    double m_neg1 = 0.0;
    double m_neg2 = kInf;
};

namespace detail {

inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    if (n % 2 != 0) ++n;
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + h * i) * (i % 2 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// Damped Newton with finite-difference Jacobian for small dense systems.
inline Eigen::VectorXd newton_n(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                Eigen::VectorXd x, double tol = 1e-12,
                                int max_iters = 200, int max_halvings = 30) {
    const auto n = x.size();
    Eigen::VectorXd fx = f(x);
    for (int iter = 0; iter < max_iters; ++iter) {
        double norm = fx.norm();
        if (norm < tol) return x;
        Eigen::MatrixXd jac(fx.size(), n);
        for (Eigen::Index j = 0; j < n; ++j) {
            double h = 1e-7 * std::max(1.0, std::abs(x[j]));
            Eigen::VectorXd xp = x, xm = x;
            xp[j] += h; xm[j] -= h;
            jac.col(j) = (f(xp) - f(xm)) / (2.0 * h);
        }
        Eigen::VectorXd step = jac.fullPivLu().solve(-fx);
        if (!step.allFinite()) throw std::runtime_error("diverged");
        double lambda = 1.0;
        bool accepted = false;
        for (int h = 0; h < max_halvings; ++h) {
            Eigen::VectorXd xn = x + lambda * step;
            Eigen::VectorXd fn = f(xn);
            if (fn.allFinite() && fn.norm() < norm) {
                x = xn; fx = fn; accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!accepted) {
            if (norm < 1e-9) return x;
            throw std::runtime_error("diverged");
        }
    }
    if (fx.norm() < 1e-9) return x;
    throw std::runtime_error("diverged");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// M-transform builders
// ---------------------------------------------------------------------------

// Mixture of point masses at variances s2 with probabilities p.
inline MTransform mtransform_discrete(const std::vector<double>& p,
                                      const std::vector<double>& s2) {
    if (p.size() != s2.size() || p.empty())
        throw std::invalid_argument("mtransform_discrete: size mismatch");
    MTransform t;
    t.m1 = t.m2 = t.m_neg1 = t.m_neg2 = 0.0;
    for (size_t k = 0; k < p.size(); ++k) {
        t.m1 += p[k] * s2[k];
        t.m2 += p[k] * s2[k] * s2[k];
        t.m_neg1 += p[k] / s2[k];
        t.m_neg2 += p[k] / (s2[k] * s2[k]);
    }
    t.M = [p, s2](cdouble z) {
        cdouble acc = 0.0;
        for (size_t k = 0; k < p.size(); ++k) acc += p[k] * s2[k] / (z - s2[k]);
        return acc;
    };
    return t;
}

inline MTransform mtransform_point(double sigma2) {
    return mtransform_discrete({1.0}, {sigma2});
}

// Power-law variance spectrum: density 2(1-l)^2/(v+1-2l)^3 on [l, inf), l = lambda_min.
// Closed form is the boundary value from the upper half-plane; the lower
// half-plane follows by reflection.
inline MTransform mtransform_power_law(double lambda_min) {
    if (!(lambda_min > 0.0 && lambda_min < 0.5))
        throw std::invalid_argument("mtransform_power_law: lambda_min in (0, 1/2) required");
    const double l = lambda_min;
    std::function<cdouble(cdouble)> upper = [l](cdouble z) {
        const cdouble d = 1.0 - 2.0 * l + z;
        const cdouble lg = std::log(z - l) - std::log(1.0 - l) - cdouble(0.0, M_PI);
        return ((d * (z - (1.0 - 2.0 * l) * (1.0 - 2.0 * l))) +
                2.0 * (1.0 - l) * (1.0 - l) * z * lg) / (d * d * d);
    };
    MTransform t;
    t.M = [upper](cdouble z) {
        if (z.imag() < 0.0) return std::conj(upper(std::conj(z)));
        return upper(z);
    };
    t.m1 = 1.0;
    t.m2 = kInf;
    // negative moments by quadrature through the inverse CDF v(q) = 2l-1+(1-l)/sqrt(1-q)
    auto neg_moment = [l](int k) {
        return detail::simpson([l, k](double q) {
            double v = 2.0 * l - 1.0 + (1.0 - l) / std::sqrt(1.0 - q);
            return std::pow(v, -k);
        }, 0.0, 1.0 - 1e-12, 4000);
    };
    t.m_neg1 = neg_moment(1);
    t.m_neg2 = neg_moment(2);
    return t;
}

// Exponentially decaying weight profile with decay rate vartheta (T -> inf limit).
inline MTransform mtransform_exp_weights(double vartheta) {
    if (!(vartheta > 0.0)) throw std::invalid_argument("mtransform_exp_weights: vartheta > 0 required");
    const double th = vartheta;
    auto moment = [th](int n) {
        // (th/(e^th - 1))^n (e^{n th} - 1)/(n th), valid for negative n as well
        return std::pow(th / std::expm1(th), n) * std::expm1(n * th) / (n * th);
    };
    MTransform t;
    t.M = [th](cdouble z) {
        const cdouble a = (1.0 - std::exp(th)) * z;
        return (std::log(a + th) - std::log(a + th * std::exp(th))) / th;
    };
    t.m1 = moment(1);
    t.m2 = moment(2);
    t.m_neg1 = moment(-1);
    t.m_neg2 = moment(-2);
    return t;
}

// Inverse-gamma mixture of variances: v = theta^2/x with x ~ Gamma(mu/2, scale 2).
inline MTransform mtransform_inverse_gamma(double mu, double theta, int nodes = 200) {
    if (!(mu > 0.0) || !(theta > 0.0))
        throw std::invalid_argument("mtransform_inverse_gamma: mu, theta > 0 required");
    // generalized Gauss-Laguerre nodes for weight y^{mu/2-1} e^{-y} (Golub-Welsch)
    const double a = mu / 2.0 - 1.0;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(nodes, nodes);
    for (int i = 0; i < nodes; ++i) {
        jac(i, i) = 2.0 * i + a + 1.0;
        if (i > 0) {
            double b = std::sqrt(i * (i + a));
            jac(i, i - 1) = jac(i - 1, i) = b;
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
    std::vector<double> ys(static_cast<size_t>(nodes)), ws(static_cast<size_t>(nodes));
    double wsum = 0.0;
    for (int i = 0; i < nodes; ++i) {
        ys[static_cast<size_t>(i)] = es.eigenvalues()[i];
        double w = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
        ws[static_cast<size_t>(i)] = w;
        wsum += w;
    }
    for (double& w : ws) w /= wsum;  // normalize mixture weights to 1

    const double th2 = theta * theta;
    MTransform t;
    t.M = [ys, ws, th2](cdouble z) {
        // E[v/(z-v)] with v = th2/x, x = 2y:  th2/(2 y z - th2)
        cdouble acc = 0.0;
        for (size_t i = 0; i < ys.size(); ++i) acc += ws[i] * th2 / (2.0 * ys[i] * z - th2);
        return acc;
    };
    t.m1 = mu > 2.0 ? th2 / (mu - 2.0) : kInf;
    t.m2 = mu > 4.0 ? th2 * th2 / ((mu - 2.0) * (mu - 4.0)) : kInf;
    t.m_neg1 = mu / th2;
    t.m_neg2 = mu * (mu + 2.0) / (th2 * th2);
    return t;
}

// Exponential autocovariance profile sigma2 * e^{-|a-b|/tau} in the T -> inf limit.
inline MTransform mtransform_exp_autocov(double sigma2, double tau) {
    if (!(sigma2 > 0.0) || !(tau > 0.0))
        throw std::invalid_argument("mtransform_exp_autocov: sigma2, tau > 0 required");
    const double lo = std::tanh(0.5 / tau), hi = 1.0 / std::tanh(0.5 / tau);
    const double chi = 1.0 / std::tanh(1.0 / tau);
    const double sh = std::sinh(1.0 / tau), ch = std::cosh(1.0 / tau);
    MTransform t;
    t.M = [sigma2, lo, hi](cdouble z) {
        const cdouble zs = z / sigma2;
        return 1.0 / (std::sqrt(zs - lo) * std::sqrt(zs - hi));
    };
    t.m1 = sigma2;
    t.m2 = sigma2 * sigma2 * chi;
    t.m_neg1 = ch / (sigma2 * sh);
    t.m_neg2 = (ch * ch + 0.5) / (sigma2 * sigma2 * sh * sh);
    return t;
}

// ---------------------------------------------------------------------------
// Enclosing-circle radii of the lagged-estimator spectrum
// ---------------------------------------------------------------------------

struct Radii {
    double r_ext = kInf;
    double r_int = 0.0;
    bool ext_finite = false;
    bool int_present = false;
};

namespace detail {

// Solve M(-f) = -1/r on f > 0 (M monotone from -1 at 0+ to 0- at infinity).
inline double negative_axis_crossing(const MTransform& t, double r) {
    auto g = [&t, r](double f) { return t.M(cdouble(-f, 0.0)).real() + 1.0 / r; };
    double lo = 1e-10, hi = std::max(1.0, 4.0 * std::abs(t.m1) * r);
    int guard = 0;
    while (g(lo) > 0.0 && guard++ < 200) lo *= 0.5;
    guard = 0;
    while (g(hi) < 0.0 && guard++ < 200) hi *= 2.0;
    return bracket_root(g, lo, hi, 1e-14);
}

}  // namespace detail

// True covariance with arbitrary spectrum, unweighted lag estimator.
inline Radii circle_radii_general_cov(const MTransform& c, double r) {
    Radii out;
    if (std::isfinite(c.m2)) {
        out.r_ext = std::sqrt(r * r * c.m1 * c.m1 + r * c.m2);
        out.ext_finite = true;
    }
    if (r > 1.0) {
        double f = detail::negative_axis_crossing(c, r);
        double h = 1e-6 * std::max(1.0, f);
        double dh = (c.M(cdouble(-(f + h), 0.0)).real() -
                     c.M(cdouble(-(f - h), 0.0)).real()) / (2.0 * h);
        // d/df M(-f) = -M'(-f); radius uses r f^3 * (d/df M(-f))
        out.r_int = std::sqrt(std::max(0.0, r * f * f * f * dh));
        out.int_present = out.r_int > 0.0;
    }
    return out;
}

// Identity covariance, diagonal temporal weight profile with M-transform a.
inline Radii circle_radii_diag_weights(const MTransform& a, double r) {
    Radii out;
    if (std::isfinite(a.m2)) {
        out.r_ext = std::sqrt(r * a.m1 * a.m1 + r * r * a.m2);
        out.ext_finite = true;
    }
    if (r > 1.0 && std::isfinite(a.m_neg2)) {
        double d = a.m_neg1 * a.m_neg1 + (r - 1.0) * a.m_neg2;
        out.r_int = std::sqrt((r - 1.0) * (r - 1.0) * (r - 1.0) / d);
        out.int_present = out.r_int > 0.0;
    }
    return out;
}

inline Radii iid_lag_radii(double r, double sigma2) {
    Radii out;
    out.r_ext = sigma2 * std::sqrt(r * (1.0 + r));
    out.ext_finite = true;
    if (r > 1.0) {
        out.r_int = sigma2 * std::sqrt((r - 1.0) * (r - 1.0) * (r - 1.0) / r);
        out.int_present = true;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Rotationally symmetric master-equation solver (radial profiles)
// ---------------------------------------------------------------------------

// Solves the two-real-unknown fixed point of a rotationally symmetric spectral
// problem along rays R > 0, tracking the branch by continuation from the
// external edge inward. M runs from 0 at the external edge down to -min(1,1/r)
// at the inner edge (or at R -> 0); the radial eigenvalue density is dM/dR.
class RotSolver {
public:
    enum class Form { GeneralCov, DiagWeights };

    RotSolver(Form form, MTransform t, double r)
        : form_(form), t_(std::move(t)), r_(r) {
        if (!(r > 0.0)) throw std::invalid_argument("RotSolver: r > 0 required");
        radii_ = form == Form::GeneralCov ? circle_radii_general_cov(t_, r)
                                          : circle_radii_diag_weights(t_, r);
        if (!radii_.ext_finite)
            throw std::invalid_argument("RotSolver: external radius must be finite");
    }

    static RotSolver general_cov(MTransform c, double r) {
        return RotSolver(Form::GeneralCov, std::move(c), r);
    }
    static RotSolver diag_weights(MTransform a, double r) {
        return RotSolver(Form::DiagWeights, std::move(a), r);
    }

    const Radii& radii() const { return radii_; }
    double r_ext() const { return radii_.r_ext; }
    double r_int() const { return radii_.int_present ? radii_.r_int : 0.0; }

    // M at radius R (0 outside the external edge, -1/r inside the internal one)
    double solve_M(double R) {
        if (R >= radii_.r_ext) return 0.0;
        if (radii_.int_present && R <= radii_.r_int) return -1.0 / r_;
        walk_to(R);
        return cur_M_;
    }

    // radial density dM/dR (per full spectrum, integrates to min(1, 1/r))
    double density(double R) {
        if (R >= radii_.r_ext || (radii_.int_present && R <= radii_.r_int)) return 0.0;
        double h = std::min(1e-4 * radii_.r_ext,
                            0.25 * std::min(radii_.r_ext - R, R - r_int()));
        if (h <= 0.0) return 0.0;
        walk_to(R);
        const double saveR = cur_R_, saveM = cur_M_, savem = cur_m_;
        auto diff = [this, saveR, saveM, savem](double step) {
            cur_R_ = saveR; cur_M_ = saveM; cur_m_ = savem;
            double mp = solve_M(saveR + step);
            cur_R_ = saveR; cur_M_ = saveM; cur_m_ = savem;
            double mm = solve_M(saveR - step);
            return (mp - mm) / (2.0 * step);
        };
        double d1 = diff(h), d2 = diff(h / 2.0);
        cur_R_ = saveR; cur_M_ = saveM; cur_m_ = savem;
        return (4.0 * d2 - d1) / 3.0;
    }

    std::vector<double> density_curve(const std::vector<double>& radii) {
        std::vector<size_t> order(radii.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&radii](size_t a, size_t b) { return radii[a] > radii[b]; });
        std::vector<double> out(radii.size(), 0.0);
        for (size_t i : order) out[i] = density(radii[i]);
        return out;
    }

private:
    cdouble residual(double M, double m, double R) const {
        if (M >= -1e-13 || M <= -1.0 / r_ + 1e-13)
            return cdouble(1e8 * (1.0 + std::abs(M)), 1e8);
        const double disc = -(1.0 + 1.0 / (r_ * M));
        if (disc <= 0.0) return cdouble(1e8, 1e8);
        const double root = std::sqrt(disc);
        cdouble w, rhs;
        if (form_ == Form::GeneralCov) {
            w = R * root / cdouble(r_ * m, -(1.0 + r_ * M));
            rhs = t_.M(w);
        } else {
            w = R * root / (r_ * cdouble(m, -(1.0 + M)));
            rhs = t_.M(w) / r_;
        }
        return cdouble(M, m) - rhs;
    }

    bool try_newton(double R, double& M, double& m) const {
        try {
            auto pair = solve_real_pair(
                [this, R](double a, double b) {
                    cdouble v = residual(a, b, R);
                    return std::make_pair(v.real(), v.imag());
                },
                {M, m}, 1e-12);
            M = pair.first;
            m = pair.second;
            return true;
        } catch (const std::runtime_error&) {
            return false;
        }
    }

    void seed_at_edge() {
        const double scale = 1.0 / r_;
        const double seeds[][2] = {{1e-4, 1e-4}, {1e-3, 1e-3}, {1e-2, 1e-2},
                                   {5e-2, 5e-2}, {0.2, 0.2},   {0.5, 0.1},
                                   {1e-4, -1e-4}, {1e-3, -1e-3}, {1e-2, -1e-2},
                                   {5e-2, -5e-2}, {0.2, -0.2},   {0.5, -0.1}};
        for (double frac : {1.0 - 1e-3, 0.99, 0.97, 0.93, 0.85, 0.7, 0.5}) {
            const double R0 = radii_.r_ext * frac;
            for (const auto& s : seeds) {
                double M = -s[0] * scale, m = s[1] * scale;
                if (try_newton(R0, M, m)) {
                    cur_R_ = R0; cur_M_ = M; cur_m_ = m;
                    seeded_ = true;
                    return;
                }
            }
        }
        throw std::runtime_error("diverged");
    }

    void walk_to(double R) {
        if (!seeded_ || R > cur_R_ + 1e-12) {
            seeded_ = false;
            seed_at_edge();
        }
        step_to(R, 0);
    }

    void step_to(double R, int depth) {
        double M = cur_M_, m = cur_m_;
        if (try_newton(R, M, m) && M < -1e-13 && M > -1.0 / r_ + 1e-13) {
            cur_R_ = R; cur_M_ = M; cur_m_ = m;
            return;
        }
        if (depth > 40) throw std::runtime_error("diverged");
        double mid = 0.5 * (cur_R_ + R);
        step_to(mid, depth + 1);
        step_to(R, depth + 1);
    }

    Form form_;
    MTransform t_;
    double r_;
    Radii radii_;
    bool seeded_ = false;
    double cur_R_ = 0.0, cur_M_ = 0.0, cur_m_ = 0.0;
};

// ---------------------------------------------------------------------------
// Closed forms for the iid case
// ---------------------------------------------------------------------------

// Cubic branch value of M at radius R for the iid lag estimator.
// Coefficients in R/sigma2 units; branch tracked by continuation from the edge.
inline double iid_lag_M_cubic(double r, double sigma2, double R) {
    Radii rad = iid_lag_radii(r, sigma2);
    if (R >= rad.r_ext) return 0.0;
    if (rad.int_present && R <= rad.r_int) return -1.0 / r;
    const int steps = 64;
    double prev = 0.0;
    double R0 = rad.r_ext;
    for (int i = 1; i <= steps; ++i) {
        double Rc = R0 + (R - R0) * i / steps;
        double Rs2 = Rc * Rc / (sigma2 * sigma2);
        Polynomial p;
        p.coeffs = {cdouble((1.0 + r) * (r * (1.0 + r) - Rs2)),
                    cdouble(r * ((1.0 + r) * (1.0 + 5.0 * r) - Rs2)),
                    cdouble(4.0 * r * r * (1.0 + 2.0 * r)),
                    cdouble(4.0 * r * r * r)};
        RootSet roots = poly_roots(p);
        double best = prev;
        double best_d = kInf;
        for (const auto& z : roots.roots) {
            if (std::abs(z.imag()) > 1e-7 * (1.0 + std::abs(z))) continue;
            double d = std::abs(z.real() - prev);
            if (d < best_d) { best_d = d; best = z.real(); }
        }
        prev = best;
    }
    return prev;
}

// Radial density for the iid lag estimator via the closed-form cubic in rho.
inline double iid_lag_radial_density(double r, double sigma2, double R) {
    Radii rad = iid_lag_radii(r, sigma2);
    if (R >= rad.r_ext || (rad.int_present && R <= rad.r_int)) return 0.0;
    const double Rs = R / sigma2;
    const double R2 = Rs * Rs, R4 = R2 * R2;
    const double a = 4.0 * r * r * r *
                     (R4 - (11.0 + 14.0 * r + 2.0 * r * r) * R2 -
                      (1.0 - r * r) * (1.0 - r) * (1.0 - r));
    const double b = r * (-R4 + 2.0 * (1.0 + r) * (5.0 + r) * R2 -
                          (1.0 - r * r) * (1.0 - r * r));
    const double c = 2.0 * (1.0 + r) * (1.0 + r) * Rs;
    const double bt = b / a, ct = c / a;
    double rho_s;
    const double disc = bt * bt * bt / 27.0 + ct * ct / 4.0;
    if (disc > 0.0) {
        double at = std::cbrt(-ct / 2.0 + std::sqrt(disc));
        rho_s = at - bt / (3.0 * at);
    } else {
        cdouble at = std::pow(cdouble(-ct / 2.0, 0.0) + std::sqrt(cdouble(disc, 0.0)),
                              1.0 / 3.0);
        rho_s = (at - bt / (3.0 * at)).real();
    }
    return std::max(0.0, rho_s) / sigma2;  // d/dR = (1/sigma2) d/dR_sigma
}

// Marchenko-Pastur density of the equal-time estimator (continuous part,
// integrates to min(1, 1/r); an extra (1-1/r) zero-mode mass exists for r > 1).
inline double mp_density(double r, double sigma2, double x) {
    const double sr = std::sqrt(r);
    const double lo = sigma2 * (1.0 - sr) * (1.0 - sr);
    const double hi = sigma2 * (1.0 + sr) * (1.0 + sr);
    if (x <= lo || x >= hi || x <= 0.0) return 0.0;
    return std::sqrt((hi - x) * (x - lo)) / (2.0 * M_PI * r * sigma2 * x);
}

// Wigner semicircle on [-2 sigma, 2 sigma].
inline double semicircle_density(double sigma2, double x) {
    const double s = 4.0 * sigma2 - x * x;
    return s > 0.0 ? std::sqrt(s) / (2.0 * M_PI * sigma2) : 0.0;
}

// Uniform disc of radius sigma: radial density 2R/sigma^2.
inline double disc_radial_density(double sigma2, double R) {
    return (R >= 0.0 && R * R <= sigma2) ? 2.0 * R / sigma2 : 0.0;
}

// ---------------------------------------------------------------------------
// Equal-time estimator with general true covariance
// ---------------------------------------------------------------------------

// Solves M = M_C(z/(r M + 1)) by continuation from large |z| where M ~ m1/z.
class EqualTimeSolver {
public:
    EqualTimeSolver(MTransform c, double r) : c_(std::move(c)), r_(r) {
        double m1 = std::isfinite(c_.m1) ? std::abs(c_.m1) : 1.0;
        scale_ = std::max(1e-12, m1) * (1.0 + std::sqrt(r)) * (1.0 + std::sqrt(r));
    }

    cdouble solve_M(cdouble z) {
        if (!seeded_) seed();
        path_to(z, 0);
        return cur_M_;
    }

    cdouble greens(cdouble z) { return (solve_M(z) + 1.0) / z; }

    // eigenvalue density of the continuous part at x (per full spectrum)
    double density(double x, double eps = 1e-6) {
        cdouble g = greens(cdouble(x, eps));
        return std::max(0.0, -g.imag() / M_PI);
    }

    std::vector<double> density_curve(const std::vector<double>& xs, double eps = 1e-6) {
        std::vector<size_t> order(xs.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(),
                  [&xs](size_t a, size_t b) { return xs[a] > xs[b]; });
        std::vector<double> out(xs.size(), 0.0);
        for (size_t i : order) out[i] = density(xs[i], eps);
        return out;
    }

private:
    cdouble g_resid(cdouble M, cdouble z) const { return M - c_.M(z / (r_ * M + 1.0)); }

    bool newton(cdouble z, cdouble& M) const {
        for (int it = 0; it < 100; ++it) {
            cdouble f = g_resid(M, z);
            if (std::abs(f) < 1e-13 * (1.0 + std::abs(M))) return true;
            double h = 1e-7 * std::max(1.0, std::abs(M));
            cdouble d = (g_resid(M + h, z) - g_resid(M - h, z)) / (2.0 * h);
            if (std::abs(d) < 1e-300) return false;
            cdouble step = -f / d;
            // backtrack on residual growth
            double base = std::abs(f);
            double lam = 1.0;
            bool ok = false;
            for (int hh = 0; hh < 30; ++hh) {
                cdouble Mn = M + lam * step;
                if (std::abs(g_resid(Mn, z)) < base) { M = Mn; ok = true; break; }
                lam *= 0.5;
            }
            if (!ok) return std::abs(f) < 1e-9;
        }
        return false;
    }

    void seed() {
        cur_z_ = cdouble(20.0 * scale_, scale_);
        cur_M_ = c_.m1 / cur_z_;
        if (!newton(cur_z_, cur_M_)) throw std::runtime_error("diverged");
        seeded_ = true;
    }

    void path_to(cdouble z, int depth) {
        cdouble M = cur_M_;
        if (newton(z, M)) { cur_z_ = z; cur_M_ = M; return; }
        if (depth > 48) throw std::runtime_error("diverged");
        cdouble mid = 0.5 * (cur_z_ + z);
        path_to(mid, depth + 1);
        path_to(z, depth + 1);
    }

    MTransform c_;
    double r_;
    double scale_;
    bool seeded_ = false;
    cdouble cur_z_, cur_M_;
};

// Cross-check route for the lagged radial profile: the real fixed point
// M = Re M_etce(i R sqrt(-(1 + 1/(r M)))) where M_etce is the equal-time map.
inline double rotation_crosscheck_M(const MTransform& c, double r, double R) {
    EqualTimeSolver et(c, r);
    auto f = [&et, r, R](double M) {
        double disc = -(1.0 + 1.0 / (r * M));
        if (disc <= 0.0) return 1e8;
        cdouble w = cdouble(0.0, R * std::sqrt(disc));
        return M - et.solve_M(w).real();
    };
    const double lo = -1.0 / r + 1e-9, hi = -1e-9;
    const int n = 400;
    double prev_M = lo, prev_f = f(lo);
    for (int i = 1; i <= n; ++i) {
        double Mc = lo + (hi - lo) * i / n;
        double fc = f(Mc);
        if (std::isfinite(prev_f) && std::isfinite(fc) && prev_f * fc <= 0.0 &&
            std::abs(prev_f) < 1e6 && std::abs(fc) < 1e6) {
            return bracket_root(f, prev_M, Mc, 1e-13);
        }
        prev_M = Mc; prev_f = fc;
    }
    throw std::runtime_error("no bracket");
}

// ---------------------------------------------------------------------------
// Incorrect spectral multiplication shortcut (for falsification experiments)
// ---------------------------------------------------------------------------

// The naive law M = M_{C^2}(R^2 (1+r+rM) / (r M (1+r+2rM)^2)); c2 is the
// M-transform of the squared true covariance.
inline double naive_product_law_M(const MTransform& c2, double r, double R, double prev_M) {
    auto f = [&c2, r, R](double M) {
        double denom = r * M * std::pow(1.0 + r + 2.0 * r * M, 2);
        if (std::abs(denom) < 1e-300) return 1e8;
        cdouble w = R * R * (1.0 + r + r * M) / denom;
        return M - c2.M(w).real();
    };
    // scan the physical interval and keep the root nearest the previous value
    const double lo = -1.0 / r + 1e-9, hi = -1e-9;
    const int n = 2000;
    double best = prev_M;
    double best_d = kInf;
    double pm = lo, pf = f(lo);
    for (int i = 1; i <= n; ++i) {
        double Mc = lo + (hi - lo) * i / n;
        double fc = f(Mc);
        if (std::isfinite(pf) && std::isfinite(fc) && pf * fc <= 0.0 &&
            std::abs(pf) < 1e6 && std::abs(fc) < 1e6) {
            double root = bracket_root(f, pm, Mc, 1e-13);
            double d = std::abs(root - prev_M);
            if (d < best_d) { best_d = d; best = root; }
        }
        pm = Mc; pf = fc;
    }
    if (!std::isfinite(best_d)) return prev_M;
    return best;
}

inline std::vector<double> naive_product_law_density(const MTransform& c2, double r,
                                                     const std::vector<double>& radii) {
    // walk from large R (M ~ 0) inward, differentiate the tracked branch
    std::vector<size_t> order(radii.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&radii](size_t a, size_t b) { return radii[a] > radii[b]; });
    std::vector<double> out(radii.size(), 0.0);
    double prev = -1e-6;
    for (size_t i : order) {
        double R = radii[i];
        double h = 1e-4 * std::max(R, 1.0);
        double Mc = naive_product_law_M(c2, r, R, prev);
        double mp = naive_product_law_M(c2, r, R + h, Mc);
        double mm = naive_product_law_M(c2, r, R - h, Mc);
        out[i] = std::max(0.0, (mp - mm) / (2.0 * h));
        prev = Mc;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Heavy-tailed variance mixture: radial density of the lag estimator
// ---------------------------------------------------------------------------

// Version with one variance per matrix sample: scale mixture of the iid radial
// profile over an inverse-gamma variance.
inline double scale_mixture_radial_density(double r, double mu, double theta, double R) {
    if (R <= 0.0) return 0.0;
    Radii unit = iid_lag_radii(r, 1.0);
    const double lo = unit.int_present ? unit.r_int : 1e-9;
    const double hi = unit.r_ext;
    // cache the unit-variance radial profile on a fixed grid
    static thread_local double cached_r = -1.0;
    static thread_local std::vector<double> grid, rho;
    const int n = 600;
    if (cached_r != r) {
        grid.resize(n + 1);
        rho.resize(n + 1);
        for (int i = 0; i <= n; ++i) {
            grid[static_cast<size_t>(i)] = lo + (hi - lo) * i / n;
            rho[static_cast<size_t>(i)] = iid_lag_radial_density(r, 1.0, grid[static_cast<size_t>(i)]);
        }
        cached_r = r;
    }
    const double pref = std::exp(mu * std::log(theta) - 0.5 * mu * std::log(2.0) -
                                 special_log_gamma(mu / 2.0)) *
                        std::pow(R, -1.0 - mu / 2.0);
    // composite Simpson over the cached grid
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        double xi = grid[static_cast<size_t>(i)];
        double val = rho[static_cast<size_t>(i)] * std::pow(xi, mu / 2.0) *
                     std::exp(-theta * theta * xi / (2.0 * R));
        double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        acc += w * val;
    }
    acc *= (hi - lo) / n / 3.0;
    return pref * acc;
}

// ---------------------------------------------------------------------------
// Heavy-tailed (stable-law) returns: lagged-estimator radial profile
// ---------------------------------------------------------------------------

struct StableSolution {
    double M = 0.0;
    double m = 0.0;
    cdouble delta = 0.0;
};

namespace detail {

inline cdouble stable_resid_zero_skew(double alpha, double gamma, double r,
                                      double R, double M, double m) {
    if (M >= -1e-13 || M <= -1.0 / r + 1e-13) return cdouble(1e8 * (1.0 + std::abs(M)), 1e8);
    const double disc = -(1.0 + 1.0 / (r * M));
    if (disc <= 0.0) return cdouble(1e8, 1e8);
    const cdouble u(M, m);
    const cdouble base = cdouble(r * M + 1.0, r * m) * (u + 1.0) / std::sqrt(disc);
    const cdouble lhs = std::pow(base, alpha) / (u * u) *
                        std::exp(cdouble(0.0, M_PI * alpha / 2.0)) *
                        std::pow(r, alpha - 2.0);
    return lhs - std::pow(R, alpha) / (gamma * gamma);
}

}  // namespace detail

// Zero-skew stable returns, iid in space and time: solve the radial master
// equation for (M, m) at radius R with continuation support via `seed`.
inline StableSolution stable_lag_solve(double alpha, double gamma, double r, double R,
                                       const StableSolution* seed = nullptr) {
    auto resid = [alpha, gamma, r, R](double M, double m) {
        cdouble v = detail::stable_resid_zero_skew(alpha, gamma, r, R, M, m);
        return std::make_pair(v.real(), v.imag());
    };
    std::vector<std::pair<double, double>> seeds;
    if (seed) seeds.push_back({seed->M, seed->m});
    // large-R asymptotics |M| ~ (gamma^2 r^{3a/2-2} / R^a)^{1/(2-a/2)}
    double mag = std::pow(gamma * gamma * std::pow(r, 1.5 * alpha - 2.0) /
                              std::pow(R, alpha),
                          1.0 / (2.0 - alpha / 2.0));
    for (double f : {1.0, 3.0, 0.3, 10.0, 0.1, 30.0}) {
        double v = std::min(mag * f, 0.9 / r);
        seeds.push_back({-v, v});
    }
    for (const auto& s : seeds) {
        try {
            auto p = solve_real_pair(resid, s, 1e-12);
            if (p.first < -1e-12 && p.first > -1.0 / r + 1e-12) {
                StableSolution out;
                out.M = p.first;
                out.m = p.second;
                return out;
            }
        } catch (const std::runtime_error&) {
        }
    }
    throw std::runtime_error("diverged");
}

// General skew: unknowns (M, m, delta); equations are the skew-coupling
// relation and the radial master equation.
inline StableSolution stable_lag_solve_skew(double alpha, double beta, double gamma,
                                            double r, double R,
                                            const StableSolution* seed = nullptr) {
    if (std::abs(beta) < 1e-14) {
        StableSolution s = stable_lag_solve(alpha, gamma, r, R, seed);
        return s;
    }
    const double phase = alpha < 1.0 ? M_PI * alpha * beta : M_PI * (alpha - 2.0) * beta;
    const cdouble phi = std::exp(cdouble(0.0, phase));
    auto fvec = [alpha, gamma, r, R, phi](const Eigen::VectorXd& x) {
        const double M = x[0], m = x[1];
        const cdouble delta(x[2], x[3]);
        Eigen::VectorXd out(4);
        if (M >= -1e-13 || M <= -1.0 / r + 1e-13 || -(1.0 + 1.0 / (r * M)) <= 0.0) {
            out.setConstant(1e8 * (1.0 + std::abs(M)));
            return out;
        }
        const cdouble q(r * M + 1.0, r * m);
        const cdouble p(r * M, r * m);
        const cdouble u(M, m);
        const cdouble eq1 = phi * std::pow(q + delta, alpha) / (p + delta) -
                            std::pow(q - delta, alpha) / (p - delta);
        const double root = std::sqrt(-(1.0 + 1.0 / (r * M)));
        const cdouble eq2 = std::pow((q * q - delta * delta) * (u + 1.0) / (q * root), alpha) /
                                (r * r * u * u - delta * delta) *
                                std::exp(cdouble(0.0, M_PI * alpha / 2.0)) * std::pow(r, alpha) -
                            std::pow(R, alpha) / (gamma * gamma);
        out << eq1.real(), eq1.imag(), eq2.real(), eq2.imag();
        return out;
    };
    std::vector<Eigen::Vector4d> seeds;
    if (seed) seeds.push_back(Eigen::Vector4d(seed->M, seed->m, seed->delta.real(),
                                              seed->delta.imag()));
    double mag = std::pow(gamma * gamma * std::pow(r, 1.5 * alpha - 2.0) /
                              std::pow(R, alpha),
                          1.0 / (2.0 - alpha / 2.0));
    for (double f : {1.0, 3.0, 0.3, 10.0, 0.1}) {
        double v = std::min(mag * f, 0.9 / r);
        seeds.push_back(Eigen::Vector4d(-v, v, 0.1 * v * beta, 0.1 * v * beta));
    }
    for (const auto& s : seeds) {
        try {
            Eigen::VectorXd x = detail::newton_n(fvec, s, 1e-11);
            if (x[0] < -1e-12 && x[0] > -1.0 / r + 1e-12) {
                StableSolution out;
                out.M = x[0];
                out.m = x[1];
                out.delta = cdouble(x[2], x[3]);
                return out;
            }
        } catch (const std::runtime_error&) {
        }
    }
    throw std::runtime_error("diverged");
}

// Radial density curve for stable returns by continuation along decreasing R.
inline std::vector<double> stable_lag_density_curve(double alpha, double beta, double gamma,
                                                    double r, const std::vector<double>& radii) {
    std::vector<size_t> order(radii.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&radii](size_t a, size_t b) { return radii[a] > radii[b]; });
    std::vector<double> out(radii.size(), 0.0);
    StableSolution state;
    bool have_state = false;
    for (size_t i : order) {
        double R = radii[i];
        if (R <= 0.0) continue;
        double h = 1e-4 * std::max(R, 1.0);
        h = std::min(h, 0.25 * R);
        try {
            StableSolution c = stable_lag_solve_skew(alpha, beta, gamma, r, R,
                                                     have_state ? &state : nullptr);
            StableSolution up = stable_lag_solve_skew(alpha, beta, gamma, r, R + h, &c);
            StableSolution dn = stable_lag_solve_skew(alpha, beta, gamma, r, R - h, &c);
            out[i] = std::max(0.0, (up.M - dn.M) / (2.0 * h));
            state = c;
            have_state = true;
        } catch (const std::runtime_error&) {
            out[i] = 0.0;
        }
    }
    return out;
}

// M(R) for stable returns (mass bookkeeping: fraction outside radius R is -M(R)).
inline double stable_lag_M(double alpha, double beta, double gamma, double r, double R) {
    return stable_lag_solve_skew(alpha, beta, gamma, r, R).M;
}

// ---------------------------------------------------------------------------
// Finite-size edge smoothing
// ---------------------------------------------------------------------------

// Complementary-error-function edge factor; sign = +1 for an external edge,
// -1 for an internal one.
inline double erfc_edge_factor(double R, double R_edge, double q, int sign, double n_dim) {
    return 0.5 * special_erfc(q * sign * (R - R_edge) * std::sqrt(n_dim));
}

struct EdgeFit {
    double q = 0.0;
    double l1_smoothed = 0.0;
    double l1_sharp = 0.0;
};

// Fit the edge-width parameter q by minimizing the L1 gap between the observed
// histogram and the theory profile multiplied by the erfc factor, over the
// window |R - R_edge| <= 5/sqrt(N).
inline EdgeFit fit_edge_width(const std::vector<double>& centers,
                              const std::vector<double>& widths,
                              const std::vector<double>& observed,
                              const std::function<double(double)>& theory,
                              double R_edge, int sign, double n_dim) {
    const double win = 5.0 / std::sqrt(n_dim);
    // reference amplitude: theory just inside the edge
    const double inside = R_edge - sign * 2.0 / std::sqrt(n_dim);
    const double amp = theory(inside);
    auto l1_for = [&](double q, bool sharp) {
        double acc = 0.0;
        for (size_t i = 0; i < centers.size(); ++i) {
            double R = centers[i];
            if (std::abs(R - R_edge) > win) continue;
            double model;
            if (sharp) {
                model = theory(R);
            } else {
                double base = (sign > 0 ? (R <= R_edge) : (R >= R_edge)) ? theory(R) : amp;
                model = base * erfc_edge_factor(R, R_edge, q, sign, n_dim);
            }
            acc += std::abs(observed[i] - model) * widths[i];
        }
        return acc;
    };
    EdgeFit out;
    out.l1_sharp = l1_for(0.0, true);
    // coarse logarithmic scan, then golden-section refinement
    double best_q = 1.0, best_l1 = kInf;
    for (int i = 0; i <= 60; ++i) {
        double q = 0.05 * std::pow(400.0, i / 60.0);
        double v = l1_for(q, false);
        if (v < best_l1) { best_l1 = v; best_q = q; }
    }
    double lo = best_q / 1.6, hi = best_q * 1.6;
    const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
    double fc = l1_for(c, false), fd = l1_for(d, false);
    for (int it = 0; it < 60; ++it) {
        if (fc < fd) { hi = d; d = c; fd = fc; c = hi - gr * (hi - lo); fc = l1_for(c, false); }
        else { lo = c; c = d; fc = fd; d = lo + gr * (hi - lo); fd = l1_for(d, false); }
    }
    out.q = 0.5 * (lo + hi);
    out.l1_smoothed = l1_for(out.q, false);
    return out;
}

// ---------------------------------------------------------------------------
// Abel transform pair (normality diagnostic)
// ---------------------------------------------------------------------------

// Forward: f(x) = (1/pi) int_x^{R_max} rho(R)/sqrt(R^2-x^2) dR. For a normal
// rotationally symmetric operator this equals sqrt(2) * rho_real(sqrt(2) x).
inline double abel_forward(const std::function<double(double)>& rho_rad, double r_max,
                           double x, int n = 400) {
    if (x >= r_max || x <= 0.0) return 0.0;
    // shave the endpoint so a density jump at the outer edge is sampled inside
    const double tmax = std::acosh(r_max / x) * (1.0 - 1e-9);
    return detail::simpson([&rho_rad, x](double t) { return rho_rad(x * std::cosh(t)); },
                           0.0, tmax, n) / M_PI;
}

// Inverse: rho(R) = -2R int_R^{x_max} f'(x)/sqrt(x^2-R^2) dx.
inline double abel_inverse(const std::function<double(double)>& f, double x_max,
                           double R, int n = 400) {
    if (R >= x_max || R <= 0.0) return 0.0;
    const double tmax = std::acosh(x_max / R) * (1.0 - 1e-9);
    auto fprime = [&f](double x) {
        const double h = 1e-5 * std::max(1.0, x);
        return (f(x + h) - f(x - h)) / (2.0 * h);
    };
    // t = tmax (1 - v^2) absorbs an integrable square-root singularity of f'
    // at the outer support edge
    return -2.0 * R *
           detail::simpson(
               [&fprime, R, tmax](double v) {
                   double t = tmax * (1.0 - v * v);
                   return fprime(R * std::cosh(t)) * 2.0 * tmax * v;
               },
               0.0, 1.0, n);
}

// ---------------------------------------------------------------------------
// Density of eigenvalue real parts for the iid lag estimator
// ---------------------------------------------------------------------------

// Quartic branch (unit variance); general variance scales as
// rho(x; sigma2) = rho(x/sigma2; 1)/sigma2.
inline std::vector<double> iid_lag_real_part_density(double r, const std::vector<double>& xs,
                                                     double eps = 1e-6) {
    std::vector<size_t> order(xs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&xs](size_t a, size_t b) { return std::abs(xs[a]) > std::abs(xs[b]); });
    std::vector<double> out(xs.size(), 0.0);
    double far = 10.0 * (1.0 + std::sqrt(r * (1.0 + r)));
    for (double sgn : {1.0, -1.0}) {
        cdouble prev = 0.0;
        bool first = true;
        for (size_t i : order) {
            if (xs[i] * sgn < 0.0 || (xs[i] == 0.0 && sgn < 0.0)) continue;
            // walk in from a far seed the first time on this side
            std::vector<double> path;
            if (first) {
                const int K = 120;
                for (int k = 0; k <= K; ++k) {
                    double s = static_cast<double>(K - k) / K;
                    path.push_back(xs[i] + (sgn * far - xs[i]) * s * s * s);
                }
                first = false;
            } else {
                path.push_back(xs[i]);
            }
            for (double xc : path) {
                cdouble z(xc, eps);
                Polynomial p;
                p.coeffs = {cdouble(1.0),
                            2.0 * (1.0 + r - z * z / r),
                            (1.0 + 4.0 * r + r * r) - z * z,
                            cdouble(2.0 * r * (1.0 + r)),
                            cdouble(r * r)};
                RootSet roots = poly_roots(p);
                // physical branch: Im(zG) < 0 for Im z -> 0+, i.e. sgn x * Im M <= 0
                cdouble best = prev;
                double best_d = kInf;
                for (const auto& m : roots.roots) {
                    if (sgn * m.imag() > 1e-9 * (1.0 + std::abs(m))) continue;
                    double d = std::abs(m - prev);
                    if (d < best_d) { best_d = d; best = m; }
                }
                prev = best;
            }
            cdouble g = (prev + 1.0) / cdouble(xs[i], eps);
            out[i] = std::max(0.0, -g.imag() / M_PI);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Power-law variance spectrum: internal radius of the lag estimator
// ---------------------------------------------------------------------------

// Closed form specific to the power-law spectrum with lower edge lambda_min;
// r > 1 required (no internal hole otherwise). External radius is infinite.
inline double power_law_internal_radius(double lambda_min, double r) {
    if (!(r > 1.0)) return 0.0;
    const double l = lambda_min;
    const double f0 = 1.0 - 2.0 * l;
    const double disc = (r - 1.0) * (r - 1.0 + 8.0 * l * (1.0 - 2.0 * l));
    const double fp = 0.25 * (r - 1.0 + std::sqrt(disc));
    const double fm = 0.25 * (r - 1.0 - std::sqrt(disc));
    auto F = [l, r, f0](double f) {
        return 2.0 * (1.0 - l) * (1.0 - l) * std::log((f + l) / (1.0 - l)) +
               (f - f0) / (r * f) *
                   (-(r - 1.0) * f0 * f0 - (2.0 + r - 4.0 * l) * f + f * f);
    };
    // locate sign changes of F on a log grid; keep the root giving a valid radius
    std::vector<double> roots;
    const int n = 4000;
    double pf = 0.0, pfe = 0.0;
    for (int i = 0; i <= n; ++i) {
        double f = 1e-6 * std::pow(1e9, static_cast<double>(i) / n);
        double fe = F(f);
        if (i > 0 && std::isfinite(pfe) && std::isfinite(fe) && pfe * fe < 0.0)
            roots.push_back(bracket_root(F, pf, f, 1e-15));
        pf = f; pfe = fe;
    }
    // f = f0 is always a zero of F but sits on a pole of the radius formula
    double best = kInf;
    for (double f : roots) {
        if (std::abs(f - f0) < 1e-6 * std::max(1.0, f0)) continue;
        double num = 2.0 * f * f * (f - fp) * (f - fm);
        double den = (f - f0) * (f + l);
        if (den == 0.0) continue;
        double v = num / den;
        if (v > 0.0) best = std::min(best, std::sqrt(v));
    }
    return std::isfinite(best) ? best : 0.0;
}

}  // namespace rmt
