#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "rmt/numerics.hpp"
#include "rmt/spectra.hpp"
#include "rmt/theory.hpp"

namespace rmt {

// Exponential (AR(1)) temporal autocovariance: a(b-a) ~ sigma2 e^{-|a-b|/tau}.
struct Tm3Params {
    double r = 0.0;
    double sigma2 = 1.0;
    double tau = 1.0;

    double a1() const { return 2.0 * sigma2 * std::sinh(1.0 / tau); }
    double a2() const { return 2.0 * std::cosh(1.0 / tau); }
    double chi() const { return 1.0 / std::tanh(1.0 / tau); }
};

// ---------------------------------------------------------------------------
// Equal-time estimator
// ---------------------------------------------------------------------------

// Support edges of the equal-time spectrum: real non-negative roots of a
// sextic in x/sigma2; exactly two are expected.
inline std::pair<double, double> tm3_etce_edges(const Tm3Params& p) {
    const double r = p.r, chi = p.chi();
    const double r2 = r * r, r4 = r2 * r2, c2 = chi * chi, c4 = c2 * c2;
    Polynomial poly;
    poly.coeffs = {
        cdouble((1.0 - r2) * (1.0 - r2) * (1.0 - r2 + r2 * c2)),
        cdouble(-2.0 * r * chi * (3.0 * (1.0 - r2) * (2.0 + r2) + r2 * (5.0 + 3.0 * r2) * c2)),
        cdouble(-3.0 * (1.0 + 7.0 * r2 + r4) + (1.0 + 26.0 * r2 - 9.0 * r4) * c2 +
                r2 * (1.0 + 12.0 * r2) * c4),
        cdouble(2.0 * r * chi * (3.0 * (1.0 + 2.0 * r2) - (5.0 + 2.0 * r2) * c2 - 4.0 * r2 * c4)),
        cdouble(3.0 * (1.0 - r2) - (2.0 + 9.0 * r2) * c2 + 12.0 * r2 * c4),
        cdouble(-6.0 * r * chi * (c2 - 1.0)),
        cdouble(c2 - 1.0)};
    RootSet roots = poly_roots(poly);
    std::vector<double> edges;
    for (const auto& z : roots.roots) {
        if (std::abs(z.imag()) > 1e-7 * (1.0 + std::abs(z))) continue;
        if (z.real() < -1e-10) continue;
        edges.push_back(std::max(0.0, z.real()));
    }
    if (edges.size() != 2) throw std::runtime_error("edge ambiguity");
    std::sort(edges.begin(), edges.end());
    return {edges[0] * p.sigma2, edges[1] * p.sigma2};
}

// Quartic satisfied by the dimensionless resolvent G_s = sigma2 * G at
// z_s = z/sigma2; kept as a residual oracle for the fixed-point solution.
inline Polynomial tm3_etce_quartic_poly(const Tm3Params& p, cdouble zs) {
    const double r = p.r, chi = p.chi();
    Polynomial q;
    q.coeffs = {cdouble(1.0),
                -2.0 * (zs + r * chi),
                zs * zs + 4.0 * r * chi * zs + (r * r - 1.0),
                -2.0 * r * zs * (chi * zs + r),
                r * r * zs * zs};
    return q;
}

// Resolvent via the fixed point M = (1/r) M_A(z/(r(M+1))), continued by
// damped Newton from large real z.
inline std::vector<double> tm3_etce_density_curve(const Tm3Params& p,
                                                  const std::vector<double>& xs,
                                                  double eps = 1e-6) {
    const MTransform a = mtransform_exp_autocov(p.sigma2, p.tau);
    const double r = p.r;
    auto resid = [&a, r](cdouble M, cdouble z) {
        return M - a.M(z / (r * (M + 1.0))) / r;
    };
    auto newton = [&resid](cdouble z, cdouble& M) {
        for (int it = 0; it < 100; ++it) {
            cdouble f = resid(M, z);
            if (std::abs(f) < 1e-13 * (1.0 + std::abs(M))) return true;
            double h = 1e-7 * std::max(1.0, std::abs(M));
            cdouble d = (resid(M + h, z) - resid(M - h, z)) / (2.0 * h);
            if (std::abs(d) < 1e-300) return false;
            cdouble step = -f / d;
            double base = std::abs(f), lam = 1.0;
            bool ok = false;
            for (int hh = 0; hh < 30; ++hh) {
                cdouble Mn = M + lam * step;
                if (std::abs(resid(Mn, z)) < base) { M = Mn; ok = true; break; }
                lam *= 0.5;
            }
            if (!ok) return base < 1e-9;
        }
        return true;
    };
    std::vector<size_t> order(xs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&xs](size_t a, size_t b) { return xs[a] > xs[b]; });
    std::vector<double> out(xs.size(), 0.0);
    const double far = 20.0 * p.sigma2 * (1.0 + p.chi()) * (1.0 + r);
    cdouble M = p.sigma2 / far;
    bool seeded = false;
    for (size_t i : order) {
        if (xs[i] <= 0.0) continue;
        std::vector<cdouble> path;
        if (!seeded) {
            const int K = 120;
            for (int k = 0; k <= K; ++k) {
                double s = static_cast<double>(K - k) / K;
                path.push_back(cdouble(xs[i] + (far - xs[i]) * s * s * s, eps));
            }
            seeded = true;
        } else {
            path.push_back(cdouble(xs[i], eps));
        }
        bool ok = true;
        for (const cdouble& z : path)
            if (!newton(z, M)) { ok = false; break; }
        if (!ok) continue;
        cdouble g = (M + 1.0) / cdouble(xs[i], eps);
        out[i] = std::max(0.0, -g.imag() / M_PI);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Lagged estimator: fixed point via unit-circle residues
// ---------------------------------------------------------------------------

// Characteristic polynomial W(u) of degree 2t+3 entering the residue integrals.
inline Polynomial tm3_w_polynomial(const Tm3Params& p, int t, cdouble G, double htilde) {
    if (t < 1) throw std::invalid_argument("tm3_w_polynomial: t >= 1 required");
    const double r = p.r, a1 = p.a1(), a2 = p.a2();
    const cdouble gb = std::conj(G);
    const size_t n = static_cast<size_t>(2 * t + 4);
    std::vector<cdouble> c(n, 0.0);
    c[0] += r * a1 * gb;
    c[1] += -r * a1 * a2 * gb;
    c[2] += r * a1 * gb;
    c[static_cast<size_t>(t - 1)] += 1.0;
    c[static_cast<size_t>(t)] += -2.0 * a2;
    c[static_cast<size_t>(t + 1)] += 2.0 + a2 * a2 + r * r * a1 * a1 * (std::norm(G) + htilde);
    c[static_cast<size_t>(t + 2)] += -2.0 * a2;
    c[static_cast<size_t>(t + 3)] += 1.0;
    c[static_cast<size_t>(2 * t)] += r * a1 * G;
    c[static_cast<size_t>(2 * t + 1)] += -r * a1 * a2 * G;
    c[static_cast<size_t>(2 * t + 2)] += r * a1 * G;
    Polynomial w;
    w.coeffs = std::move(c);
    return w;
}

struct Tm3Flow {
    double f1 = 0.0;   // residual of the amplitude equation
    cdouble z = 0.0;   // mapped spectral position
};

// Evaluates both residue integrals from one factorization of W; demands the
// expected t+1 interior roots.
inline Tm3Flow tm3_tlce_eval(const Tm3Params& p, int t, cdouble G, double htilde) {
    const double r = p.r, a1 = p.a1(), a2 = p.a2();
    Polynomial w = tm3_w_polynomial(p, t, G, htilde);
    RootSet roots = poly_roots(w);
    int inside = 0;
    for (const auto& u : roots.roots) {
        double d = std::abs(std::abs(u) - 1.0);
        if (d <= 1e-10) throw std::runtime_error("contour pinch");
        if (std::abs(u) < 1.0) ++inside;
    }
    if (inside != t + 1) throw std::runtime_error("root classification failure");
    Polynomial wd = w.derivative();
    // numerators: u^t and u^{2t-1}(-u^2 + a2 u - 1)
    cdouble i1 = 0.0, i2 = 0.0;
    bool degenerate = false;
    for (const auto& u : roots.roots) {
        if (std::abs(u) >= 1.0) continue;
        cdouble d = wd.eval(u);
        if (std::abs(d) < 1e-9 * std::max(1.0, w.max_abs_coeff())) { degenerate = true; break; }
        cdouble ut = std::pow(u, t);
        i1 += ut / d;
        i2 += ut * ut / u * (-u * u + a2 * u - 1.0) / d;
    }
    if (degenerate) {
        Polynomial n1; n1.coeffs.assign(static_cast<size_t>(t + 1), 0.0);
        n1.coeffs[static_cast<size_t>(t)] = 1.0;
        Polynomial n2; n2.coeffs.assign(static_cast<size_t>(2 * t + 2), 0.0);
        n2.coeffs[static_cast<size_t>(2 * t - 1)] = -1.0;
        n2.coeffs[static_cast<size_t>(2 * t)] = a2;
        n2.coeffs[static_cast<size_t>(2 * t + 1)] = -1.0;
        i1 = unit_circle_residue_integral(n1, w);
        i2 = unit_circle_residue_integral(n2, w);
    }
    Tm3Flow out;
    out.f1 = (r * a1 * a1 * i1).real() - 1.0 / (std::norm(G) + htilde);
    out.z = a1 * i2;
    return out;
}

// Roots of the amplitude equation in htilde over [0, htilde_max]; at most two
// branches are admissible.
inline std::vector<double> tm3_h_roots(const Tm3Params& p, int t, cdouble G,
                                       double htilde_max = -1.0, int n_scan = 80,
                                       double h_hint = 0.0) {
    // F1 -> (1/r - 1)/h as h -> infinity, so its sign at infinity is fixed by r.
    // Comparing it with sign(F1(0)) gives the parity of the root count; when an
    // explicit upper bound is not supplied, the scan window doubles until the
    // root count has the right parity (the bound must be "tuned by trial and
    // error" otherwise).  h_hint widens the initial window to a known scale of
    // the upper solution branch, which parity alone cannot protect when both
    // roots lie beyond the window.
    const bool adaptive = htilde_max <= 0.0;
    if (adaptive) htilde_max = std::max(4.0 * (std::norm(G) + 1.0), 2.0 * h_hint);
    auto f1 = [&p, t, G](double h) {
        try {
            return tm3_tlce_eval(p, t, G, h).f1;
        } catch (const std::runtime_error&) {
            return tm3_tlce_eval(p, t, G, h + 1e-9 * (std::norm(G) + 1.0)).f1;
        }
    };
    std::vector<double> roots;
    const double f_at_zero = f1(0.0);
    const int tail_sign = p.r < 1.0 ? 1 : (p.r > 1.0 ? -1 : 0);
    double lo = 0.0, f_lo = f_at_zero;
    double hi = htilde_max;
    for (int pass = 0; pass < 16; ++pass) {
        // log-spaced points below the first linear step catch close root pairs
        // near h = 0, then a linear sweep covers the rest of [lo, hi]
        std::vector<double> pts;
        if (pass == 0) {
            double first = hi / n_scan;
            for (double h = first * 1e-6; h < first; h *= 2.0) pts.push_back(h);
        }
        for (int i = 1; i <= n_scan; ++i) pts.push_back(lo + (hi - lo) * i / n_scan);
        double prev_h = lo, prev_f = f_lo;
        for (double h : pts) {
            double fc = f1(h);
            if (prev_f == 0.0) {
                roots.push_back(prev_h);
            } else if (prev_f * fc < 0.0) {
                roots.push_back(bracket_root(f1, prev_h, h, 1e-12 * hi));
            }
            prev_h = h;
            prev_f = fc;
        }
        if (!adaptive || tail_sign == 0) break;
        const bool want_odd = (f_at_zero < 0.0) == (tail_sign > 0);
        if (f_at_zero != 0.0 && (roots.size() % 2 == 1) != want_odd) {
            lo = hi;
            f_lo = prev_f;
            hi *= 2.0;
            continue;
        }
        break;
    }
    if (roots.size() >= 3) throw std::runtime_error("branch anomaly");
    std::sort(roots.begin(), roots.end());
    return roots;
}

// ---------------------------------------------------------------------------
// Lag-1 borderline in closed form
// ---------------------------------------------------------------------------

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
};

namespace detail {

// map from (X, Y, U) on the external borderline to the spectral plane
inline CurvePoint tm3_external_map(const Tm3Params& p, double X, double Y, double U) {
    const double r = p.r, a1 = p.a1(), a2 = p.a2();
    const double s2 = X * X + Y * Y;
    const double q2 = (1.0 + r * a1 * X) * (1.0 + r * a1 * X) + r * r * a1 * a1 * Y * Y;
    CurvePoint out;
    out.x = 1.0 / (4.0 * s2 * q2) *
            ((2.0 / (r * a1) + 2.0 * X - r * a1 * s2) * U * U +
             X * (4.0 + a1 * (-2.0 * (1.0 - r) + r * a2 * a2) * X -
                  2.0 * r * (1.0 + r) * a1 * a1 * X * X) +
             a1 * (-2.0 * (1.0 + r) + r * a2 * a2 - 2.0 * r * (1.0 + r) * a1 * X) * Y * Y);
    out.y = 1.0 / (4.0 * Y * s2 * q2) *
            (-(X * X * (1.0 + r * a1 * X) + (3.0 + r * a1 * X) * Y * Y) * U * U +
             X * X * (1.0 + r * a1 * X) * (-4.0 + a2 * a2 - 4.0 * r * a1 * X) +
             (-4.0 + a2 * a2 + r * a1 * (-12.0 + a2 * a2) * X +
              2.0 * r * (1.0 - 3.0 * r) * a1 * a1 * X * X) * Y * Y +
             2.0 * r * (1.0 - r) * a1 * a1 * Y * Y * Y * Y);
    return out;
}

}  // namespace detail

// Real-axis crossings of the lag-1 borderline (quintic route); sorted.
inline std::vector<double> tm3_borderline_t1_crossings(const Tm3Params& p) {
    const double r = p.r, a1 = p.a1(), a2 = p.a2();
    const double d = 4.0 - a2 * a2;  // note a2 >= 2 so d <= 0
    Polynomial q;
    q.coeffs = {cdouble(d * d * d),
                cdouble(12.0 * r * a1 * d * d),
                cdouble(2.0 * r * r * a1 * a1 * d * (28.0 - a2 * a2)),
                cdouble(16.0 * r * r * r * a1 * a1 * a1 * (8.0 - a2 * a2)),
                cdouble(r * r * a1 * a1 * a1 * a1 * (a2 * a2 + 36.0 * r * r - a2 * a2 * r * r)),
                cdouble(4.0 * std::pow(r, 5) * std::pow(a1, 5))};
    RootSet roots = poly_roots(q);
    std::vector<double> xs;
    for (const auto& z : roots.roots) {
        if (std::abs(z.imag()) > 1e-7 * (1.0 + std::abs(z))) continue;
        const double X = z.real();
        if (std::abs(X) < 1e-12) continue;
        // admissibility: the designated pair of roots must lie inside the circle
        cdouble s = std::sqrt(cdouble(a2 * a2 / 4.0 - 1.0 - r * a1 * X, 0.0));
        cdouble u1m = a2 / 2.0 - s;
        cdouble u1p = a2 / 2.0 + s;
        cdouble u2m = 1.0 / std::conj(u1p);
        if (std::abs(u1m) >= 1.0 - 1e-12 || std::abs(u2m) >= 1.0 - 1e-12) continue;
        const double denom = 2.0 * r * a1 * (1.0 + r * a1 * X) * X * X;
        if (std::abs(denom) < 1e-300) continue;
        const double x = -(4.0 - a2 * a2 + 2.0 * r * a1 * X + r * (1.0 - r) * a1 * a1 * X * X) /
                         denom;
        xs.push_back(x);
    }
    std::sort(xs.begin(), xs.end());
    return xs;
}

// External borderline for t = 1, swept over the auxiliary variable X.
inline std::vector<CurvePoint> tm3_borderline_t1_external(const Tm3Params& p,
                                                          double X_lo, double X_hi,
                                                          int n_sweep = 400) {
    const double r = p.r, a1 = p.a1(), a2 = p.a2();
    std::vector<CurvePoint> curve;
    for (int i = 0; i <= n_sweep; ++i) {
        const double X = X_lo + (X_hi - X_lo) * i / n_sweep;
        if (std::abs(X) < 1e-9) continue;
        auto y2_of = [&](double U) {
            return (U * U * U * U + (4.0 - a2 * a2 + 4.0 * r * a1 * X) * U * U) /
                   (4.0 * r * r * a1 * a1);
        };
        auto resid = [&](double U) {
            const double Y2 = y2_of(U);
            if (Y2 < 0.0) return 1e8;
            const double s2 = X * X + Y2;
            return (4.0 - a2 * a2 + 4.0 * r * a1 * X + 2.0 * r * r * a1 * a1 * s2) * U * U +
                   r * a1 * a1 * a2 * s2 * U +
                   r * r * a1 * a1 *
                       ((4.0 - a2 * a2 + 4.0 * r * a1 * X) * X * X +
                        (-4.0 - a2 * a2 + 4.0 * r * a1 * X) * Y2);
        };
        const double u_max = 4.0 * (1.0 + a2) * (1.0 + r * a1 * (1.0 + std::abs(X)));
        const int n = 400;
        double pu = 1e-6, pf = resid(pu);
        for (int k = 1; k <= n; ++k) {
            double U = u_max * k / n;
            double fc = resid(U);
            if (std::isfinite(pf) && std::isfinite(fc) && pf * fc < 0.0 &&
                std::abs(pf) < 1e7 && std::abs(fc) < 1e7) {
                double root = bracket_root(resid, pu, U, 1e-12 * u_max);
                double Y2 = y2_of(root);
                if (Y2 > 0.0) {
                    double Y = std::sqrt(Y2);
                    CurvePoint cp = detail::tm3_external_map(p, X, Y, root);
                    curve.push_back(cp);
                    curve.push_back({cp.x, -cp.y});
                }
            }
            pu = U;
            pf = fc;
        }
    }
    return curve;
}

// Internal borderline for t = 1 (present for 1/(1+e^{-2/tau}) < r < 1).
inline std::vector<CurvePoint> tm3_borderline_t1_internal(const Tm3Params& p,
                                                          int n_sweep = 400) {
    const double r = p.r, a1 = p.a1(), a2 = p.a2();
    const double rc = 1.0 / (1.0 + std::exp(-2.0 / p.tau));
    std::vector<CurvePoint> curve;
    if (!(r > rc && r < 1.0)) return curve;
    const double disc = 1.0 - r * (1.0 - r) * a2 * a2;
    if (disc < 0.0) return curve;
    const double Xm = (-1.0 + 2.0 * r - std::sqrt(disc)) / (r * (1.0 - r) * a1);
    const double Xp = (-1.0 + 2.0 * r + std::sqrt(disc)) / (r * (1.0 - r) * a1);
    const double Xlo = std::min(Xm, Xp), Xhi = std::max(Xm, Xp);
    for (int i = 0; i <= n_sweep; ++i) {
        const double X = Xlo + (Xhi - Xlo) * i / n_sweep;
        const double aq = r * (1.0 - r) * a1 * a1;
        const double bq = a2 * a2 + 2.0 * (1.0 - 2.0 * r) * a1 * X +
                          2.0 * r * (1.0 - r) * a1 * a1 * X * X;
        const double cq = X * X * (-4.0 + a2 * a2 + 2.0 * (1.0 - 2.0 * r) * a1 * X +
                                   r * (1.0 - r) * a1 * a1 * X * X);
        const double d2 = bq * bq - 4.0 * aq * cq;
        if (d2 < 0.0) continue;
        for (double sgn : {-1.0, 1.0}) {
            const double Y2 = (-bq + sgn * std::sqrt(d2)) / (2.0 * aq);
            if (Y2 <= 0.0) continue;
            const double Y = std::sqrt(Y2);
            const double s2 = X * X + Y2;
            const double q2 = (1.0 + r * a1 * X) * (1.0 + r * a1 * X) + r * r * a1 * a1 * Y2;
            const double w = 2.0 * X + r * a1 * s2;
            if (std::abs(w) < 1e-300 || std::abs(X) < 1e-12) continue;
            CurvePoint cp;
            cp.x = 1.0 / (s2 * q2 * w) *
                   (-X * X * (1.0 + r * a1 * X) * (2.0 - a2 * a2 + r * a1 * X) +
                    (a2 * a2 + r * a1 * (-3.0 + a2 * a2) * X - 2.0 * r * r * a1 * a1 * X * X) * Y2 -
                    r * r * a1 * a1 * Y2 * Y2);
            cp.y = -Y / (s2 * q2 * w) *
                   (X * (2.0 + r * a1 * (1.0 + a2 * a2) * X) + r * a1 * (1.0 + a2 * a2) * Y2);
            curve.push_back(cp);
            curve.push_back({cp.x, -cp.y});
        }
    }
    return curve;
}

// ---------------------------------------------------------------------------
// Grid solver for general lag (numerical map G -> z)
// ---------------------------------------------------------------------------

// Borderline located on an auxiliary-plane lattice as the zero set of the
// amplitude residual at vanishing htilde.
inline std::vector<CurvePoint> tm3_borderline_grid(const Tm3Params& p, int t,
                                                   double lo, double hi, int n) {
    auto f1_at = [&](double X, double Y) {
        cdouble G(X, Y);
        const double tiny = 1e-9 * (std::norm(G) + 1.0);
        try {
            return tm3_tlce_eval(p, t, G, tiny);
        } catch (const std::runtime_error&) {
            return tm3_tlce_eval(p, t, G, 10.0 * tiny);
        }
    };
    const double step = (hi - lo) / n;
    std::vector<std::vector<double>> f1(static_cast<size_t>(n + 1),
                                        std::vector<double>(static_cast<size_t>(n + 1)));
    double typical = 0.0;
    long count = 0;
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            double v = f1_at(lo + step * i, lo + step * j).f1;
            f1[static_cast<size_t>(i)][static_cast<size_t>(j)] = v;
            typical += std::abs(v);
            ++count;
        }
    typical /= count;
    std::vector<CurvePoint> curve;
    auto refine = [&](double X0, double Y0, double X1, double Y1) {
        auto g = [&](double s) {
            return f1_at(X0 + s * (X1 - X0), Y0 + s * (Y1 - Y0)).f1;
        };
        double s = bracket_root(g, 0.0, 1.0, 1e-10);
        double X = X0 + s * (X1 - X0), Y = Y0 + s * (Y1 - Y0);
        Tm3Flow flow = f1_at(X, Y);
        if (std::abs(flow.f1) > 1e-3 * typical) return;
        curve.push_back({flow.z.real(), flow.z.imag()});
    };
    for (int i = 0; i <= n; ++i)
        for (int j = 0; j <= n; ++j) {
            double a = f1[static_cast<size_t>(i)][static_cast<size_t>(j)];
            if (i < n) {
                double b = f1[static_cast<size_t>(i + 1)][static_cast<size_t>(j)];
                if (a * b < 0.0)
                    refine(lo + step * i, lo + step * j, lo + step * (i + 1), lo + step * j);
            }
            if (j < n) {
                double b = f1[static_cast<size_t>(i)][static_cast<size_t>(j + 1)];
                if (a * b < 0.0)
                    refine(lo + step * i, lo + step * j, lo + step * i, lo + step * (j + 1));
            }
        }
    if (curve.empty()) throw std::runtime_error("grid bounds miss the borderline");
    return curve;
}

// ---------------------------------------------------------------------------
// Sector variances combined with AR(1) time correlations: equal-time spectrum
// ---------------------------------------------------------------------------

// Fixed point M = sum_k p_k / (z/(r s2_k M (chi + s)) - 1) with
// s^2 = 1/(r M)^2 + chi^2 - 1; the square-root branch is tracked by
// continuation from large real z. A single sector reduces to the quartic.
inline std::vector<double> tm4a_etce_density_curve(const std::vector<double>& probs,
                                                   const std::vector<double>& s2,
                                                   double r, double tau,
                                                   const std::vector<double>& xs,
                                                   double eps = 1e-6) {
    if (probs.size() != s2.size() || probs.empty())
        throw std::invalid_argument("tm4a_etce_density_curve: size mismatch");
    const double chi = 1.0 / std::tanh(1.0 / tau);
    double m1 = 0.0;
    for (size_t k = 0; k < probs.size(); ++k) m1 += probs[k] * s2[k];

    cdouble prev_s = 0.0;
    auto resid = [&](cdouble M, cdouble z, cdouble& s_used) {
        cdouble s = std::sqrt(1.0 / (r * r * M * M) + chi * chi - 1.0);
        if (std::abs(-s - prev_s) < std::abs(s - prev_s)) s = -s;
        s_used = s;
        cdouble acc = 0.0;
        for (size_t k = 0; k < probs.size(); ++k)
            acc += probs[k] / (z / (r * s2[k] * M * (chi + s)) - 1.0);
        return M - acc;
    };
    auto newton = [&](cdouble z, cdouble& M) {
        cdouble s_used;
        for (int it = 0; it < 100; ++it) {
            cdouble f = resid(M, z, s_used);
            if (std::abs(f) < 1e-13 * (1.0 + std::abs(M))) return true;
            double h = 1e-7 * std::max(1.0, std::abs(M));
            cdouble su;
            cdouble d = (resid(M + h, z, su) - resid(M - h, z, su)) / (2.0 * h);
            if (std::abs(d) < 1e-300) return false;
            cdouble step = -f / d;
            double base = std::abs(f), lam = 1.0;
            bool ok = false;
            for (int hh = 0; hh < 30; ++hh) {
                cdouble Mn = M + lam * step;
                if (std::abs(resid(Mn, z, su)) < base) { M = Mn; ok = true; break; }
                lam *= 0.5;
            }
            if (!ok) return base < 1e-9;
        }
        resid(M, z, s_used);
        prev_s = s_used;
        return true;
    };

    std::vector<size_t> order(xs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&xs](size_t a, size_t b) { return xs[a] > xs[b]; });
    std::vector<double> out(xs.size(), 0.0);
    double far = 40.0 * m1 * (1.0 + chi) * (1.0 + r);
    cdouble M = m1 / far;
    prev_s = std::sqrt(cdouble(1.0 / (r * r * std::norm(M)) + chi * chi - 1.0, 0.0));
    bool seeded = false;
    for (size_t i : order) {
        if (xs[i] <= 0.0) continue;
        std::vector<cdouble> path;
        if (!seeded) {
            for (int k = 0; k <= 60; ++k)
                path.push_back(cdouble(far + (xs[i] - far) * k / 60.0, eps));
            seeded = true;
        } else {
            path.push_back(cdouble(xs[i], eps));
        }
        bool ok = true;
        for (const cdouble& z : path) {
            if (!newton(z, M)) { ok = false; break; }
            cdouble s_used;
            resid(M, z, s_used);
            prev_s = s_used;
        }
        if (!ok) continue;
        cdouble g = (M + 1.0) / cdouble(xs[i], eps);
        out[i] = std::max(0.0, -g.imag() / M_PI);
    }
    return out;
}

struct Tm3DensityGrid {
    Grid2d grid;            // mean density over the spectral plane
    double total_mass = 0.0;
    double out_of_range_mass = 0.0;
};

// Full 2-d mean density for general lag: solve the amplitude equation on an
// auxiliary lattice, push cells forward through the map G -> z with bilinear
// refinement, and deposit the Jacobian mass.
inline Tm3DensityGrid tm3_density_grid(const Tm3Params& p, int t,
                                       double aux_lo, double aux_hi, int n_lattice,
                                       int refine,
                                       double x_lo, double x_hi, double y_lo, double y_hi,
                                       int nx, int ny) {
    const int n = n_lattice - 1;  // cells per side
    const double step = (aux_hi - aux_lo) / n;
    struct Node {
        int nroots = 0;
        bool has[2] = {false, false};
        double h[2] = {0.0, 0.0};
        cdouble z[2];
    };
    std::vector<Node> nodes(static_cast<size_t>(n_lattice) * n_lattice);
    auto node_at = [&nodes, n_lattice](int i, int j) -> Node& {
        return nodes[static_cast<size_t>(j) * n_lattice + i];
    };
    auto finite = [](cdouble z) {
        return std::isfinite(z.real()) && std::isfinite(z.imag());
    };
    auto f1_at = [&p, t](cdouble G, double h) {
        try {
            return tm3_tlce_eval(p, t, G, h).f1;
        } catch (const std::runtime_error&) {
            return tm3_tlce_eval(p, t, G, h + 1e-9 * (std::norm(G) + 1.0)).f1;
        }
    };
    auto z_of = [&p, t](cdouble G, double h) {
        try {
            return tm3_tlce_eval(p, t, G, h).z;
        } catch (const std::runtime_error&) {
            return tm3_tlce_eval(p, t, G, h + 1e-9 * (std::norm(G) + 1.0)).z;
        }
    };
    // quick sign-scan root search over [0, cap], used while locating branch
    // folds along cell edges (log spacing near 0 catches close pairs)
    auto roots_upto = [&f1_at](cdouble G, double cap, bool refine_roots, int nsc = 48) {
        std::vector<double> rs, pts;
        const double first = cap / nsc;
        for (double h = first * 1e-5; h < first; h *= 2.0) pts.push_back(h);
        for (int k = 1; k <= nsc; ++k) pts.push_back(cap * k / nsc);
        double ph = 0.0, pf = f1_at(G, 0.0);
        for (double h : pts) {
            double f = f1_at(G, h);
            if (pf == 0.0) {
                rs.push_back(ph);
            } else if (pf * f < 0.0) {
                if (refine_roots)
                    rs.push_back(bracket_root([&f1_at, G](double x) { return f1_at(G, x); },
                                              ph, h, 1e-12 * cap));
                else
                    rs.push_back(0.5 * (ph + h));
            }
            ph = h;
            pf = f;
        }
        return rs;
    };
    // The upper solution branch sits at a roughly G-independent value of
    // |G|^2 + h; probe it once near G = 0 so every node scans far enough.
    double h_hint = 0.0;
    {
        std::vector<double> ref = tm3_h_roots(p, t, cdouble(1e-2, 1e-2));
        if (!ref.empty()) h_hint = ref.back();
    }
    for (int i = 0; i < n_lattice; ++i) {
        for (int j = 0; j < n_lattice; ++j) {
            cdouble G(aux_lo + step * i, aux_lo + step * j);
            Node& nd = node_at(i, j);
            std::vector<double> hs = tm3_h_roots(p, t, G, -1.0, 80, h_hint);
            nd.nroots = static_cast<int>(hs.size());
            // two roots -> lower branch in slot 0, upper in slot 1; a single
            // root continues the upper branch (the lower one vanishes through
            // h = 0 at the borderline), so it goes into slot 1
            if (hs.size() == 2) {
                nd.h[0] = hs[0];
                nd.h[1] = hs[1];
                nd.z[0] = tm3_tlce_eval(p, t, G, hs[0]).z;
                nd.z[1] = tm3_tlce_eval(p, t, G, hs[1]).z;
                nd.has[0] = finite(nd.z[0]);
                nd.has[1] = finite(nd.z[1]);
            } else if (hs.size() == 1) {
                nd.h[1] = hs[0];
                nd.z[1] = tm3_tlce_eval(p, t, G, hs[0]).z;
                nd.has[1] = finite(nd.z[1]);
            }
        }
    }
    Tm3DensityGrid out;
    out.grid.x_lo = x_lo; out.grid.x_hi = x_hi;
    out.grid.y_lo = y_lo; out.grid.y_hi = y_hi;
    out.grid.nx = nx; out.grid.ny = ny;
    out.grid.density.assign(static_cast<size_t>(nx) * ny, 0.0);
    const double wx = (x_hi - x_lo) / nx, wy = (y_hi - y_lo) / ny;
    const double sub = 1.0 / refine;
    auto deposit = [&out, x_lo, x_hi, y_lo, y_hi, wx, wy, nx, ny](double mass, cdouble z) {
        out.total_mass += mass;
        if (z.real() < x_lo || z.real() >= x_hi || z.imag() < y_lo || z.imag() >= y_hi) {
            out.out_of_range_mass += mass;
            return;
        }
        int ix = std::min(static_cast<int>((z.real() - x_lo) / wx), nx - 1);
        int iy = std::min(static_cast<int>((z.imag() - y_lo) / wy), ny - 1);
        out.grid.at(ix, iy) += mass;
    };
    // Affine push-forward of a triangle in the G-plane; the mass within a
    // triangle is uniform, so each of the refine^2 congruent sub-triangles
    // deposits an equal share at its centroid image.
    auto tri_deposit = [&deposit, refine, &finite](double au, double av, cdouble za,
                                                   double bu, double bv, cdouble zb,
                                                   double cu, double cv, cdouble zc) {
        if (!finite(za) || !finite(zb) || !finite(zc)) return;
        const double e1u = bu - au, e1v = bv - av, e2u = cu - au, e2v = cv - av;
        const double det_g = e1u * e2v - e2u * e1v;
        if (std::abs(det_g) < 1e-300) return;
        const cdouble d1 = zb - za, d2 = zc - za;
        const double dXx = (d1.real() * e2v - d2.real() * e1v) / det_g;
        const double dYx = (-d1.real() * e2u + d2.real() * e1u) / det_g;
        const double dXy = (d1.imag() * e2v - d2.imag() * e1v) / det_g;
        const double dYy = (-d1.imag() * e2u + d2.imag() * e1u) / det_g;
        const double det = dXx * dYy - dYx * dXy;
        if (std::abs(det) < 1e-300) return;
        const double rho = (dYy - dXx) / (2.0 * M_PI * det);
        if (!(rho > 0.0)) return;  // clipped rim, clamp silently
        const double total = rho * std::abs(det) * 0.5 * std::abs(det_g);
        if (!std::isfinite(total) || total <= 0.0) return;
        const double each = total / (refine * refine);
        for (int a = 0; a < refine; ++a) {
            for (int c = 0; c < refine - a; ++c) {
                double l1 = (a + 1.0 / 3.0) / refine, l2 = (c + 1.0 / 3.0) / refine;
                deposit(each, za + l1 * d1 + l2 * d2);
                if (a + c < refine - 1) {
                    l1 = (a + 2.0 / 3.0) / refine;
                    l2 = (c + 2.0 / 3.0) / refine;
                    deposit(each, za + l1 * d1 + l2 * d2);
                }
            }
        }
    };
    // Crossing caches (edges are shared between cells and branches).  An edge
    // is keyed by its two node ids; a fold crossing is common to both
    // branches, a borderline crossing belongs to the lower branch only.
    struct FoldCross {
        double s = 0.5;
        bool ok[2] = {false, false};
        cdouble z[2];
        double h[2] = {0.0, 0.0};
    };
    struct BorderCross {
        double s = 0.5;
        cdouble z;
    };
    std::unordered_map<long long, FoldCross> fold_cache;
    std::unordered_map<long long, BorderCross> border_cache;
    auto edge_key = [n_lattice](int ia, int ja, int ib, int jb) {
        long long a = static_cast<long long>(ja) * n_lattice + ia;
        long long b = static_cast<long long>(jb) * n_lattice + ib;
        return (std::min(a, b) << 21) | std::max(a, b);
    };
    auto g_at = [aux_lo, step](int i, int j) {
        return cdouble(aux_lo + step * i, aux_lo + step * j);
    };
    // Fold along the edge from a node carrying solutions toward one with
    // none: bisect on solution existence, then evaluate both branches just
    // inside the fold (where they have merged).
    auto fold_cross = [&](int ip, int jp, int ia, int ja) -> FoldCross& {
        const long long key = edge_key(ip, jp, ia, ja);
        auto it = fold_cache.find(key);
        if (it != fold_cache.end()) return it->second;
        const Node& in_node = node_at(ip, jp);
        const cdouble g_in = g_at(ip, jp), g_out = g_at(ia, ja);
        const double cap = 2.0 * std::max(in_node.h[1], h_hint) + 1.0;
        double lo = 0.0, hi = 1.0;
        for (int it2 = 0; it2 < 10; ++it2) {
            const double mid = 0.5 * (lo + hi);
            const cdouble g = g_in + mid * (g_out - g_in);
            (roots_upto(g, cap, false).empty() ? hi : lo) = mid;
        }
        FoldCross fc;
        fc.s = lo;
        const cdouble g = g_in + lo * (g_out - g_in);
        std::vector<double> rs = roots_upto(g, cap, true);
        if (!rs.empty()) {
            fc.ok[0] = fc.ok[1] = true;
            fc.h[0] = rs.front();
            fc.h[1] = rs.back();
            fc.z[0] = z_of(g, rs.front());
            fc.z[1] = z_of(g, rs.back());
        }
        return fold_cache.emplace(key, fc).first->second;
    };
    // Borderline crossing (lower branch ends through h = 0): bisect
    // F1(G, 0) = 0 between the two-solution side (positive) and the
    // single-solution core (negative); the image is z = F2(G, 0).
    auto border_cross = [&](int ip, int jp, int ia, int ja) -> BorderCross& {
        const long long key = edge_key(ip, jp, ia, ja);
        auto it = border_cache.find(key);
        if (it != border_cache.end()) return it->second;
        const cdouble g_in = g_at(ip, jp), g_out = g_at(ia, ja);
        double lo = 0.0, hi = 1.0;
        const double f_in = f1_at(g_in, 0.0);
        if (f_in * f1_at(g_out, 0.0) < 0.0) {
            for (int it2 = 0; it2 < 40; ++it2) {
                const double mid = 0.5 * (lo + hi);
                const cdouble g = g_in + mid * (g_out - g_in);
                (f1_at(g, 0.0) * f_in > 0.0 ? lo : hi) = mid;
            }
        } else {
            lo = hi = 0.5;
        }
        BorderCross bc;
        bc.s = 0.5 * (lo + hi);
        bc.z = z_of(g_in + bc.s * (g_out - g_in), 0.0);
        return border_cache.emplace(key, bc).first->second;
    };
    // corner traversal order around the cell perimeter
    const int coff[4][2] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            for (int b = 0; b < 2; ++b) {
                const Node& n00 = node_at(i, j);
                const Node& n10 = node_at(i + 1, j);
                const Node& n01 = node_at(i, j + 1);
                const Node& n11 = node_at(i + 1, j + 1);
                const int have = n00.has[b] + n10.has[b] + n01.has[b] + n11.has[b];
                if (have == 0) continue;
                if (have == 4) {
                    const cdouble z00 = n00.z[b], z10 = n10.z[b], z01 = n01.z[b],
                                  z11 = n11.z[b];
                    for (int si = 0; si < refine; ++si) {
                        for (int sj = 0; sj < refine; ++sj) {
                            const double xi = (si + 0.5) * sub, eta = (sj + 0.5) * sub;
                            const cdouble dxi = (z10 - z00) * (1.0 - eta) + (z11 - z01) * eta;
                            const cdouble deta = (z01 - z00) * (1.0 - xi) + (z11 - z10) * xi;
                            const double dXx = dxi.real() / step, dXy = dxi.imag() / step;
                            const double dYx = deta.real() / step, dYy = deta.imag() / step;
                            const double det = dXx * dYy - dYx * dXy;
                            if (std::abs(det) < 1e-300) continue;
                            double rho = (dYy - dXx) / (2.0 * M_PI * det);
                            // interpolation across a branch fold can leave a
                            // slightly negative density in a sliver of a cell;
                            // clamp it, but reject anything carrying real mass
                            if (rho < 0.0 &&
                                -rho * std::abs(det) * step * step * sub * sub > 1e-3)
                                throw std::runtime_error("negative density exceeds tolerance");
                            rho = std::max(0.0, rho);
                            const double mass = rho * std::abs(det) * step * step * sub * sub;
                            if (!(mass > 0.0) || !std::isfinite(mass)) continue;
                            const cdouble z = z00 * (1.0 - xi) * (1.0 - eta) +
                                              z10 * xi * (1.0 - eta) +
                                              z01 * (1.0 - xi) * eta + z11 * xi * eta;
                            deposit(mass, z);
                        }
                    }
                    continue;
                }
                // rim cell: clip the covered region to a polygon whose extra
                // vertices sit on the solution boundary (borderline or fold)
                struct PolyVtx {
                    double u, v;
                    cdouble z;
                    int kind;  // 0 corner, 1 borderline, 2 fold
                    double h;
                };
                std::vector<PolyVtx> poly;
                for (int k = 0; k < 4; ++k) {
                    const int k2 = (k + 1) % 4;
                    const int ia = i + coff[k][0], ja = j + coff[k][1];
                    const int ib = i + coff[k2][0], jb = j + coff[k2][1];
                    const Node& na = node_at(ia, ja);
                    const Node& nb = node_at(ib, jb);
                    if (na.has[b])
                        poly.push_back({aux_lo + step * ia, aux_lo + step * ja,
                                        na.z[b], 0, na.h[b]});
                    if (na.has[b] == nb.has[b]) continue;
                    const int ip = na.has[b] ? ia : ib, jp = na.has[b] ? ja : jb;
                    const int iq = na.has[b] ? ib : ia, jq = na.has[b] ? jb : ja;
                    const Node& absent = node_at(iq, jq);
                    cdouble gc, zc;
                    bool ok = true;
                    int kind = 2;
                    double hc = 0.0;
                    if (b == 0 && absent.has[1]) {
                        BorderCross& bc = border_cross(ip, jp, iq, jq);
                        gc = g_at(ip, jp) + bc.s * (g_at(iq, jq) - g_at(ip, jp));
                        zc = bc.z;
                        kind = 1;
                    } else {
                        FoldCross& fc = fold_cross(ip, jp, iq, jq);
                        gc = g_at(ip, jp) + fc.s * (g_at(iq, jq) - g_at(ip, jp));
                        ok = fc.ok[b];
                        zc = fc.z[b];
                        hc = fc.h[b];
                    }
                    if (!ok || !finite(zc)) continue;
                    poly.push_back({gc.real(), gc.imag(), zc, kind, hc});
                }
                // Boundary chords between two crossing vertices carry the
                // whole discretization error of the cell (interior edge terms
                // cancel between neighbors), so trace intermediate points of
                // the true boundary curve along each such chord.
                std::vector<PolyVtx> rp;
                for (size_t m = 0; m < poly.size(); ++m) {
                    const PolyVtx& va = poly[m];
                    const PolyVtx& vb = poly[(m + 1) % poly.size()];
                    rp.push_back(va);
                    if (va.kind == 0 || va.kind != vb.kind) continue;
                    const double du = vb.u - va.u, dv = vb.v - va.v;
                    if (du * du + dv * dv < 1e-300) continue;
                    // search window: half a chord length to either side
                    const double nu2 = -0.5 * dv, nv2 = 0.5 * du;
                    for (int k = 1; k < refine; ++k) {
                        const double tc = static_cast<double>(k) / refine;
                        const double cu = va.u + tc * du, cv = va.v + tc * dv;
                        if (va.kind == 1) {
                            auto fb = [&](double s) {
                                return f1_at(cdouble(cu + s * nu2, cv + s * nv2), 0.0);
                            };
                            const double flo = fb(-1.0);
                            if (flo * fb(1.0) >= 0.0) continue;
                            double lo = -1.0, hi = 1.0;
                            for (int it2 = 0; it2 < 25; ++it2) {
                                const double mid = 0.5 * (lo + hi);
                                (fb(mid) * flo > 0.0 ? lo : hi) = mid;
                            }
                            const double s = 0.5 * (lo + hi);
                            const cdouble g(cu + s * nu2, cv + s * nv2);
                            const cdouble zz = z_of(g, 0.0);
                            if (finite(zz))
                                rp.push_back({g.real(), g.imag(), zz, 1, 0.0});
                        } else {
                            const double cap =
                                2.0 * std::max({va.h, vb.h, h_hint}) + 1.0;
                            auto exists = [&](double s) {
                                const cdouble g(cu + s * nu2, cv + s * nv2);
                                return !roots_upto(g, cap, false, 24).empty();
                            };
                            const bool elo = exists(-1.0);
                            if (elo == exists(1.0)) continue;
                            double lo = -1.0, hi = 1.0;
                            for (int it2 = 0; it2 < 12; ++it2) {
                                const double mid = 0.5 * (lo + hi);
                                (exists(mid) == elo ? lo : hi) = mid;
                            }
                            const double s = elo ? lo : hi;  // side with roots
                            const cdouble g(cu + s * nu2, cv + s * nv2);
                            const auto rs = roots_upto(g, cap, true);
                            if (rs.empty()) continue;
                            const double hr = (b == 0) ? rs.front() : rs.back();
                            const cdouble zz = z_of(g, hr);
                            if (finite(zz))
                                rp.push_back({g.real(), g.imag(), zz, 2, hr});
                        }
                    }
                }
                for (size_t m = 1; m + 1 < rp.size(); ++m)
                    tri_deposit(rp[0].u, rp[0].v, rp[0].z, rp[m].u, rp[m].v, rp[m].z,
                                rp[m + 1].u, rp[m + 1].v, rp[m + 1].z);
            }
        }
    }
    for (double& d : out.grid.density) d /= wx * wy;
    return out;
}

}  // namespace rmt
