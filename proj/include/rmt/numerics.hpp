#pragma once
// Numeric kernel: polynomial roots, unit-circle residue integrals,
// scalar/2D nonlinear solvers, special functions.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rmt {

using cdouble = std::complex<double>;

// Polynomial with coefficients in ascending degree order.
struct Polynomial {
    std::vector<cdouble> coeffs;

    Polynomial() = default;
    explicit Polynomial(std::vector<cdouble> c) : coeffs(std::move(c)) {}
    Polynomial(std::initializer_list<cdouble> c) : coeffs(c) {}

    // Drop (numerically) zero leading coefficients.
    void trim(double rel_tol = 0.0) {
        double scale = 0.0;
        for (const auto& c : coeffs) scale = std::max(scale, std::abs(c));
        const double thr = scale * rel_tol;
        while (coeffs.size() > 1 && std::abs(coeffs.back()) <= thr) coeffs.pop_back();
    }

    int degree() const { return static_cast<int>(coeffs.size()) - 1; }

    cdouble eval(cdouble z) const {
        cdouble v = 0.0;
        for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) v = v * z + *it;
        return v;
    }

    Polynomial derivative() const {
        Polynomial d;
        if (coeffs.size() <= 1) {
            d.coeffs = {0.0};
            return d;
        }
        d.coeffs.resize(coeffs.size() - 1);
        for (size_t k = 1; k < coeffs.size(); ++k)
            d.coeffs[k - 1] = coeffs[k] * static_cast<double>(k);
        return d;
    }

    double max_abs_coeff() const {
        double m = 0.0;
        for (const auto& c : coeffs) m = std::max(m, std::abs(c));
        return m;
    }
};

struct RootSet {
    std::vector<cdouble> roots;  // with multiplicity (repeated entries)
};

namespace detail {

// A few Newton polish steps; keep the better iterate.
inline cdouble polish_root(const Polynomial& p, const Polynomial& dp, cdouble z) {
    double best_res = std::abs(p.eval(z));
    cdouble best = z;
    for (int it = 0; it < 6; ++it) {
        const cdouble d = dp.eval(z);
        if (std::abs(d) < 1e-300) break;
        z -= p.eval(z) / d;
        const double res = std::abs(p.eval(z));
        if (res < best_res) {
            best_res = res;
            best = z;
        }
    }
    return best;
}

}  // namespace detail

// All complex roots (with multiplicity) via the companion matrix, Newton-polished.
inline RootSet poly_roots(Polynomial p) {
    p.trim(1e-14);
    if (p.coeffs.empty() || (p.coeffs.size() == 1 && p.coeffs[0] == cdouble(0.0)))
        throw std::invalid_argument("zero polynomial");
    const int n = p.degree();
    RootSet rs;
    if (n == 0) return rs;
    if (n == 1) {
        rs.roots.push_back(-p.coeffs[0] / p.coeffs[1]);
        return rs;
    }
    if (n == 2) {
        const cdouble a = p.coeffs[2], b = p.coeffs[1], c = p.coeffs[0];
        const cdouble s = std::sqrt(b * b - 4.0 * a * c);
        // Citardauq split avoids cancellation.
        const cdouble q = (std::real(std::conj(b) * s) >= 0.0) ? -0.5 * (b + s) : -0.5 * (b - s);
        cdouble r1 = (std::abs(q) > 0.0) ? q / a : cdouble(0.0);
        cdouble r2 = (std::abs(q) > 0.0) ? c / q : -b / a - r1;
        rs.roots = {r1, r2};
        return rs;
    }
    Eigen::MatrixXcd comp = Eigen::MatrixXcd::Zero(n, n);
    for (int i = 1; i < n; ++i) comp(i, i - 1) = 1.0;
    for (int i = 0; i < n; ++i) comp(i, n - 1) = -p.coeffs[i] / p.coeffs[n];
    Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(comp, /*computeEigenvectors=*/false);
    const Polynomial dp = p.derivative();
    rs.roots.reserve(n);
    for (int i = 0; i < n; ++i) rs.roots.push_back(detail::polish_root(p, dp, es.eigenvalues()(i)));
    return rs;
}

// (1/2pi i) oint_{C(0,1)} numer/denom du as the sum of residues at the poles
// strictly inside the unit circle.  Repeated interior poles are handled by a
// small contour around the cluster; poles on the circle are rejected.
inline cdouble unit_circle_residue_integral(const Polynomial& numer, Polynomial denom) {
    denom.trim(1e-14);
    const RootSet rs = poly_roots(denom);
    const auto& roots = rs.roots;
    const int n = static_cast<int>(roots.size());
    for (const auto& r : roots) {
        const double a = std::abs(r);
        if (a >= 1.0 - 1e-10 && a <= 1.0 + 1e-10) throw std::runtime_error("contour pinch");
    }
    // Cluster interior roots that coincide numerically.
    std::vector<int> cluster(n, -1);
    std::vector<std::vector<int>> clusters;
    for (int i = 0; i < n; ++i) {
        if (std::abs(roots[i]) >= 1.0) continue;
        bool placed = false;
        for (auto& cl : clusters) {
            if (std::abs(roots[cl.front()] - roots[i]) < 1e-7 * (1.0 + std::abs(roots[i]))) {
                cl.push_back(i);
                placed = true;
                break;
            }
        }
        if (!placed) clusters.push_back({i});
    }
    const cdouble lead = denom.coeffs.back();
    auto denom_from_roots = [&](cdouble u) {
        cdouble v = lead;
        for (const auto& r : roots) v *= (u - r);
        return v;
    };
    cdouble total = 0.0;
    const Polynomial ddenom = denom.derivative();
    for (const auto& cl : clusters) {
        if (cl.size() == 1) {
            const cdouble r = roots[cl[0]];
            total += numer.eval(r) / ddenom.eval(r);
            continue;
        }
        // Repeated (or tightly clustered) pole: integrate around the cluster.
        cdouble center = 0.0;
        for (int idx : cl) center += roots[idx];
        center /= static_cast<double>(cl.size());
        double diam = 0.0;
        for (int idx : cl) diam = std::max(diam, std::abs(roots[idx] - center));
        double rad = std::max(1e-6, 10.0 * diam);
        double clearance = 1.0 - std::abs(center);  // distance to the unit circle
        for (int i = 0; i < n; ++i) {
            bool in_cluster = std::find(cl.begin(), cl.end(), i) != cl.end();
            if (!in_cluster) clearance = std::min(clearance, std::abs(roots[i] - center));
        }
        rad = std::min(rad, 0.45 * clearance);
        const int m = 256;
        cdouble acc = 0.0;
        for (int k = 0; k < m; ++k) {
            const double th = 2.0 * M_PI * k / m;
            const cdouble u = center + rad * cdouble(std::cos(th), std::sin(th));
            acc += numer.eval(u) / denom_from_roots(u) * (u - center);
        }
        total += acc / static_cast<double>(m);
    }
    return total;
}

// Unique real root of t^3 + p t + q = 0 when the discriminant -4p^3 - 27q^2 < 0.
inline double solve_depressed_cubic_unique_real(double p, double q) {
    const double disc = -4.0 * p * p * p - 27.0 * q * q;
    if (!(disc < 0.0)) throw std::domain_error("multiple real roots");
    const double s = std::sqrt(q * q / 4.0 + p * p * p / 27.0);
    double t = std::cbrt(-q / 2.0 + s) + std::cbrt(-q / 2.0 - s);
    for (int it = 0; it < 3; ++it) {  // polish
        const double f = t * t * t + p * t + q;
        const double df = 3.0 * t * t + p;
        if (df == 0.0) break;
        t -= f / df;
    }
    return t;
}

// Damped 2D Newton with a forward-difference Jacobian.  Deterministic.
inline std::pair<double, double> solve_real_pair(
    const std::function<std::pair<double, double>(double, double)>& f,
    std::pair<double, double> start, double tol) {
    double u = start.first, v = start.second;
    auto norm = [](const std::pair<double, double>& r) {
        return std::max(std::abs(r.first), std::abs(r.second));
    };
    std::pair<double, double> F = f(u, v);
    for (int iter = 0; iter < 200; ++iter) {
        if (norm(F) < tol) return {u, v};
        const double hu = 1e-7 * std::max(1.0, std::abs(u));
        const double hv = 1e-7 * std::max(1.0, std::abs(v));
        const auto Fu = f(u + hu, v), Fv = f(u, v + hv);
        const double j11 = (Fu.first - F.first) / hu, j12 = (Fv.first - F.first) / hv;
        const double j21 = (Fu.second - F.second) / hu, j22 = (Fv.second - F.second) / hv;
        const double det = j11 * j22 - j12 * j21;
        if (!std::isfinite(det) || std::abs(det) < 1e-300) throw std::runtime_error("diverged");
        double du = (-F.first * j22 + F.second * j12) / det;
        double dv = (-j11 * F.second + j21 * F.first) / det;
        double step = 1.0;
        bool improved = false;
        for (int h = 0; h <= 30; ++h) {
            const auto Fn = f(u + step * du, v + step * dv);
            if (norm(Fn) < norm(F)) {
                u += step * du;
                v += step * dv;
                F = Fn;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if (!improved) throw std::runtime_error("diverged");
    }
    if (norm(F) < tol) return {u, v};
    throw std::runtime_error("diverged");
}

// Bracketed root by bisection with secant polish.
inline double bracket_root(const std::function<double(double)>& f, double a, double b,
                           double tol) {
    double fa = f(a), fb = f(b);
    if (fa == 0.0) return a;
    if (fb == 0.0) return b;
    if (fa * fb > 0.0) throw std::invalid_argument("no bracket");
    for (int it = 0; it < 400 && (b - a) > tol * 0.5; ++it) {
        // Secant proposal, clipped into the bracket; fall back to midpoint.
        double m = 0.5 * (a + b);
        if (std::abs(fb - fa) > 1e-300) {
            const double s = (a * fb - b * fa) / (fb - fa);
            if (s > a + 0.01 * (b - a) && s < b - 0.01 * (b - a)) m = s;
        }
        const double fm = f(m);
        if (fm == 0.0) return m;
        if (fa * fm < 0.0) {
            b = m;
            fb = fm;
        } else {
            a = m;
            fa = fm;
        }
    }
    return (std::abs(fa) < std::abs(fb)) ? a : b;
}

inline double special_erfc(double x) {
    if (x > 27.0) return 0.0;
    if (x < -27.0) return 2.0;
    return std::erfc(x);
}

inline double special_log_gamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("log_gamma requires x > 0");
    return std::lgamma(x);
}

}  // namespace rmt
